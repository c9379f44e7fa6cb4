// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hawaii {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) out << "x";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

double* detail::TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
}

namespace {

void validate_shape(const Shape& shape) {
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
    }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    validate_shape(shape);
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->data.assign(shape_numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("shape " + shape_to_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    Tensor t(std::move(impl));
    check_finite(t, "tensor construction");
    return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
    const std::size_t n = rows.size();
    const std::size_t k = n == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(n * k);
    for (const auto& row : rows) {
        if (row.size() != k) throw ShapeError("ragged matrix literal");
        values.insert(values.end(), row.begin(), row.end());
    }
    return from({n, k}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
    if (!impl_) throw Error("use of undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("expected rank-2 tensor, got " + shape_to_string(shape()));
    return impl_->shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("expected rank-2 tensor, got " + shape_to_string(shape()));
    return impl_->shape[1];
}

std::span<const double> Tensor::data() const {
    if (!impl_) throw Error("use of undefined tensor");
    return impl_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!impl_) throw Error("use of undefined tensor");
    return impl_->data;
}

std::vector<double> Tensor::to_vector() const {
    auto d = data();
    return {d.begin(), d.end()};
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
    return impl_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    const auto c = cols();
    if (i >= rows() || j >= c) throw ShapeError("index out of range");
    return impl_->data[i * c + j];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (!impl_) throw Error("use of undefined tensor");
    impl_->requires_grad = value;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::vector<double> Tensor::grad() const {
    if (!impl_) throw Error("use of undefined tensor");
    if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
    return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (!impl_) throw Error("use of undefined tensor");
    impl_->grad_buffer();
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = shape();
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
    Tensor t = detach();
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
}

void check_finite(const Tensor& t, const std::string& what) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) throw NonFiniteError("non-finite value produced by " + what);
    }
}

}  // namespace hawaii
