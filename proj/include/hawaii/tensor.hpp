// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with optional gradient storage.
//
// A Tensor is a cheap shared handle: copies alias the same storage, the way
// parameters are shared between a module and the optimizer. Use clone() for
// an independent copy.

#ifndef HAWAII_TENSOR_HPP
#define HAWAII_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hawaii {

using Shape = std::vector<std::size_t>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

class AutogradError : public Error {
public:
    using Error::Error;
};

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first written
    bool requires_grad = false;
    // Identifies the tape and node that produced this tensor; 0 for leaves.
    std::uint64_t tape_id = 0;
    std::size_t node_index = 0;

    double* grad_buffer();
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    /// Rank-2 literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    /// Extent of a rank-2 tensor along axis 0 / axis 1.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const;
    /// Direct write access; intended for optimizers, initializers and
    /// finite-difference probes. Mutating a tensor that is live on a tape
    /// invalidates the recorded backward pass.
    std::span<double> mutable_data();
    std::vector<double> to_vector() const;

    double item() const;
    double at(std::size_t i, std::size_t j) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    bool has_grad() const;
    /// Gradient values; all zeros when nothing has been accumulated yet.
    std::vector<double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Same values, no gradient tracking, independent storage.
    Tensor detach() const;
    /// Independent copy preserving requires_grad (but not the gradient).
    Tensor clone() const;

    detail::TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& shared_impl() const { return impl_; }

    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Throws NonFiniteError naming `what` if any element is NaN or infinite.
void check_finite(const Tensor& t, const std::string& what);

}  // namespace hawaii

#endif  // HAWAII_TENSOR_HPP
