// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef HAWAII_TESTS_HELPERS_HPP
#define HAWAII_TESTS_HELPERS_HPP

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hawaii/autograd.hpp"
#include "hawaii/nn.hpp"
#include "hawaii/ops.hpp"
#include "hawaii/run.hpp"
#include "hawaii/tensor.hpp"

namespace hawaii::test {

inline bool bit_identical(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

inline Tensor randn(Rng& rng, Shape shape, double stddev = 1.0, bool requires_grad = true) {
    return rng.normal_tensor(std::move(shape), stddev, requires_grad);
}

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Worst relative error between taped and central-difference gradients of
/// sum(w ⊙ f(inputs)) over every input that requires grad, for a fixed
/// random weighting w of the output.
inline double max_grad_error(const TensorFn& f, std::vector<Tensor> inputs, std::uint64_t seed = 99) {
    const Tensor probe = f(inputs);
    Rng rng(seed);
    const Tensor w = rng.normal_tensor(probe.shape(), 1.0);
    const auto wd = w.to_vector();
    for (auto& x : inputs) x.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(sum(mul(f(inputs), w)));
    }
    auto weighted = [&](const Tensor&) {
        const auto out = f(inputs).to_vector();
        double total = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) total += out[i] * wd[i];
        return total;
    };
    double worst = 0.0;
    for (auto& x : inputs) {
        if (!x.requires_grad()) continue;
        const auto analytic = x.grad();
        const auto numeric = finite_difference_grad(weighted, x, 1e-5).to_vector();
        for (std::size_t i = 0; i < analytic.size(); ++i)
            worst = std::max(worst, relative_error(analytic[i], numeric[i]));
    }
    return worst;
}

/// Fresh empty directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("hawaii_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace hawaii::test

#endif  // HAWAII_TESTS_HELPERS_HPP
