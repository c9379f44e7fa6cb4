// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Invariant suite shared by `hawaii selftest`, the unit tests and the
// acceptance runner, plus the scalar reference implementations it compares
// against.

#ifndef HAWAII_SELFTEST_HPP
#define HAWAII_SELFTEST_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace hawaii {

struct PropertyResult {
    std::string name;
    bool passed = false;
    std::string detail;  // empty on success
};

/// "PASS name" or "FAIL name: detail".
std::string format_result(const PropertyResult& result);

/// Token importance computed with explicit loops over row-major inputs
/// teacher [m×d] and instr [l×d]. Written independently of the tensor path.
std::vector<double> token_importance_reference(const std::vector<double>& teacher, std::size_t m,
                                               const std::vector<double>& instr, std::size_t l, std::size_t d);

/// Scalar adaptive-moment reference: runs `grads.size()` updates of a single
/// parameter starting at `x0` and returns every intermediate value.
std::vector<double> adam_reference(double x0, const std::vector<double>& grads, double lr, double beta1,
                                   double beta2, double epsilon);

PropertyResult check_zero_init_identity(std::size_t images = 100);
PropertyResult check_score_normalization(std::size_t trials = 1000);
PropertyResult check_importance_oracle(std::size_t trials = 1000);
PropertyResult check_unshuffle_roundtrip();
PropertyResult check_balance_endpoints();
PropertyResult check_adam_reference();
PropertyResult check_teacher_only_isolation();
PropertyResult check_minimal_gradcheck();

/// Every check above, in a fixed order.
std::vector<PropertyResult> run_selftest();

}  // namespace hawaii

#endif  // HAWAII_SELFTEST_HPP
