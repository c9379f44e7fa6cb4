// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Frozen synthetic teachers and the feature-alignment path that turns their
// heterogeneous outputs into student-shaped distillation targets.

#ifndef HAWAII_TEACHER_HPP
#define HAWAII_TEACHER_HPP

#include <cstdint>
#include <vector>

#include "hawaii/nn.hpp"
#include "hawaii/tensor.hpp"

namespace hawaii {

struct TeacherSpec {
    std::size_t grid = 0;       // g: teacher emits g×g tokens
    std::size_t channels = 0;   // C
    std::size_t unshuffle = 1;  // r, with (g/r)² == m
    std::uint64_t seed = 0;

    /// Width of one token after unshuffling, C·r².
    std::size_t aligned_width() const { return channels * unshuffle * unshuffle; }
    /// Throws naming `index` unless r | g and (g/r)² == tokens.
    void validate(std::size_t tokens, std::size_t index) const;
};

/// Seeded random per-token MLP followed by a fixed token-mixing matrix.
/// Holds no trainable state; identical (spec, image geometry) pairs build
/// bit-identical teachers.
class FrozenTeacher {
public:
    FrozenTeacher(const TeacherSpec& spec, std::size_t image_side, std::size_t image_channels);

    const TeacherSpec& spec() const { return spec_; }
    /// [S×S×C_img] image -> [g×g×C] feature map, never tracked.
    Tensor forward(const Tensor& image) const;

private:
    TeacherSpec spec_;
    std::size_t image_side_;
    std::size_t image_channels_;
    Tensor w1_, b1_, w2_, b2_;
    Tensor mixing_;  // [g²×g²]
};

Tensor teacher_forward(const FrozenTeacher& teacher, const Tensor& image);

/// Î^T_i = p(raw); raw is [m×W] with W == p.in_width().
Tensor project_teacher(const ProjectionMLP& p, const Tensor& raw);

/// I^T_cg = f_cg(concat of unshuffled features along channels).
Tensor summarize(const ProjectionMLP& f_cg, const std::vector<Tensor>& unshuffled);

struct AlignedTeacherFeatures {
    std::vector<Tensor> raw;        // unshuffled I^T_i, [m×C_i·r_i²]
    std::vector<Tensor> projected;  // Î^T_i, [m×D]
    Tensor summarized;              // I^T_cg, [m×D]
};

class TeacherBank {
public:
    TeacherBank(const std::vector<TeacherSpec>& specs, std::size_t tokens, std::size_t image_side,
                std::size_t image_channels);

    std::size_t size() const { return teachers_.size(); }
    const FrozenTeacher& teacher(std::size_t i) const { return teachers_.at(i); }
    std::size_t tokens() const { return tokens_; }
    std::size_t concat_width() const;

    /// One teacher_forward per teacher, each unshuffled to [m×C_i·r_i²].
    std::vector<Tensor> unshuffled_features(const Tensor& image) const;

    AlignedTeacherFeatures align(const Tensor& image, const std::vector<ProjectionMLP>& projections,
                                 const ProjectionMLP& summarizer) const;

private:
    std::size_t tokens_;
    std::vector<FrozenTeacher> teachers_;
};

/// Smallest image side divisible by every grid (student and teachers).
std::size_t image_side_for(std::size_t student_grid, const std::vector<TeacherSpec>& specs);

}  // namespace hawaii

#endif  // HAWAII_TEACHER_HPP
