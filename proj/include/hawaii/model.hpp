// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// The complete distillation model: student encoder, frozen teacher bank,
// alignment projections, summarizer and toy generation head, plus the
// synthetic dataset that feeds it.

#ifndef HAWAII_MODEL_HPP
#define HAWAII_MODEL_HPP

#include <cstdint>
#include <vector>

#include "hawaii/config.hpp"
#include "hawaii/losses.hpp"
#include "hawaii/mola.hpp"
#include "hawaii/nn.hpp"
#include "hawaii/teacher.hpp"

namespace hawaii {

struct SyntheticSample {
    Tensor image;                          // [S×S×C], standard Gaussian pixels
    std::vector<std::size_t> instruction;  // length l, ids < V
    std::vector<std::size_t> response;     // length L, ids < V, a function of the image
};

/// Samples are a pure function of (seed, index).
class SyntheticDataset {
public:
    explicit SyntheticDataset(const TrainConfig& config);

    std::size_t size() const { return size_; }
    SyntheticSample sample(std::size_t index) const;

private:
    std::uint64_t seed_;
    std::size_t size_;
    std::size_t image_side_;
    std::size_t image_channels_;
    std::size_t vocab_;
    std::size_t instruction_length_;
    std::size_t response_length_;
};

/// 64-bit FNV-1a over the bit patterns of a tensor's values.
std::uint64_t tensor_hash(const Tensor& t);

struct ForwardResult {
    LossTerms terms;
    TotalLoss total;
    EncodeResult full;                   // I^S and routing
    std::vector<Tensor> teacher_only;    // I^S_i
    AlignedTeacherFeatures teachers;     // I^T_i, Î^T_i, I^T_cg
    ImportanceScores scores;             // s_i
};

class HawaiiModel {
public:
    explicit HawaiiModel(const TrainConfig& config);
    HawaiiModel(const HawaiiModel&) = delete;
    HawaiiModel& operator=(const HawaiiModel&) = delete;

    const TrainConfig& config() const { return config_; }
    const StudentEncoder& encoder() const { return encoder_; }
    StudentEncoder& encoder() { return encoder_; }
    const TeacherBank& teachers() const { return teachers_; }
    const std::vector<ProjectionMLP>& teacher_projections() const { return teacher_projections_; }
    const ProjectionMLP& instruction_projection() const { return instruction_projection_; }
    const ProjectionMLP& summarizer() const { return summarizer_; }
    const GenHead& head() const { return head_; }

    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }

    /// One full-mode pass, N_t teacher-only passes, one teacher forward per
    /// teacher, and every loss term. Records onto the active tape, if any.
    ForwardResult forward(const SyntheticSample& sample, const LossWeights& weights) const;

private:
    TrainConfig config_;
    Rng init_rng_;
    StudentEncoder encoder_;
    TeacherBank teachers_;
    std::vector<ProjectionMLP> teacher_projections_;
    ProjectionMLP instruction_projection_;
    ProjectionMLP summarizer_;
    GenHead head_;
    ParamRegistry params_;
};

LossWeights weights_of(const TrainConfig& config);

/// Mean over tokens of the cosine similarity between matching rows.
double mean_row_cosine(const Tensor& a, const Tensor& b);

}  // namespace hawaii

#endif  // HAWAII_MODEL_HPP
