// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: token importance scoring, fine- and coarse-grained
// distillation, router balance, the toy generation head, and their weighted
// total. Everything here is a pure function over tensors on the caller's tape.

#ifndef HAWAII_LOSSES_HPP
#define HAWAII_LOSSES_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hawaii/mola.hpp"
#include "hawaii/nn.hpp"
#include "hawaii/tensor.hpp"

namespace hawaii {

/// s = mean_rows(softmax_rows(concat(T, I)·Tᵀ / √D)) for projected teacher
/// tokens T [m×D] and projected instruction tokens I [l×D]; result [1×m].
Tensor token_importance(const Tensor& proj_teacher, const Tensor& proj_instr);

struct ImportanceScores {
    std::vector<Tensor> per_teacher;  // s_i, each [1×m]
};

/// (1/N_t)·Σ_i s_i · per_token_mse(student_i, teacher_i).
Tensor fine_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
                 const ImportanceScores& scores);

/// mse(I_S, I_T_cg).
Tensor coarse_loss(const Tensor& student, const Tensor& summarized);

/// E·Σ_e f_e·P_e for one router: f_e is the fraction of tokens sent to e
/// (constant), P_e the mean routing probability of e (differentiable).
Tensor router_balance(const RouterObservation& obs);
/// Mean of router_balance over both routers of every layer.
Tensor balance_loss(std::span<const LayerRouting> routing);

/// Toy language head standing in for the LLM: projector f_p into the
/// language width, a token embedding table (last row is BOS) and a decoder.
struct GenHead {
    ProjectionMLP projector;  // f_p: D -> D_lm
    Tensor embedding;         // [(V+1)×D_lm]
    Linear decoder;           // D_lm -> V

    static GenHead init(std::size_t width, std::size_t lm_width, std::size_t vocab, Rng& rng);
    std::size_t vocab() const { return decoder.out_width(); }
    std::size_t lm_width() const { return decoder.in_width(); }
    std::size_t bos() const { return vocab(); }
    Tensor embed(std::span<const std::size_t> ids) const;
    void collect(ParamRegistry& reg) const;
};

/// Position t is decoded from ½(context + embed(y_{t-1})), where context is
/// the mean over f_p(I_S) rows and instruction rows, and y_{-1} is BOS.
Tensor gen_logits(const GenHead& head, const Tensor& student, const Tensor& instr,
                  std::span<const std::size_t> targets);
Tensor gen_loss(const GenHead& head, const Tensor& student, const Tensor& instr,
                std::span<const std::size_t> targets);

struct LossWeights {
    double lambda1 = 0.5;
    double lambda2 = 0.05;
};

struct LossBundle {
    double gen = 0.0;
    double cg = 0.0;
    double fg = 0.0;
    double mb = 0.0;
    double total = 0.0;
    double lambda1 = 0.5;
    double lambda2 = 0.05;
};

struct LossTerms {
    Tensor gen;
    Tensor cg;
    Tensor fg;
    Tensor mb;
};

struct TotalLoss {
    Tensor total;
    LossBundle bundle;
};

/// total = gen + λ1·(fg + cg) + λ2·mb. Throws NonFiniteError naming the first
/// non-finite component.
TotalLoss total_loss(const LossTerms& terms, const LossWeights& weights = {});

enum class RouterKind { Teacher, General };
const char* router_kind_name(RouterKind kind);

/// Expert-usage counts and probability mass per (layer, router).
class RoutingStats {
public:
    struct Entry {
        std::vector<std::uint64_t> counts;
        std::vector<double> prob_sums;
        std::uint64_t tokens = 0;

        std::vector<double> fractions() const;
        std::vector<double> mean_probs() const;
        /// Entropy (nats) of the usage fractions.
        double usage_entropy() const;
    };

    RoutingStats() = default;
    RoutingStats(std::size_t layers, std::size_t teacher_experts, std::size_t general_experts);

    void observe(std::span<const LayerRouting> routing);
    /// Summation merge; associative and commutative.
    void merge(const RoutingStats& other);

    std::size_t layers() const { return entries_.size(); }
    const Entry& entry(std::size_t layer, RouterKind kind) const;
    /// Mean usage entropy over all routers of all layers.
    double mean_usage_entropy() const;

    void write_csv(const std::filesystem::path& path) const;

private:
    std::vector<std::array<Entry, 2>> entries_;
};

/// CSV rows (teacher_index, token_index, score).
void export_score_map(const ImportanceScores& scores, const std::filesystem::path& path);

}  // namespace hawaii

#endif  // HAWAII_LOSSES_HPP
