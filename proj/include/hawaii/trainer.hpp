// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-stage training: parameter-group freezing, adaptive-moment updates,
// per-step loss assembly and routing statistics.

#ifndef HAWAII_TRAINER_HPP
#define HAWAII_TRAINER_HPP

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hawaii/config.hpp"
#include "hawaii/losses.hpp"
#include "hawaii/model.hpp"
#include "hawaii/nn.hpp"

namespace hawaii {

struct StageSchedule {
    Stage stage = Stage::Pretrain;
    std::set<ParamGroup> trainable;

    /// pretrain: everything except the patch embedding and base encoder.
    /// finetune: every group.
    static StageSchedule for_stage(Stage stage);
    bool trains(ParamGroup group) const { return trainable.contains(group); }
};

/// Sets requires_grad on every registered parameter per the schedule.
void apply_schedule(ParamRegistry& params, const StageSchedule& schedule);

struct AdamSettings {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    struct Moments {
        std::vector<double> first;
        std::vector<double> second;
    };

    AdamSettings settings;
    std::uint64_t step = 0;
    std::map<std::string, Moments> moments;  // only parameters ever updated
};

/// One bias-corrected adaptive-moment step over `params`, reading each
/// parameter's accumulated gradient.
void adam_update(OptimizerState& state, const std::vector<NamedParam>& params);

struct StepReport {
    std::size_t step = 0;  // 1-based index of the completed step
    LossBundle losses;
    RoutingStats routing;  // this step's expert usage
    double wall_ms = 0.0;
    std::vector<double> teacher_cosine;  // mean row cosine of I^S_i vs Î^T_i
    std::vector<std::vector<double>> scores;  // s_i values
};

/// Forward, backward, update on trainable groups, then zero all gradients.
/// Throws NonFiniteError naming the first non-finite loss component.
StepReport train_step(HawaiiModel& model, OptimizerState& optimizer, const SyntheticSample& sample,
                      const StageSchedule& schedule, const LossWeights& weights);

/// Expert usage of a sequence of full-mode passes.
RoutingStats accumulate_routing(const std::vector<std::vector<LayerRouting>>& records, std::size_t layers,
                                std::size_t teacher_experts, std::size_t general_experts);

/// Owns model, dataset and optimizer for a configured run.
class Trainer {
public:
    explicit Trainer(const TrainConfig& config);

    const TrainConfig& config() const { return config_; }
    HawaiiModel& model() { return model_; }
    const HawaiiModel& model() const { return model_; }
    OptimizerState& optimizer() { return optimizer_; }
    const OptimizerState& optimizer() const { return optimizer_; }
    const SyntheticDataset& dataset() const { return dataset_; }
    StageSchedule& schedule() { return schedule_; }
    std::size_t steps_done() const { return static_cast<std::size_t>(optimizer_.step); }

    /// Trains on sample (steps_done mod dataset_size).
    StepReport step();

private:
    TrainConfig config_;
    HawaiiModel model_;
    SyntheticDataset dataset_;
    OptimizerState optimizer_;
    StageSchedule schedule_;
};

/// One JSONL metrics record for a step.
std::string metrics_line(const StepReport& report, bool include_wall_time);

/// SHA-256 over the names and raw values of every parameter in `group`.
std::string group_digest(const ParamRegistry& params, ParamGroup group);

}  // namespace hawaii

#endif  // HAWAII_TRAINER_HPP
