// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run-level orchestration behind the command-line tools: full training runs
// with artifact export, routing statistics over a checkpoint, and the
// end-to-end gradient check.

#ifndef HAWAII_RUN_HPP
#define HAWAII_RUN_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hawaii/config.hpp"
#include "hawaii/losses.hpp"
#include "hawaii/model.hpp"
#include "hawaii/nn.hpp"
#include "hawaii/trainer.hpp"

namespace hawaii {

struct RunOptions {
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> resume;
};

struct RunResult {
    std::vector<StepReport> reports;  // steps run in this invocation
    RoutingStats routing;             // accumulated over those steps
};

/// Trains `config.steps` steps (continuing from `resume` if given) and writes
/// metrics.jsonl, ckpt_<step>.hkpt every checkpoint_every steps, final.hkpt,
/// routing_stats.csv and score_maps.csv into `out_dir`.
RunResult run_training(const TrainConfig& config, const RunOptions& options);

/// Full-mode routing over dataset samples [0, samples).
RoutingStats collect_route_stats(const HawaiiModel& model, const SyntheticDataset& dataset, std::size_t samples);

class GradcheckError : public Error {
public:
    using Error::Error;
};

struct GroupGradReport {
    ParamGroup group;
    std::size_t elements = 0;
    double max_rel_error = 0.0;
    std::string worst_param;
};

struct GradcheckReport {
    std::vector<GroupGradReport> groups;  // trainable groups only
    double max_rel_error = 0.0;
    bool passed = false;
};

/// |a−b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

inline constexpr std::size_t kGradcheckMaxParams = 10000;

/// Compares the taped gradient of the total loss against central differences
/// for every trainable parameter. Adapter factors are first filled with
/// seeded noise so the adapter and router paths carry gradient.
/// Throws GradcheckError when the model exceeds kGradcheckMaxParams.
GradcheckReport run_gradcheck(const TrainConfig& config, double eps = 1e-5, double tolerance = 1e-4);

/// Fills both factors of every adapter with N(0, stddev²) noise.
void randomize_adapters(HawaiiModel& model, std::uint64_t seed, double stddev);

}  // namespace hawaii

#endif  // HAWAII_RUN_HPP
