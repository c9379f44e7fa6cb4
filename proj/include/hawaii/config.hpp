// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration. Parsed from JSON; unknown keys are rejected.

#ifndef HAWAII_CONFIG_HPP
#define HAWAII_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hawaii/mola.hpp"
#include "hawaii/teacher.hpp"
#include "hawaii/tensor.hpp"

namespace hawaii {

/// Invalid configuration; the message starts with the offending field.
class ConfigError : public Error {
public:
    using Error::Error;
};

enum class Stage { Pretrain, Finetune };

const char* stage_name(Stage stage);
Stage parse_stage(const std::string& name);

struct TeacherShape {
    std::size_t grid = 0;
    std::size_t channels = 0;
    std::size_t unshuffle = 1;

    bool operator==(const TeacherShape&) const = default;
};

struct TrainConfig {
    std::size_t m = 16;
    std::size_t D = 32;
    std::size_t depth = 2;
    std::size_t heads = 1;
    std::size_t num_teachers = 3;
    std::size_t num_general = 3;
    std::size_t rank = 8;
    std::vector<TeacherShape> teachers{{8, 12, 2}, {4, 24, 1}, {8, 8, 2}};
    double lambda1 = 0.5;
    double lambda2 = 0.05;
    double lr = 1e-3;
    std::size_t steps = 500;
    Stage stage = Stage::Finetune;
    std::uint64_t seed = 1234;
    std::size_t vocab = 32;
    std::size_t instruction_length = 4;
    std::size_t response_length = 4;
    std::size_t dataset_size = 128;
    std::string output_dir = "runs/default";
    std::size_t image_channels = 3;
    std::size_t lm_width = 32;
    std::size_t checkpoint_every = 100;
    /// When false the metrics' wall_ms field is written as 0 so that metrics
    /// files are byte-reproducible.
    bool log_wall_time = false;

    bool operator==(const TrainConfig&) const = default;

    /// Default LoRA rank for a width: 32 when D ≥ 128, else min(32, D/4).
    static std::size_t default_rank(std::size_t width);

    void validate() const;
    std::size_t image_side() const;
    EncoderShape encoder_shape() const;
    std::vector<TeacherSpec> teacher_specs() const;
};

/// Throws ConfigError on unknown keys, wrong types or failed validation.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& config);
TrainConfig load_config(const std::string& path);
/// Applies the HAWAII_SEED environment override, if set.
void apply_env_overrides(TrainConfig& config);

/// Smallest configuration used for end-to-end gradient checks.
TrainConfig minimal_config();

}  // namespace hawaii

#endif  // HAWAII_CONFIG_HPP
