// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>

#include "hawaii/io.hpp"

namespace hawaii {

using nlohmann::json;

const char* stage_name(Stage stage) { return stage == Stage::Pretrain ? "pretrain" : "finetune"; }

Stage parse_stage(const std::string& name) {
    if (name == "pretrain") return Stage::Pretrain;
    if (name == "finetune") return Stage::Finetune;
    throw ConfigError("stage: expected \"pretrain\" or \"finetune\", got \"" + name + "\"");
}

std::size_t TrainConfig::default_rank(std::size_t width) {
    if (width >= 128) return 32;
    return std::max<std::size_t>(1, std::min<std::size_t>(32, width / 4));
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    const auto grid = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m))));
    require(m > 0 && grid * grid == m, "m: token count must be a positive perfect square, got " + std::to_string(m));
    require(D > 0, "D: must be positive");
    require(depth > 0, "depth: must be positive");
    require(heads == 1, "heads: only single-head attention is supported, got " + std::to_string(heads));
    require(num_teachers > 0, "num_teachers: must be positive");
    require(num_general > 0, "num_general: must be positive");
    require(rank > 0 && rank < D, "rank: must satisfy 0 < rank < D (rank=" + std::to_string(rank) +
                                      ", D=" + std::to_string(D) + ")");
    require(teachers.size() == num_teachers, "teachers: " + std::to_string(teachers.size()) +
                                                 " teacher specs but num_teachers=" + std::to_string(num_teachers));
    for (std::size_t i = 0; i < teachers.size(); ++i) {
        const auto& t = teachers[i];
        const std::string who = "teachers[" + std::to_string(i) + "]";
        require(t.grid > 0 && t.channels > 0 && t.unshuffle > 0, who + ": grid, channels and unshuffle must be positive");
        require(t.grid % t.unshuffle == 0, who + ": unshuffle " + std::to_string(t.unshuffle) +
                                               " does not divide grid " + std::to_string(t.grid));
        const std::size_t side = t.grid / t.unshuffle;
        require(side * side == m, who + ": (grid/unshuffle)^2 = " + std::to_string(side * side) +
                                      " != m = " + std::to_string(m));
    }
    require(std::isfinite(lambda1) && lambda1 >= 0.0, "lambda1: must be finite and non-negative");
    require(std::isfinite(lambda2) && lambda2 >= 0.0, "lambda2: must be finite and non-negative");
    require(std::isfinite(lr) && lr >= 0.0, "lr: must be finite and non-negative");
    require(steps > 0, "steps: must be positive");
    require(vocab > 0, "vocab: must be positive");
    require(instruction_length > 0, "instruction_length: must be positive");
    require(response_length > 0, "response_length: must be positive");
    require(dataset_size > 0, "dataset_size: must be positive");
    require(image_channels > 0, "image_channels: must be positive");
    require(lm_width > 0, "lm_width: must be positive");
    require(checkpoint_every > 0, "checkpoint_every: must be positive");
}

std::size_t TrainConfig::image_side() const {
    const auto grid = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m))));
    return image_side_for(grid, teacher_specs());
}

EncoderShape TrainConfig::encoder_shape() const {
    EncoderShape s;
    s.tokens = m;
    s.width = D;
    s.depth = depth;
    s.num_teachers = num_teachers;
    s.num_general = num_general;
    s.rank = rank;
    s.image_side = image_side();
    s.image_channels = image_channels;
    return s;
}

std::vector<TeacherSpec> TrainConfig::teacher_specs() const {
    std::vector<TeacherSpec> out;
    for (std::size_t i = 0; i < teachers.size(); ++i) {
        out.push_back(TeacherSpec{teachers[i].grid, teachers[i].channels, teachers[i].unshuffle,
                                  seed * 1000003ULL + 7919ULL * (i + 1)});
    }
    return out;
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
    }
}

void read_count(const json& j, const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ConfigError(std::string(key) + ": expected a non-negative integer, got " + v.dump());
    }
    out = v.get<std::size_t>();
}

const std::set<std::string> kKnownKeys{
    "m",     "D",     "depth", "heads",  "num_teachers", "num_general",        "rank",
    "teachers", "lambda1", "lambda2", "lr", "steps",        "stage",              "seed",
    "vocab", "instruction_length", "response_length", "dataset_size", "output_dir", "image_channels",
    "lm_width", "checkpoint_every", "log_wall_time"};

}  // namespace

TrainConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!kKnownKeys.contains(key)) throw ConfigError(key + ": unknown configuration key");
    }
    TrainConfig c;
    read_count(j, "m", c.m);
    read_count(j, "D", c.D);
    read_count(j, "depth", c.depth);
    read_count(j, "heads", c.heads);
    c.rank = TrainConfig::default_rank(c.D);
    read_count(j, "rank", c.rank);
    read_count(j, "num_general", c.num_general);
    if (j.contains("teachers")) {
        const auto& arr = j.at("teachers");
        if (!arr.is_array()) throw ConfigError("teachers: expected an array");
        c.teachers.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const auto& t = arr[i];
            const std::string who = "teachers[" + std::to_string(i) + "]";
            if (!t.is_object()) throw ConfigError(who + ": expected an object");
            for (const auto& [key, value] : t.items()) {
                if (key != "grid" && key != "channels" && key != "unshuffle") {
                    throw ConfigError(who + "." + key + ": unknown teacher key");
                }
            }
            TeacherShape shape;
            try {
                shape.grid = t.at("grid").get<std::size_t>();
                shape.channels = t.at("channels").get<std::size_t>();
                shape.unshuffle = t.value("unshuffle", std::size_t{1});
            } catch (const json::exception& e) {
                throw ConfigError(who + ": " + e.what());
            }
            c.teachers.push_back(shape);
        }
    }
    c.num_teachers = c.teachers.size();
    read_count(j, "num_teachers", c.num_teachers);
    read_field(j, "lambda1", c.lambda1);
    read_field(j, "lambda2", c.lambda2);
    read_field(j, "lr", c.lr);
    read_count(j, "steps", c.steps);
    if (j.contains("stage")) {
        std::string stage;
        read_field(j, "stage", stage);
        c.stage = parse_stage(stage);
    }
    read_field(j, "seed", c.seed);
    read_count(j, "vocab", c.vocab);
    read_count(j, "instruction_length", c.instruction_length);
    read_count(j, "response_length", c.response_length);
    read_count(j, "dataset_size", c.dataset_size);
    read_field(j, "output_dir", c.output_dir);
    read_count(j, "image_channels", c.image_channels);
    read_count(j, "lm_width", c.lm_width);
    read_count(j, "checkpoint_every", c.checkpoint_every);
    read_field(j, "log_wall_time", c.log_wall_time);
    c.validate();
    return c;
}

json config_to_json(const TrainConfig& c) {
    json teachers = json::array();
    for (const auto& t : c.teachers) teachers.push_back({{"grid", t.grid}, {"channels", t.channels}, {"unshuffle", t.unshuffle}});
    return json{{"m", c.m},
                {"D", c.D},
                {"depth", c.depth},
                {"heads", c.heads},
                {"num_teachers", c.num_teachers},
                {"num_general", c.num_general},
                {"rank", c.rank},
                {"teachers", teachers},
                {"lambda1", c.lambda1},
                {"lambda2", c.lambda2},
                {"lr", c.lr},
                {"steps", c.steps},
                {"stage", stage_name(c.stage)},
                {"seed", c.seed},
                {"vocab", c.vocab},
                {"instruction_length", c.instruction_length},
                {"response_length", c.response_length},
                {"dataset_size", c.dataset_size},
                {"output_dir", c.output_dir},
                {"image_channels", c.image_channels},
                {"lm_width", c.lm_width},
                {"checkpoint_every", c.checkpoint_every},
                {"log_wall_time", c.log_wall_time}};
}

TrainConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return config_from_json(j);
}

void apply_env_overrides(TrainConfig& config) {
    const char* env = std::getenv("HAWAII_SEED");
    if (env == nullptr || *env == '\0') return;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw ConfigError(std::string("HAWAII_SEED: not an unsigned integer: ") + env);
    config.seed = v;
}

TrainConfig minimal_config() {
    TrainConfig c;
    c.m = 4;
    c.D = 8;
    c.depth = 2;
    c.num_teachers = 2;
    c.num_general = 2;
    c.rank = 2;
    c.teachers = {{4, 4, 2}, {2, 6, 1}};
    c.vocab = 8;
    c.lm_width = 8;
    c.instruction_length = 3;
    c.response_length = 3;
    c.dataset_size = 8;
    c.steps = 20;
    c.stage = Stage::Finetune;
    c.output_dir = "runs/minimal";
    return c;
}

}  // namespace hawaii
