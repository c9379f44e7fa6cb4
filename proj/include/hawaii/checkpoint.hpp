// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container:
//
//   "HKPT1\n"
//   {"<name>": {"dtype": "f64", "offset": <bytes>, "shape": [...]}, ...}\n
//   little-endian float64 payload; offsets are relative to the payload start
//
// Model parameters are stored under their registry names; optimizer state
// under "adam.m.<name>", "adam.v.<name>" and the step counter "adam.step".

#ifndef HAWAII_CHECKPOINT_HPP
#define HAWAII_CHECKPOINT_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hawaii/model.hpp"
#include "hawaii/tensor.hpp"
#include "hawaii/trainer.hpp"

namespace hawaii {

class CheckpointError : public Error {
public:
    using Error::Error;
};

struct StoredArray {
    Shape shape;
    std::vector<double> values;
};

using CheckpointContents = std::map<std::string, StoredArray>;

std::string encode_checkpoint(const CheckpointContents& contents);
CheckpointContents decode_checkpoint(const std::string& bytes);

void save_checkpoint(const HawaiiModel& model, const OptimizerState& optimizer, const std::filesystem::path& path);
/// Overwrites `model` parameters and `optimizer` state. Fails naming the
/// first unknown, missing or mis-shaped entry, leaving both untouched.
void load_checkpoint(const std::filesystem::path& path, HawaiiModel& model, OptimizerState& optimizer);

}  // namespace hawaii

#endif  // HAWAII_CHECKPOINT_HPP
