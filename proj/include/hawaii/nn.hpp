// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small building blocks shared by the student, teachers and heads: seeded
// initialization, named parameter registry, linear maps and two-layer MLPs.

#ifndef HAWAII_NN_HPP
#define HAWAII_NN_HPP

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "hawaii/tensor.hpp"

namespace hawaii {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    /// Seeds from a tuple of integers (e.g. dataset seed and sample index).
    Rng(std::initializer_list<std::uint64_t> words);

    double normal(double mean = 0.0, double stddev = 1.0);
    std::size_t uniform_index(std::size_t bound);
    Tensor normal_tensor(Shape shape, double stddev, bool requires_grad = false);

private:
    std::mt19937_64 engine_;
};

/// Trainable parameters are partitioned into groups that the stage schedule
/// freezes or releases as a unit.
enum class ParamGroup {
    PatchEmbed,
    EncoderBase,
    Adapters,
    Routers,
    TeacherProjections,
    Summarizer,
    Projector,
    GenHead,
};

std::string_view group_name(ParamGroup group);
ParamGroup parse_group(std::string_view name);
const std::vector<ParamGroup>& all_groups();

struct NamedParam {
    std::string name;
    ParamGroup group;
    Tensor tensor;
};

class ParamRegistry {
public:
    void add(std::string name, ParamGroup group, Tensor tensor);
    const std::vector<NamedParam>& params() const { return params_; }
    std::vector<NamedParam>& params() { return params_; }
    /// nullptr when absent.
    const NamedParam* find(std::string_view name) const;
    std::size_t element_count() const;
    std::size_t element_count(ParamGroup group) const;
    void zero_grad();

private:
    std::vector<NamedParam> params_;
};

/// y = x·weight + bias, weight stored [in×out]. `bias` may be undefined.
struct Linear {
    Tensor weight;
    Tensor bias;

    static Linear init(std::size_t in, std::size_t out, Rng& rng);
    static Linear init_without_bias(std::size_t in, std::size_t out, Rng& rng);
    std::size_t in_width() const { return weight.rows(); }
    std::size_t out_width() const { return weight.cols(); }
    Tensor forward(const Tensor& x) const;
    void collect(ParamRegistry& reg, const std::string& prefix, ParamGroup group) const;
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;

    static LayerNorm init(std::size_t width);
    Tensor forward(const Tensor& x) const;
    void collect(ParamRegistry& reg, const std::string& prefix, ParamGroup group) const;
};

/// Two linear maps with an exact GELU between them.
struct ProjectionMLP {
    Linear fc1;
    Linear fc2;

    static ProjectionMLP init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
    std::size_t in_width() const { return fc1.in_width(); }
    std::size_t out_width() const { return fc2.out_width(); }
    Tensor forward(const Tensor& x) const;
    void collect(ParamRegistry& reg, const std::string& prefix, ParamGroup group) const;
};

}  // namespace hawaii

#endif  // HAWAII_NN_HPP
