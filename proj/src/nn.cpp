// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/nn.hpp"

#include <array>
#include <cmath>

#include "hawaii/ops.hpp"

namespace hawaii {

Rng::Rng(std::initializer_list<std::uint64_t> words) {
    std::vector<std::uint32_t> seq;
    for (auto w : words) {
        seq.push_back(static_cast<std::uint32_t>(w & 0xffffffffu));
        seq.push_back(static_cast<std::uint32_t>(w >> 32));
    }
    std::seed_seq seeds(seq.begin(), seq.end());
    engine_.seed(seeds);
}

double Rng::normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
}

std::size_t Rng::uniform_index(std::size_t bound) {
    return std::uniform_int_distribution<std::size_t>(0, bound - 1)(engine_);
}

Tensor Rng::normal_tensor(Shape shape, double stddev, bool requires_grad) {
    std::vector<double> v(shape_numel(shape));
    for (double& e : v) e = normal(0.0, stddev);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

namespace {

constexpr std::array<std::pair<ParamGroup, std::string_view>, 8> kGroupNames{{
    {ParamGroup::PatchEmbed, "patch_embed"},
    {ParamGroup::EncoderBase, "encoder_base"},
    {ParamGroup::Adapters, "adapters"},
    {ParamGroup::Routers, "routers"},
    {ParamGroup::TeacherProjections, "teacher_projections"},
    {ParamGroup::Summarizer, "summarizer"},
    {ParamGroup::Projector, "projector"},
    {ParamGroup::GenHead, "gen_head"},
}};

}  // namespace

std::string_view group_name(ParamGroup group) {
    for (const auto& [g, name] : kGroupNames)
        if (g == group) return name;
    return "unknown";
}

ParamGroup parse_group(std::string_view name) {
    for (const auto& [g, n] : kGroupNames)
        if (n == name) return g;
    throw Error("unknown parameter group '" + std::string(name) + "'");
}

const std::vector<ParamGroup>& all_groups() {
    static const std::vector<ParamGroup> groups = [] {
        std::vector<ParamGroup> out;
        for (const auto& [g, name] : kGroupNames) out.push_back(g);
        return out;
    }();
    return groups;
}

void ParamRegistry::add(std::string name, ParamGroup group, Tensor tensor) {
    if (find(name) != nullptr) throw Error("duplicate parameter name '" + name + "'");
    params_.push_back(NamedParam{std::move(name), group, std::move(tensor)});
}

const NamedParam* ParamRegistry::find(std::string_view name) const {
    for (const auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

std::size_t ParamRegistry::element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

std::size_t ParamRegistry::element_count(ParamGroup group) const {
    std::size_t n = 0;
    for (const auto& p : params_)
        if (p.group == group) n += p.tensor.numel();
    return n;
}

void ParamRegistry::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
    return Linear{rng.normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), true),
                  Tensor::zeros({out}, true)};
}

Linear Linear::init_without_bias(std::size_t in, std::size_t out, Rng& rng) {
    return Linear{rng.normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), true), Tensor{}};
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_row(y, bias) : y;
}

void Linear::collect(ParamRegistry& reg, const std::string& prefix, ParamGroup group) const {
    reg.add(prefix + ".weight", group, weight);
    if (bias.defined()) reg.add(prefix + ".bias", group, bias);
}

LayerNorm LayerNorm::init(std::size_t width) {
    return LayerNorm{Tensor::full({width}, 1.0, true), Tensor::zeros({width}, true)};
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

void LayerNorm::collect(ParamRegistry& reg, const std::string& prefix, ParamGroup group) const {
    reg.add(prefix + ".gain", group, gain);
    reg.add(prefix + ".bias", group, bias);
}

ProjectionMLP ProjectionMLP::init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    auto fc1 = Linear::init(in, hidden, rng);
    auto fc2 = Linear::init(hidden, out, rng);
    return ProjectionMLP{std::move(fc1), std::move(fc2)};
}

Tensor ProjectionMLP::forward(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != in_width()) {
        throw ShapeError("projection MLP expects width " + std::to_string(in_width()) + ", got " +
                         shape_to_string(x.shape()));
    }
    return fc2.forward(gelu(fc1.forward(x)));
}

void ProjectionMLP::collect(ParamRegistry& reg, const std::string& prefix, ParamGroup group) const {
    fc1.collect(reg, prefix + ".fc1", group);
    fc2.collect(reg, prefix + ".fc2", group);
}

}  // namespace hawaii
