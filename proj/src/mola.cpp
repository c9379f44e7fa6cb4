// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/mola.hpp"

#include <cmath>

#include "hawaii/ops.hpp"

namespace hawaii {

namespace {

constexpr double kLoraInitStd = 0.02;

std::size_t exact_sqrt(std::size_t n) {
    auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    return r * r == n ? r : 0;
}

}  // namespace

LoraAdapter LoraAdapter::init(std::size_t width, std::size_t rank, Rng& rng) {
    if (rank == 0 || rank >= width) {
        throw ShapeError("LoRA rank " + std::to_string(rank) + " must be in [1, " + std::to_string(width) + ")");
    }
    auto down = rng.normal_tensor({width, rank}, kLoraInitStd, true);
    return LoraAdapter{std::move(down), Tensor::zeros({rank, width}, true)};
}

void LoraAdapter::collect(ParamRegistry& reg, const std::string& prefix) const {
    reg.add(prefix + ".down", ParamGroup::Adapters, down);
    reg.add(prefix + ".up", ParamGroup::Adapters, up);
}

Tensor lora_forward(const LoraAdapter& adapter, const Tensor& h) {
    if (h.rank() != 2 || h.cols() != adapter.width()) {
        throw ShapeError("lora_forward: input " + shape_to_string(h.shape()) + " does not match adapter width " +
                         std::to_string(adapter.width()));
    }
    return matmul(matmul(h, adapter.down), adapter.up);
}

Router Router::init(std::size_t width, std::size_t num_experts, Rng& rng) {
    return Router{ProjectionMLP::init(width, width, num_experts, rng)};
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
    const std::size_t n = x.rows(), e = x.cols();
    const auto d = x.data();
    std::vector<std::size_t> out(n, 0);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t j = 1; j < e; ++j)
            if (d[t * e + j] > d[t * e + out[t]]) out[t] = j;
    }
    return out;
}

RouterObservation route(const Router& router, const Tensor& h) {
    Tensor probs = softmax_rows(router.mlp.forward(h));
    auto indices = argmax_rows(probs);
    return RouterObservation{std::move(indices), std::move(probs)};
}

std::string ForwardMode::to_string() const {
    switch (kind_) {
        case Kind::Full: return "full";
        case Kind::Base: return "base";
        case Kind::TeacherOnly: return "teacher_only(" + std::to_string(teacher_) + ")";
    }
    return "unknown";
}

MolaLayer MolaLayer::init(std::size_t width, std::size_t num_teachers, std::size_t num_general, std::size_t rank,
                          Rng& rng) {
    MolaLayer layer{ProjectionMLP::init(width, 4 * width, width, rng), {}, {}, {}, {}};
    for (std::size_t i = 0; i < num_teachers; ++i) layer.teacher_adapters.push_back(LoraAdapter::init(width, rank, rng));
    for (std::size_t j = 0; j < num_general; ++j) layer.general_adapters.push_back(LoraAdapter::init(width, rank, rng));
    layer.teacher_router = Router::init(width, num_teachers, rng);
    layer.general_router = Router::init(width, num_general, rng);
    return layer;
}

void MolaLayer::collect(ParamRegistry& reg, const std::string& prefix) const {
    base.collect(reg, prefix + ".base", ParamGroup::EncoderBase);
    for (std::size_t i = 0; i < teacher_adapters.size(); ++i)
        teacher_adapters[i].collect(reg, prefix + ".teacher_adapters." + std::to_string(i));
    for (std::size_t j = 0; j < general_adapters.size(); ++j)
        general_adapters[j].collect(reg, prefix + ".general_adapters." + std::to_string(j));
    teacher_router.mlp.collect(reg, prefix + ".teacher_router", ParamGroup::Routers);
    general_router.mlp.collect(reg, prefix + ".general_router", ParamGroup::Routers);
}

namespace {

// Adds each token's selected adapter output, scaled by its router probability.
// Only adapters that received at least one token are evaluated.
void add_routed(const std::vector<LoraAdapter>& adapters, const RouterObservation& obs, const Tensor& h,
                std::vector<Tensor>& parts, std::vector<std::vector<std::size_t>>& rows) {
    const std::size_t n = h.rows();
    std::vector<std::vector<std::size_t>> buckets(adapters.size());
    for (std::size_t t = 0; t < n; ++t) buckets[obs.indices[t]].push_back(t);
    const Tensor selected = pick(obs.probs, obs.indices);
    for (std::size_t e = 0; e < adapters.size(); ++e) {
        if (buckets[e].empty()) continue;
        Tensor delta = lora_forward(adapters[e], gather_rows(h, buckets[e]));
        parts.push_back(scale_rows(delta, gather_rows(reshape(selected, {n, 1}), buckets[e])));
        rows.push_back(std::move(buckets[e]));
    }
}

}  // namespace

MolaOutput mola_forward(const MolaLayer& layer, const Tensor& h, const ForwardMode& mode) {
    Tensor base = layer.base.forward(h);
    switch (mode.kind()) {
        case ForwardMode::Kind::Base:
            return MolaOutput{std::move(base), std::nullopt};
        case ForwardMode::Kind::TeacherOnly: {
            if (mode.teacher() >= layer.teacher_adapters.size()) {
                throw Error("teacher_only(" + std::to_string(mode.teacher()) + ") out of range for " +
                            std::to_string(layer.teacher_adapters.size()) + " teacher adapters");
            }
            return MolaOutput{add(base, lora_forward(layer.teacher_adapters[mode.teacher()], h)), std::nullopt};
        }
        case ForwardMode::Kind::Full: {
            LayerRouting routing{route(layer.teacher_router, h), route(layer.general_router, h)};
            std::vector<Tensor> parts;
            std::vector<std::vector<std::size_t>> rows;
            add_routed(layer.teacher_adapters, routing.teacher, h, parts, rows);
            add_routed(layer.general_adapters, routing.general, h, parts, rows);
            return MolaOutput{index_add_rows(base, parts, rows), std::move(routing)};
        }
    }
    throw Error("unknown forward mode");
}

std::size_t EncoderShape::grid() const { return exact_sqrt(tokens); }

void EncoderShape::validate() const {
    if (tokens == 0 || grid() == 0) throw Error("token count " + std::to_string(tokens) + " is not a perfect square");
    if (width == 0 || depth == 0) throw Error("encoder width and depth must be positive");
    if (num_teachers == 0 || num_general == 0) throw Error("adapter counts must be positive");
    if (rank == 0 || rank >= width) throw Error("LoRA rank must satisfy 0 < r < D");
    if (image_channels == 0 || image_side % grid() != 0) {
        throw Error("image side " + std::to_string(image_side) + " is not a multiple of the patch grid " +
                    std::to_string(grid()));
    }
}

StudentBlock StudentBlock::init(const EncoderShape& shape, Rng& rng) {
    const std::size_t d = shape.width;
    auto query = Linear::init(d, d, rng);
    // A key bias shifts every score in a query row equally, so softmax
    // cancels it and it would never receive gradient.
    auto key = Linear::init_without_bias(d, d, rng);
    auto value = Linear::init(d, d, rng);
    auto out = Linear::init(d, d, rng);
    auto mola = MolaLayer::init(d, shape.num_teachers, shape.num_general, shape.rank, rng);
    return StudentBlock{LayerNorm::init(d),
                        std::move(query),
                        std::move(key),
                        std::move(value),
                        std::move(out),
                        LayerNorm::init(d),
                        std::move(mola)};
}

void StudentBlock::collect(ParamRegistry& reg, const std::string& prefix) const {
    attn_norm.collect(reg, prefix + ".attn_norm", ParamGroup::EncoderBase);
    query.collect(reg, prefix + ".attn.query", ParamGroup::EncoderBase);
    key.collect(reg, prefix + ".attn.key", ParamGroup::EncoderBase);
    value.collect(reg, prefix + ".attn.value", ParamGroup::EncoderBase);
    out.collect(reg, prefix + ".attn.out", ParamGroup::EncoderBase);
    ffn_norm.collect(reg, prefix + ".ffn_norm", ParamGroup::EncoderBase);
    mola.collect(reg, prefix + ".mola");
}

StudentEncoder::StudentEncoder(const EncoderShape& shape, Rng& rng) : shape_(shape) {
    shape_.validate();
    const std::size_t p = shape_.patch_factor();
    patch_embed_ = Linear::init(shape_.image_channels * p * p, shape_.width, rng);
    for (std::size_t b = 0; b < shape_.depth; ++b) blocks_.push_back(StudentBlock::init(shape_, rng));
}

EncodeResult StudentEncoder::encode(const Tensor& image, const ForwardMode& mode) const {
    const Shape expected{shape_.image_side, shape_.image_side, shape_.image_channels};
    if (image.shape() != expected) {
        throw ShapeError("encode: image shape " + shape_to_string(image.shape()) + " does not match configured " +
                         shape_to_string(expected));
    }
    const std::size_t p = shape_.patch_factor();
    Tensor patches = reshape(pixel_unshuffle(image, p), {shape_.tokens, shape_.image_channels * p * p});
    Tensor x = patch_embed_.forward(patches);
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(shape_.width));

    EncodeResult result;
    for (const auto& block : blocks_) {
        Tensor h = block.attn_norm.forward(x);
        Tensor q = block.query.forward(h);
        Tensor k = block.key.forward(h);
        Tensor v = block.value.forward(h);
        Tensor attn = softmax_rows(scale(matmul(q, transpose(k)), attn_scale));
        x = add(x, block.out.forward(matmul(attn, v)));

        MolaOutput ffn = mola_forward(block.mola, block.ffn_norm.forward(x), mode);
        x = add(x, ffn.out);
        if (ffn.routing) result.routing.push_back(std::move(*ffn.routing));
    }
    result.tokens = std::move(x);
    return result;
}

void StudentEncoder::collect(ParamRegistry& reg) const {
    patch_embed_.collect(reg, "patch_embed", ParamGroup::PatchEmbed);
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect(reg, "blocks." + std::to_string(b));
}

}  // namespace hawaii
