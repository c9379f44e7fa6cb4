// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Student encoder with mixture-of-LoRA-adapter feedforward layers.
//
// Each feedforward sublayer carries N_t teacher-specific adapters and N_g
// general-knowledge adapters, each family behind its own top-1 router. The
// encoder runs in one of three modes:
//
//   full             F(h) + p_T·a^T_i(h) + p_G·a^G_j(h), i/j chosen per token
//   teacher_only(i)  F(h) + a^T_i(h)
//   base             F(h)
//
// p_T / p_G are the router probabilities of the selected experts, which gives
// the routers a gradient path; adapter outputs are zero at initialization so
// all three modes agree until the adapters are trained.

#ifndef HAWAII_MOLA_HPP
#define HAWAII_MOLA_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "hawaii/nn.hpp"
#include "hawaii/tensor.hpp"

namespace hawaii {

/// Rank-r update h·down·up. `up` starts at zero.
struct LoraAdapter {
    Tensor down;  // [D×r]
    Tensor up;    // [r×D]

    static LoraAdapter init(std::size_t width, std::size_t rank, Rng& rng);
    std::size_t width() const { return down.rows(); }
    std::size_t rank() const { return down.cols(); }
    void collect(ParamRegistry& reg, const std::string& prefix) const;
};

Tensor lora_forward(const LoraAdapter& adapter, const Tensor& h);

/// Two-layer GELU perceptron producing one logit per expert.
struct Router {
    ProjectionMLP mlp;

    static Router init(std::size_t width, std::size_t num_experts, Rng& rng);
    std::size_t num_experts() const { return mlp.out_width(); }
};

/// Per-token expert choice and the full softmax it was taken from.
struct RouterObservation {
    std::vector<std::size_t> indices;  // length n
    Tensor probs;                      // [n×E]

    std::size_t num_experts() const { return probs.cols(); }
};

/// Argmax of the softmax probabilities; ties go to the lowest index.
RouterObservation route(const Router& router, const Tensor& h);
std::vector<std::size_t> argmax_rows(const Tensor& x);

class ForwardMode {
public:
    enum class Kind { Full, TeacherOnly, Base };

    static ForwardMode full() { return ForwardMode(Kind::Full, 0); }
    static ForwardMode base() { return ForwardMode(Kind::Base, 0); }
    static ForwardMode teacher_only(std::size_t teacher) { return ForwardMode(Kind::TeacherOnly, teacher); }

    Kind kind() const { return kind_; }
    std::size_t teacher() const { return teacher_; }
    std::string to_string() const;

private:
    ForwardMode(Kind kind, std::size_t teacher) : kind_(kind), teacher_(teacher) {}
    Kind kind_;
    std::size_t teacher_;
};

struct LayerRouting {
    RouterObservation teacher;
    RouterObservation general;
};

struct MolaLayer {
    ProjectionMLP base;  // F: D -> 4D -> D
    std::vector<LoraAdapter> teacher_adapters;
    std::vector<LoraAdapter> general_adapters;
    Router teacher_router;
    Router general_router;

    static MolaLayer init(std::size_t width, std::size_t num_teachers, std::size_t num_general, std::size_t rank,
                          Rng& rng);
    void collect(ParamRegistry& reg, const std::string& prefix) const;
};

struct MolaOutput {
    Tensor out;
    std::optional<LayerRouting> routing;  // full mode only
};

MolaOutput mola_forward(const MolaLayer& layer, const Tensor& h, const ForwardMode& mode);

struct EncoderShape {
    std::size_t tokens = 16;  // m, a perfect square
    std::size_t width = 32;   // D
    std::size_t depth = 2;
    std::size_t num_teachers = 3;
    std::size_t num_general = 3;
    std::size_t rank = 8;
    std::size_t image_side = 8;
    std::size_t image_channels = 3;

    std::size_t grid() const;
    std::size_t patch_factor() const { return image_side / grid(); }
    void validate() const;
};

/// Pre-norm transformer block: single-head attention then MoLA feedforward.
struct StudentBlock {
    LayerNorm attn_norm;
    Linear query, key, value, out;
    LayerNorm ffn_norm;
    MolaLayer mola;

    static StudentBlock init(const EncoderShape& shape, Rng& rng);
    void collect(ParamRegistry& reg, const std::string& prefix) const;
};

struct EncodeResult {
    Tensor tokens;                      // I^S, [m×D]
    std::vector<LayerRouting> routing;  // one per block in full mode, else empty
};

class StudentEncoder {
public:
    StudentEncoder(const EncoderShape& shape, Rng& rng);

    const EncoderShape& shape() const { return shape_; }
    const Linear& patch_embed() const { return patch_embed_; }
    const std::vector<StudentBlock>& blocks() const { return blocks_; }
    std::vector<StudentBlock>& blocks() { return blocks_; }

    /// `image` is [S×S×C]; patches of side S/√m are flattened and embedded.
    EncodeResult encode(const Tensor& image, const ForwardMode& mode) const;

    /// Registers patch_embed.* and blocks.<i>.* parameters.
    void collect(ParamRegistry& reg) const;

private:
    EncoderShape shape_;
    Linear patch_embed_;
    std::vector<StudentBlock> blocks_;
};

}  // namespace hawaii

#endif  // HAWAII_MOLA_HPP
