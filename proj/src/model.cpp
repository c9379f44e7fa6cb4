// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/model.hpp"

#include <bit>
#include <cmath>

#include "hawaii/ops.hpp"

namespace hawaii {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Rethrows a non-finite failure inside one loss term under that term's name.
template <typename Fn>
Tensor guarded(const char* component, Fn&& fn) {
    try {
        return fn();
    } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string("non-finite loss component ") + component + " (" + e.what() + ")");
    }
}

const TrainConfig& validated(const TrainConfig& config) {
    config.validate();
    return config;
}

}  // namespace

std::uint64_t tensor_hash(const Tensor& t) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : t.data()) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

SyntheticDataset::SyntheticDataset(const TrainConfig& config)
    : seed_(config.seed),
      size_(config.dataset_size),
      image_side_(config.image_side()),
      image_channels_(config.image_channels),
      vocab_(config.vocab),
      instruction_length_(config.instruction_length),
      response_length_(config.response_length) {}

SyntheticSample SyntheticDataset::sample(std::size_t index) const {
    Rng rng({seed_, 0x5eedda7aULL, index});
    SyntheticSample s;
    s.image = rng.normal_tensor({image_side_, image_side_, image_channels_}, 1.0);
    for (std::size_t t = 0; t < instruction_length_; ++t) s.instruction.push_back(rng.uniform_index(vocab_));
    const std::uint64_t h = tensor_hash(s.image);
    for (std::size_t t = 0; t < response_length_; ++t) s.response.push_back(splitmix64(h + t) % vocab_);
    return s;
}

HawaiiModel::HawaiiModel(const TrainConfig& config)
    : config_(validated(config)),
      init_rng_(config.seed),
      encoder_(config.encoder_shape(), init_rng_),
      teachers_(config.teacher_specs(), config.m, config.image_side(), config.image_channels) {
    const std::size_t d = config_.D;
    for (std::size_t i = 0; i < teachers_.size(); ++i) {
        const std::size_t w = teachers_.teacher(i).spec().aligned_width();
        teacher_projections_.push_back(ProjectionMLP::init(w, d, d, init_rng_));
    }
    instruction_projection_ = ProjectionMLP::init(config_.lm_width, d, d, init_rng_);
    summarizer_ = ProjectionMLP::init(teachers_.concat_width(), d, d, init_rng_);
    head_ = GenHead::init(d, config_.lm_width, config_.vocab, init_rng_);

    encoder_.collect(params_);
    for (std::size_t i = 0; i < teacher_projections_.size(); ++i)
        teacher_projections_[i].collect(params_, "teacher_projections." + std::to_string(i),
                                        ParamGroup::TeacherProjections);
    instruction_projection_.collect(params_, "instruction_projection", ParamGroup::TeacherProjections);
    summarizer_.collect(params_, "summarizer", ParamGroup::Summarizer);
    head_.collect(params_);
}

ForwardResult HawaiiModel::forward(const SyntheticSample& sample, const LossWeights& weights) const {
    ForwardResult r;
    r.full = encoder_.encode(sample.image, ForwardMode::full());
    r.teachers = teachers_.align(sample.image, teacher_projections_, summarizer_);

    const Tensor instr = head_.embed(sample.instruction);
    const Tensor instr_proj = instruction_projection_.forward(instr);
    for (std::size_t i = 0; i < teachers_.size(); ++i) {
        r.scores.per_teacher.push_back(token_importance(r.teachers.projected[i], instr_proj));
        r.teacher_only.push_back(encoder_.encode(sample.image, ForwardMode::teacher_only(i)).tokens);
    }

    r.terms.gen = guarded("loss_gen", [&] { return gen_loss(head_, r.full.tokens, instr, sample.response); });
    r.terms.cg = guarded("loss_cg", [&] { return coarse_loss(r.full.tokens, r.teachers.summarized); });
    r.terms.fg = guarded("loss_fg", [&] { return fine_loss(r.teacher_only, r.teachers.projected, r.scores); });
    r.terms.mb = guarded("loss_mb", [&] { return balance_loss(r.full.routing); });
    r.total = total_loss(r.terms, weights);
    return r;
}

LossWeights weights_of(const TrainConfig& config) { return LossWeights{config.lambda1, config.lambda2}; }

double mean_row_cosine(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.rank() != 2) throw ShapeError("mean_row_cosine: shape mismatch");
    const std::size_t n = a.rows(), k = a.cols();
    const auto ad = a.data(), bd = b.data();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            dot += ad[i * k + j] * bd[i * k + j];
            na += ad[i * k + j] * ad[i * k + j];
            nb += bd[i * k + j] * bd[i * k + j];
        }
        const double denom = std::sqrt(na) * std::sqrt(nb);
        total += denom > 0.0 ? dot / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

}  // namespace hawaii
