// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/teacher.hpp"

#include <cmath>
#include <numeric>

#include "hawaii/ops.hpp"

namespace hawaii {

void TeacherSpec::validate(std::size_t tokens, std::size_t index) const {
    const std::string who = "teachers[" + std::to_string(index) + "]";
    if (grid == 0 || channels == 0 || unshuffle == 0) throw Error(who + ": grid, channels and unshuffle must be positive");
    if (grid % unshuffle != 0) {
        throw Error(who + ": unshuffle factor " + std::to_string(unshuffle) + " does not divide grid " +
                    std::to_string(grid));
    }
    const std::size_t side = grid / unshuffle;
    if (side * side != tokens) {
        throw Error(who + ": (grid/unshuffle)^2 = " + std::to_string(side * side) + " != m = " + std::to_string(tokens));
    }
}

FrozenTeacher::FrozenTeacher(const TeacherSpec& spec, std::size_t image_side, std::size_t image_channels)
    : spec_(spec), image_side_(image_side), image_channels_(image_channels) {
    if (spec.grid == 0 || image_side % spec.grid != 0) {
        throw ShapeError("teacher grid " + std::to_string(spec.grid) + " does not divide image side " +
                         std::to_string(image_side));
    }
    const std::size_t q = image_side / spec.grid;
    const std::size_t in = image_channels * q * q;
    const std::size_t hidden = std::max<std::size_t>(16, 2 * spec.channels);
    const std::size_t tokens = spec.grid * spec.grid;
    Rng rng(spec.seed);
    w1_ = rng.normal_tensor({in, hidden}, 1.0 / std::sqrt(static_cast<double>(in)));
    b1_ = rng.normal_tensor({hidden}, 0.5);
    w2_ = rng.normal_tensor({hidden, spec.channels}, 1.0 / std::sqrt(static_cast<double>(hidden)));
    b2_ = rng.normal_tensor({spec.channels}, 0.5);
    // Half identity keeps features spatially anchored; the rest mixes tokens.
    Tensor mixing = rng.normal_tensor({tokens, tokens}, 0.5 / std::sqrt(static_cast<double>(tokens)));
    auto md = mixing.mutable_data();
    for (std::size_t t = 0; t < tokens; ++t) md[t * tokens + t] += 0.5;
    mixing_ = std::move(mixing);
}

Tensor FrozenTeacher::forward(const Tensor& image) const {
    const Shape expected{image_side_, image_side_, image_channels_};
    if (image.shape() != expected) {
        throw ShapeError("teacher_forward: image shape " + shape_to_string(image.shape()) + " does not match " +
                         shape_to_string(expected));
    }
    const Tensor input = image.detach();
    const std::size_t q = image_side_ / spec_.grid;
    const std::size_t tokens = spec_.grid * spec_.grid;
    Tensor patches = reshape(pixel_unshuffle(input, q), {tokens, image_channels_ * q * q});
    Tensor per_token = add_row(matmul(gelu(add_row(matmul(patches, w1_), b1_)), w2_), b2_);
    Tensor mixed = matmul(mixing_, per_token);
    return reshape(mixed, {spec_.grid, spec_.grid, spec_.channels});
}

Tensor teacher_forward(const FrozenTeacher& teacher, const Tensor& image) { return teacher.forward(image); }

Tensor project_teacher(const ProjectionMLP& p, const Tensor& raw) { return p.forward(raw); }

Tensor summarize(const ProjectionMLP& f_cg, const std::vector<Tensor>& unshuffled) {
    if (unshuffled.empty()) throw ShapeError("summarize: no teacher features");
    const std::size_t m = unshuffled.front().rows();
    std::size_t width = 0;
    for (std::size_t i = 0; i < unshuffled.size(); ++i) {
        if (unshuffled[i].rows() != m) {
            throw ShapeError("summarize: teacher " + std::to_string(i) + " has " + std::to_string(unshuffled[i].rows()) +
                             " tokens, expected " + std::to_string(m));
        }
        width += unshuffled[i].cols();
    }
    if (width != f_cg.in_width()) {
        throw ShapeError("summarize: concatenated width " + std::to_string(width) + " != summarizer input width " +
                         std::to_string(f_cg.in_width()));
    }
    return f_cg.forward(concat(unshuffled, 1));
}

TeacherBank::TeacherBank(const std::vector<TeacherSpec>& specs, std::size_t tokens, std::size_t image_side,
                         std::size_t image_channels)
    : tokens_(tokens) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
        specs[i].validate(tokens, i);
        teachers_.emplace_back(specs[i], image_side, image_channels);
    }
}

std::size_t TeacherBank::concat_width() const {
    std::size_t w = 0;
    for (const auto& t : teachers_) w += t.spec().aligned_width();
    return w;
}

std::vector<Tensor> TeacherBank::unshuffled_features(const Tensor& image) const {
    std::vector<Tensor> out;
    out.reserve(teachers_.size());
    for (const auto& t : teachers_) {
        const auto& s = t.spec();
        out.push_back(reshape(pixel_unshuffle(teacher_forward(t, image), s.unshuffle), {tokens_, s.aligned_width()}));
    }
    return out;
}

AlignedTeacherFeatures TeacherBank::align(const Tensor& image, const std::vector<ProjectionMLP>& projections,
                                          const ProjectionMLP& summarizer) const {
    if (projections.size() != teachers_.size()) {
        throw ShapeError("align: " + std::to_string(projections.size()) + " projections for " +
                         std::to_string(teachers_.size()) + " teachers");
    }
    AlignedTeacherFeatures out;
    out.raw = unshuffled_features(image);
    for (std::size_t i = 0; i < teachers_.size(); ++i) out.projected.push_back(project_teacher(projections[i], out.raw[i]));
    out.summarized = summarize(summarizer, out.raw);
    return out;
}

std::size_t image_side_for(std::size_t student_grid, const std::vector<TeacherSpec>& specs) {
    std::size_t side = student_grid;
    for (const auto& s : specs) side = std::lcm(side, s.grid);
    return side;
}

}  // namespace hawaii
