// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/losses.hpp"

#include <cmath>
#include <sstream>

#include "hawaii/io.hpp"
#include "hawaii/ops.hpp"

namespace hawaii {

Tensor token_importance(const Tensor& proj_teacher, const Tensor& proj_instr) {
    if (proj_teacher.rank() != 2 || proj_instr.rank() != 2 || proj_teacher.cols() != proj_instr.cols()) {
        throw ShapeError("token_importance: width mismatch between teacher " + shape_to_string(proj_teacher.shape()) +
                         " and instruction " + shape_to_string(proj_instr.shape()));
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(proj_teacher.cols()));
    Tensor queries = concat({proj_teacher, proj_instr}, 0);
    Tensor attn = softmax_rows(scale(matmul(queries, transpose(proj_teacher)), inv_sqrt_d));
    return mean_rows(attn);
}

Tensor fine_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
                 const ImportanceScores& scores) {
    const std::size_t n = student.size();
    if (n == 0 || teacher.size() != n || scores.per_teacher.size() != n) {
        throw ShapeError("fine_loss: expected equal non-empty lists, got " + std::to_string(student.size()) +
                         " student, " + std::to_string(teacher.size()) + " teacher, " +
                         std::to_string(scores.per_teacher.size()) + " score tensors");
    }
    Tensor acc;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor per_token = per_token_mse(student[i], teacher[i]);
        const std::size_t m = per_token.numel();
        if (scores.per_teacher[i].shape() != Shape{1, m}) {
            throw ShapeError("fine_loss: scores for teacher " + std::to_string(i) + " have shape " +
                             shape_to_string(scores.per_teacher[i].shape()) + ", expected [1x" + std::to_string(m) + "]");
        }
        Tensor term = sum(mul(scores.per_teacher[i], reshape(per_token, {1, m})));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scale(acc, 1.0 / static_cast<double>(n));
}

Tensor coarse_loss(const Tensor& student, const Tensor& summarized) { return mse(student, summarized); }

Tensor router_balance(const RouterObservation& obs) {
    const std::size_t n = obs.indices.size();
    const std::size_t e = obs.num_experts();
    if (n == 0 || obs.probs.rows() != n) throw Error("balance loss: empty routing record");
    std::vector<double> fraction(e, 0.0);
    for (auto idx : obs.indices) fraction[idx] += 1.0;
    for (double& f : fraction) f /= static_cast<double>(n);
    Tensor f = Tensor::from({1, e}, std::move(fraction));
    return scale(sum(mul(f, mean_rows(obs.probs))), static_cast<double>(e));
}

Tensor balance_loss(std::span<const LayerRouting> routing) {
    if (routing.empty()) throw Error("balance loss: empty routing record");
    Tensor acc;
    for (const auto& layer : routing) {
        Tensor both = add(router_balance(layer.teacher), router_balance(layer.general));
        acc = acc.defined() ? add(acc, both) : both;
    }
    return scale(acc, 1.0 / static_cast<double>(2 * routing.size()));
}

GenHead GenHead::init(std::size_t width, std::size_t lm_width, std::size_t vocab, Rng& rng) {
    auto projector = ProjectionMLP::init(width, lm_width, lm_width, rng);
    auto embedding = rng.normal_tensor({vocab + 1, lm_width}, 1.0, true);
    auto decoder = Linear::init(lm_width, vocab, rng);
    return GenHead{std::move(projector), std::move(embedding), std::move(decoder)};
}

Tensor GenHead::embed(std::span<const std::size_t> ids) const {
    for (auto id : ids) {
        if (id > vocab()) throw Error("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab()));
    }
    return gather_rows(embedding, ids);
}

void GenHead::collect(ParamRegistry& reg) const {
    projector.collect(reg, "projector", ParamGroup::Projector);
    reg.add("gen_head.embedding", ParamGroup::GenHead, embedding);
    decoder.collect(reg, "gen_head.decoder", ParamGroup::GenHead);
}

Tensor gen_logits(const GenHead& head, const Tensor& student, const Tensor& instr,
                  std::span<const std::size_t> targets) {
    if (targets.empty()) throw Error("gen_loss: empty response");
    for (std::size_t t = 0; t < targets.size(); ++t) {
        if (targets[t] >= head.vocab()) {
            throw Error("gen_loss: target " + std::to_string(targets[t]) + " at position " + std::to_string(t) +
                        " outside vocabulary of " + std::to_string(head.vocab()));
        }
    }
    Tensor visual = head.projector.forward(student);
    Tensor context = mean_rows(concat({visual, instr}, 0));
    std::vector<std::size_t> previous{head.bos()};
    previous.insert(previous.end(), targets.begin(), targets.end() - 1);
    Tensor states = scale(add_row(head.embed(previous), context), 0.5);
    return head.decoder.forward(states);
}

Tensor gen_loss(const GenHead& head, const Tensor& student, const Tensor& instr,
                std::span<const std::size_t> targets) {
    return cross_entropy(gen_logits(head, student, instr, targets), targets);
}

TotalLoss total_loss(const LossTerms& terms, const LossWeights& weights) {
    const std::pair<const char*, const Tensor*> parts[] = {
        {"loss_gen", &terms.gen}, {"loss_cg", &terms.cg}, {"loss_fg", &terms.fg}, {"loss_mb", &terms.mb}};
    for (const auto& [name, t] : parts) {
        if (!t->defined() || t->numel() != 1) throw Error(std::string("total_loss: ") + name + " is not a scalar");
        if (!std::isfinite(t->item())) throw NonFiniteError(std::string("non-finite loss component ") + name);
    }
    Tensor total = add(add(terms.gen, scale(add(terms.fg, terms.cg), weights.lambda1)), scale(terms.mb, weights.lambda2));
    LossBundle bundle{terms.gen.item(), terms.cg.item(), terms.fg.item(), terms.mb.item(),
                      total.item(),     weights.lambda1, weights.lambda2};
    return TotalLoss{std::move(total), bundle};
}

const char* router_kind_name(RouterKind kind) { return kind == RouterKind::Teacher ? "teacher" : "general"; }

std::vector<double> RoutingStats::Entry::fractions() const {
    std::vector<double> out(counts.size(), 0.0);
    if (tokens == 0) return out;
    for (std::size_t e = 0; e < counts.size(); ++e) out[e] = static_cast<double>(counts[e]) / static_cast<double>(tokens);
    return out;
}

std::vector<double> RoutingStats::Entry::mean_probs() const {
    std::vector<double> out(prob_sums.size(), 0.0);
    if (tokens == 0) return out;
    for (std::size_t e = 0; e < prob_sums.size(); ++e) out[e] = prob_sums[e] / static_cast<double>(tokens);
    return out;
}

double RoutingStats::Entry::usage_entropy() const {
    double h = 0.0;
    for (double f : fractions())
        if (f > 0.0) h -= f * std::log(f);
    return h;
}

RoutingStats::RoutingStats(std::size_t layers, std::size_t teacher_experts, std::size_t general_experts) {
    entries_.resize(layers);
    for (auto& layer : entries_) {
        layer[0].counts.assign(teacher_experts, 0);
        layer[0].prob_sums.assign(teacher_experts, 0.0);
        layer[1].counts.assign(general_experts, 0);
        layer[1].prob_sums.assign(general_experts, 0.0);
    }
}

namespace {

void observe_router(RoutingStats::Entry& entry, const RouterObservation& obs) {
    if (obs.num_experts() != entry.counts.size()) throw ShapeError("routing stats: expert count mismatch");
    const auto p = obs.probs.data();
    const std::size_t e = obs.num_experts();
    for (std::size_t t = 0; t < obs.indices.size(); ++t) {
        entry.counts[obs.indices[t]] += 1;
        for (std::size_t j = 0; j < e; ++j) entry.prob_sums[j] += p[t * e + j];
    }
    entry.tokens += obs.indices.size();
}

void merge_entry(RoutingStats::Entry& into, const RoutingStats::Entry& from) {
    if (into.counts.size() != from.counts.size()) throw ShapeError("routing stats: expert count mismatch on merge");
    for (std::size_t e = 0; e < into.counts.size(); ++e) {
        into.counts[e] += from.counts[e];
        into.prob_sums[e] += from.prob_sums[e];
    }
    into.tokens += from.tokens;
}

}  // namespace

void RoutingStats::observe(std::span<const LayerRouting> routing) {
    if (routing.size() != entries_.size()) {
        throw ShapeError("routing stats: " + std::to_string(routing.size()) + " layers observed, expected " +
                         std::to_string(entries_.size()));
    }
    for (std::size_t l = 0; l < routing.size(); ++l) {
        observe_router(entries_[l][0], routing[l].teacher);
        observe_router(entries_[l][1], routing[l].general);
    }
}

void RoutingStats::merge(const RoutingStats& other) {
    if (entries_.empty()) {
        *this = other;
        return;
    }
    if (other.entries_.size() != entries_.size()) throw ShapeError("routing stats: layer count mismatch on merge");
    for (std::size_t l = 0; l < entries_.size(); ++l) {
        merge_entry(entries_[l][0], other.entries_[l][0]);
        merge_entry(entries_[l][1], other.entries_[l][1]);
    }
}

const RoutingStats::Entry& RoutingStats::entry(std::size_t layer, RouterKind kind) const {
    return entries_.at(layer)[kind == RouterKind::Teacher ? 0 : 1];
}

double RoutingStats::mean_usage_entropy() const {
    if (entries_.empty()) return 0.0;
    double h = 0.0;
    for (const auto& layer : entries_) h += layer[0].usage_entropy() + layer[1].usage_entropy();
    return h / static_cast<double>(2 * entries_.size());
}

void RoutingStats::write_csv(const std::filesystem::path& path) const {
    std::ostringstream out;
    out << "layer,router,expert,count,fraction\n";
    for (std::size_t l = 0; l < entries_.size(); ++l) {
        for (RouterKind kind : {RouterKind::Teacher, RouterKind::General}) {
            const Entry& e = entry(l, kind);
            const auto frac = e.fractions();
            for (std::size_t x = 0; x < e.counts.size(); ++x) {
                out << l << ',' << router_kind_name(kind) << ',' << x << ',' << e.counts[x] << ','
                    << format_double(frac[x]) << '\n';
            }
        }
    }
    write_file_atomic(path, out.str());
}

void export_score_map(const ImportanceScores& scores, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "teacher_index,token_index,score\n";
    for (std::size_t i = 0; i < scores.per_teacher.size(); ++i) {
        const auto d = scores.per_teacher[i].data();
        for (std::size_t j = 0; j < d.size(); ++j) out << i << ',' << j << ',' << format_double(d[j]) << '\n';
    }
    write_file_atomic(path, out.str());
}

}  // namespace hawaii
