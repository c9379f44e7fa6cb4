// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>

#include <openssl/evp.h>

#include <json.hpp>

#include "hawaii/autograd.hpp"

namespace hawaii {

StageSchedule StageSchedule::for_stage(Stage stage) {
    StageSchedule s;
    s.stage = stage;
    for (ParamGroup g : all_groups()) {
        const bool base = g == ParamGroup::PatchEmbed || g == ParamGroup::EncoderBase;
        if (stage == Stage::Finetune || !base) s.trainable.insert(g);
    }
    return s;
}

void apply_schedule(ParamRegistry& params, const StageSchedule& schedule) {
    for (auto& p : params.params()) p.tensor.set_requires_grad(schedule.trains(p.group));
}

void adam_update(OptimizerState& state, const std::vector<NamedParam>& params) {
    const auto& cfg = state.settings;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (const auto& p : params) {
        Tensor param = p.tensor;
        const std::size_t n = param.numel();
        auto& mom = state.moments[p.name];
        if (mom.first.empty()) {
            mom.first.assign(n, 0.0);
            mom.second.assign(n, 0.0);
        } else if (mom.first.size() != n || mom.second.size() != n) {
            throw ShapeError("adam_update: optimizer state for '" + p.name + "' has " +
                             std::to_string(mom.first.size()) + " elements, parameter has " + std::to_string(n));
        }
        const std::vector<double> grad = param.grad();
        auto value = param.mutable_data();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = grad[i];
            mom.first[i] = cfg.beta1 * mom.first[i] + (1.0 - cfg.beta1) * g;
            mom.second[i] = cfg.beta2 * mom.second[i] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = mom.first[i] / c1;
            const double v_hat = mom.second[i] / c2;
            value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        }
    }
}

RoutingStats accumulate_routing(const std::vector<std::vector<LayerRouting>>& records, std::size_t layers,
                                std::size_t teacher_experts, std::size_t general_experts) {
    RoutingStats stats(layers, teacher_experts, general_experts);
    for (const auto& r : records) stats.observe(r);
    return stats;
}

StepReport train_step(HawaiiModel& model, OptimizerState& optimizer, const SyntheticSample& sample,
                      const StageSchedule& schedule, const LossWeights& weights) {
    const auto start = std::chrono::steady_clock::now();
    auto& params = model.params();
    apply_schedule(params, schedule);

    StepReport report;
    {
        Tape tape;
        TapeScope scope(tape);
        ForwardResult fwd = model.forward(sample, weights);
        tape.backward(fwd.total.total);

        report.losses = fwd.total.bundle;
        const auto& cfg = model.config();
        report.routing = RoutingStats(cfg.depth, cfg.num_teachers, cfg.num_general);
        report.routing.observe(fwd.full.routing);
        for (std::size_t i = 0; i < fwd.teacher_only.size(); ++i) {
            report.teacher_cosine.push_back(mean_row_cosine(fwd.teacher_only[i], fwd.teachers.projected[i]));
            report.scores.push_back(fwd.scores.per_teacher[i].to_vector());
        }
    }

    std::vector<NamedParam> trainable;
    for (const auto& p : params.params())
        if (schedule.trains(p.group)) trainable.push_back(p);
    adam_update(optimizer, trainable);
    params.zero_grad();

    report.step = static_cast<std::size_t>(optimizer.step);
    report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return report;
}

Trainer::Trainer(const TrainConfig& config)
    : config_(config), model_(config), dataset_(config), schedule_(StageSchedule::for_stage(config.stage)) {
    optimizer_.settings.lr = config.lr;
}

StepReport Trainer::step() {
    const SyntheticSample sample = dataset_.sample(steps_done() % dataset_.size());
    return train_step(model_, optimizer_, sample, schedule_, weights_of(config_));
}

std::string metrics_line(const StepReport& report, bool include_wall_time) {
    nlohmann::ordered_json entropy = nlohmann::ordered_json::array();
    for (std::size_t l = 0; l < report.routing.layers(); ++l) {
        entropy.push_back({{"layer", l},
                           {"teacher", report.routing.entry(l, RouterKind::Teacher).usage_entropy()},
                           {"general", report.routing.entry(l, RouterKind::General).usage_entropy()}});
    }
    nlohmann::ordered_json j{{"step", report.step},
                             {"loss_total", report.losses.total},
                             {"loss_gen", report.losses.gen},
                             {"loss_cg", report.losses.cg},
                             {"loss_fg", report.losses.fg},
                             {"loss_mb", report.losses.mb},
                             {"router_entropy", entropy},
                             {"wall_ms", include_wall_time ? report.wall_ms : 0.0}};
    return j.dump();
}

std::string group_digest(const ParamRegistry& params, ParamGroup group) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("SHA-256 initialization failed");
    }
    for (const auto& p : params.params()) {
        if (p.group != group) continue;
        EVP_DigestUpdate(ctx, p.name.data(), p.name.size());
        const auto d = p.tensor.data();
        EVP_DigestUpdate(ctx, d.data(), d.size() * sizeof(double));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

}  // namespace hawaii
