// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "hawaii/autograd.hpp"
#include "hawaii/checkpoint.hpp"
#include "hawaii/io.hpp"
#include "hawaii/ops.hpp"

namespace hawaii {

namespace {

std::string checkpoint_name(std::size_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_%06zu.hkpt", step);
    return buf;
}

// Metrics lines from an earlier run that precede the resume point.
std::vector<std::string> carried_metrics(const std::filesystem::path& file, std::size_t last_step) {
    std::vector<std::string> lines;
    if (!std::filesystem::exists(file)) return lines;
    std::istringstream in(read_file(file));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("step")) continue;
        if (j.at("step").get<std::size_t>() <= last_step) lines.push_back(line);
    }
    return lines;
}

void write_metrics(const std::filesystem::path& file, const std::vector<std::string>& lines) {
    std::string text;
    for (const auto& l : lines) {
        text += l;
        text += '\n';
    }
    write_file_atomic(file, text);
}

}  // namespace

RunResult run_training(const TrainConfig& config, const RunOptions& options) {
    std::filesystem::create_directories(options.out_dir);
    Trainer trainer(config);
    if (options.resume) load_checkpoint(*options.resume, trainer.model(), trainer.optimizer());

    const auto metrics_file = options.out_dir / "metrics.jsonl";
    std::vector<std::string> lines;
    if (options.resume) lines = carried_metrics(metrics_file, trainer.steps_done());

    RunResult result;
    result.routing = RoutingStats(config.depth, config.num_teachers, config.num_general);
    try {
        while (trainer.steps_done() < config.steps) {
            StepReport report = trainer.step();
            lines.push_back(metrics_line(report, config.log_wall_time));
            result.routing.merge(report.routing);
            const std::size_t done = report.step;
            result.reports.push_back(std::move(report));
            if (done % config.checkpoint_every == 0) {
                save_checkpoint(trainer.model(), trainer.optimizer(), options.out_dir / checkpoint_name(done));
                write_metrics(metrics_file, lines);
            }
        }
    } catch (const NonFiniteError&) {
        write_metrics(metrics_file, lines);
        throw;
    }

    write_metrics(metrics_file, lines);
    save_checkpoint(trainer.model(), trainer.optimizer(), options.out_dir / "final.hkpt");
    result.routing.write_csv(options.out_dir / "routing_stats.csv");
    if (!result.reports.empty()) {
        ImportanceScores scores;
        const auto& last = result.reports.back().scores;
        for (const auto& s : last) scores.per_teacher.push_back(Tensor::from({1, s.size()}, s));
        export_score_map(scores, options.out_dir / "score_maps.csv");
    }
    return result;
}

RoutingStats collect_route_stats(const HawaiiModel& model, const SyntheticDataset& dataset, std::size_t samples) {
    const auto& cfg = model.config();
    RoutingStats stats(cfg.depth, cfg.num_teachers, cfg.num_general);
    for (std::size_t i = 0; i < samples; ++i) {
        const auto sample = dataset.sample(i % dataset.size());
        stats.observe(model.encoder().encode(sample.image, ForwardMode::full()).routing);
    }
    return stats;
}

double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

void randomize_adapters(HawaiiModel& model, std::uint64_t seed, double stddev) {
    Rng rng(seed);
    for (auto& block : model.encoder().blocks()) {
        for (auto* family : {&block.mola.teacher_adapters, &block.mola.general_adapters}) {
            for (auto& adapter : *family) {
                for (double& v : adapter.down.mutable_data()) v = rng.normal(0.0, stddev);
                for (double& v : adapter.up.mutable_data()) v = rng.normal(0.0, stddev);
            }
        }
    }
}

GradcheckReport run_gradcheck(const TrainConfig& config, double eps, double tolerance) {
    HawaiiModel model(config);
    if (model.params().element_count() > kGradcheckMaxParams) {
        throw GradcheckError("model has " + std::to_string(model.params().element_count()) +
                             " parameters; gradcheck allows at most " + std::to_string(kGradcheckMaxParams));
    }
    randomize_adapters(model, config.seed + 17, 0.5);
    const SyntheticDataset dataset(config);
    const SyntheticSample sample = dataset.sample(0);
    const LossWeights weights = weights_of(config);
    const StageSchedule schedule = StageSchedule::for_stage(config.stage);

    auto& params = model.params();
    apply_schedule(params, schedule);
    params.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(model.forward(sample, weights).total.total);
    }

    auto loss_at = [&](const Tensor&) { return model.forward(sample, weights).total.bundle.total; };

    GradcheckReport report;
    for (ParamGroup group : all_groups()) {
        if (!schedule.trains(group)) continue;
        GroupGradReport g{group, 0, 0.0, ""};
        for (auto& p : params.params()) {
            if (p.group != group) continue;
            const std::vector<double> analytic = p.tensor.grad();
            const Tensor numeric = finite_difference_grad(loss_at, p.tensor, eps);
            const auto nd = numeric.data();
            for (std::size_t i = 0; i < analytic.size(); ++i) {
                const double err = relative_error(analytic[i], nd[i]);
                if (err > g.max_rel_error || g.worst_param.empty()) {
                    g.max_rel_error = std::max(err, g.max_rel_error);
                    g.worst_param = p.name + "[" + std::to_string(i) + "]";
                }
            }
            g.elements += analytic.size();
        }
        if (g.elements == 0) continue;
        report.max_rel_error = std::max(report.max_rel_error, g.max_rel_error);
        report.groups.push_back(std::move(g));
    }
    params.zero_grad();
    report.passed = report.max_rel_error < tolerance;
    return report;
}

}  // namespace hawaii
