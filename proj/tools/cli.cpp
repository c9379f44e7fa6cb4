// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include "hawaii/autograd.hpp"
#include "hawaii/checkpoint.hpp"
#include "hawaii/config.hpp"
#include "hawaii/io.hpp"
#include "hawaii/run.hpp"
#include "hawaii/selftest.hpp"

namespace hawaii::cli {

namespace {

TrainConfig resolve_config(const std::string& path, const TrainConfig& fallback) {
    TrainConfig config = path.empty() ? fallback : load_config(path);
    apply_env_overrides(config);
    config.validate();
    return config;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, const std::string& resume,
              std::ostream& out) {
    const TrainConfig config = resolve_config(config_path, TrainConfig{});
    RunOptions options;
    options.out_dir = out_dir.empty() ? config.output_dir : out_dir;
    if (!resume.empty()) options.resume = resume;
    const RunResult result = run_training(config, options);
    if (!result.reports.empty()) {
        const auto& last = result.reports.back();
        out << "step " << last.step << " loss_total " << format_double(last.losses.total) << " loss_cg "
            << format_double(last.losses.cg) << " loss_fg " << format_double(last.losses.fg) << '\n';
    }
    out << "wrote " << options.out_dir.string() << '\n';
    return kOk;
}

int cmd_gradcheck(const std::string& config_path, const std::string& corrupt_rule, std::ostream& out) {
    const TrainConfig config = resolve_config(config_path, minimal_config());
    if (!corrupt_rule.empty()) debug::corrupt_backward_rule(corrupt_rule);
    const GradcheckReport report = run_gradcheck(config);
    debug::corrupt_backward_rule("");
    for (const auto& g : report.groups) {
        out << group_name(g.group) << " elements " << g.elements << " max_rel_error "
            << format_double(g.max_rel_error) << " worst " << g.worst_param << '\n';
    }
    out << (report.passed ? "gradcheck passed" : "gradcheck FAILED") << " max_rel_error "
        << format_double(report.max_rel_error) << '\n';
    return report.passed ? kOk : kVerificationFailed;
}

int cmd_route_stats(const std::string& checkpoint, const std::string& config_path, std::size_t samples,
                    const std::string& csv, std::ostream& out, std::ostream& err) {
    if (samples == 0) {
        err << "route-stats: --samples must be positive\n";
        return kInvalidInput;
    }
    const TrainConfig config = resolve_config(config_path, TrainConfig{});
    HawaiiModel model(config);
    OptimizerState optimizer;
    load_checkpoint(checkpoint, model, optimizer);
    const RoutingStats stats = collect_route_stats(model, SyntheticDataset(config), samples);
    stats.write_csv(csv);
    for (std::size_t layer = 0; layer < stats.layers(); ++layer) {
        for (RouterKind kind : {RouterKind::Teacher, RouterKind::General}) {
            out << "layer " << layer << ' ' << router_kind_name(kind) << " usage_entropy "
                << format_double(stats.entry(layer, kind).usage_entropy()) << '\n';
        }
    }
    return kOk;
}

int cmd_selftest(std::ostream& out) {
    bool ok = true;
    for (const auto& r : run_selftest()) {
        out << format_result(r) << '\n';
        ok = ok && r.passed;
    }
    return ok ? kOk : kVerificationFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hierarchical multi-teacher distillation with routed LoRA adapters", "hawaii"};
    app.require_subcommand(1);

    std::string config_path, out_dir, resume, checkpoint, csv, corrupt_rule;
    std::size_t samples = 64;

    auto* train = app.add_subcommand("train", "Train and write metrics, checkpoints and routing exports");
    train->add_option("--config", config_path, "JSON config (defaults when omitted)");
    train->add_option("--out", out_dir, "Output directory (config output_dir when omitted)");
    train->add_option("--resume", resume, "Checkpoint to continue from");

    auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    gradcheck->add_option("--config", config_path, "JSON config (minimal config when omitted)");
    gradcheck->add_option("--corrupt-rule", corrupt_rule)->group("");

    auto* route = app.add_subcommand("route-stats", "Export expert usage of a checkpoint");
    route->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    route->add_option("--config", config_path, "Config the checkpoint was trained with");
    route->add_option("--samples", samples, "Number of dataset samples to route");
    route->add_option("--out", csv, "CSV output path")->required();

    auto* selftest = app.add_subcommand("selftest", "Run the invariant suite");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << '\n';
        return kInvalidInput;
    }

    try {
        if (*train) return cmd_train(config_path, out_dir, resume, out);
        if (*gradcheck) return cmd_gradcheck(config_path, corrupt_rule, out);
        if (*route) return cmd_route_stats(checkpoint, config_path, samples, csv, out, err);
        if (*selftest) return cmd_selftest(out);
    } catch (const ConfigError& e) {
        err << "invalid config: " << e.what() << '\n';
        return kInvalidInput;
    } catch (const GradcheckError& e) {
        err << "gradcheck: " << e.what() << '\n';
        return kInvalidInput;
    } catch (const NonFiniteError& e) {
        err << "aborted: " << e.what() << '\n';
        return kNonFiniteLoss;
    } catch (const CheckpointError& e) {
        err << "checkpoint: " << e.what() << '\n';
        return kIoError;
    } catch (const IoError& e) {
        err << "i/o: " << e.what() << '\n';
        return kIoError;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "i/o: " << e.what() << '\n';
        return kIoError;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kInternalError;
    }
    return kInvalidInput;
}

}  // namespace hawaii::cli
