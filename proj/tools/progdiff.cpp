// progdiff: progressive diffusion training at toy scale. Subcommands plan,
// train-base, prune, finetune, pipeline, single-stage, ablate-schedule,
// sample, eval, report. Exit codes: 0 success, 1 usage error, 2 runtime.

#include "pd/config.hpp"
#include "pd/errors.hpp"
#include "pd/kernels.hpp"
#include "pd/metrics.hpp"
#include "pd/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::int64_t seed = -1;
    std::string proxy;
    int groups = 0;
    double k = 0.0;
    bool no_prune = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_config, bool needs_out) {
    auto* config = cmd->add_option("--config", args.config_path, "experiment config file");
    if (needs_config) config->required();
    auto* out = cmd->add_option("--out", args.out_dir, "experiment directory");
    if (needs_out) out->required();
    cmd->add_option("--seed", args.seed, "override training.seed");
    cmd->add_option("--proxy", args.proxy, "override pruning.proxy")
        ->check(CLI::IsMember({"random", "magnitude", "taylor", "llm"}));
    cmd->add_option("--groups", args.groups, "override allocation.groups");
    cmd->add_option("--k", args.k, "override allocation.k");
}

pd::ExperimentConfig resolve_config(const CLI::App* cmd, const CommonArgs& args) {
    auto cfg = pd::load_config(args.config_path);
    if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
    if (cmd->count("--proxy")) cfg.proxy = args.proxy;
    if (cmd->count("--groups")) cfg.groups = args.groups;
    if (cmd->count("--k")) cfg.k = args.k;
    cfg.validate();
    return cfg;
}

pd::ExperimentPaths paths_for(const CommonArgs& args) {
    pd::ExperimentPaths paths;
    paths.root = fs::path(args.out_dir);
    return paths;
}

void print_report_table(const ordered_json& report) {
    std::printf("mode        %s\n", report.at("mode").get<std::string>().c_str());
    std::printf("settings    %s\n", report.at("settings").get<std::string>().c_str());
    if (!report.at("stage1").is_null()) {
        std::printf("stage1      %lld steps, final loss %.6f\n",
                    report.at("stage1").at("steps").get<long long>(),
                    report.at("stage1").at("final_loss").get<double>());
    }
    std::printf("%-6s %12s %14s %10s %12s\n", "group", "limit", "achieved", "steps", "loss");
    for (const auto& g : report.at("groups")) {
        const int index = g.at("index").get<int>();
        if (g.value("skipped", false)) {
            std::printf("%-6d %12s %14s %10s %12s\n", index, "-", "-", "-", "skipped");
            continue;
        }
        const auto& stage = g.contains("finetune") ? g.at("finetune") : g.at("train");
        std::printf("%-6d %12lld %14lld %10lld %12.6f\n", index,
                    g.at("flops_limit").get<long long>(),
                    g.at("achieved_flops").get<long long>(),
                    stage.at("steps").get<long long>(),
                    stage.at("final_loss").get<double>());
    }
    const auto& flops = report.at("flops");
    std::printf("flops       base %lld, trajectory mean %.1f (ratio %.4f)\n",
                flops.at("base").get<long long>(),
                flops.at("trajectory_mean").get<double>(),
                flops.at("trajectory_mean_ratio").get<double>());
    const auto& metrics = report.at("metrics");
    std::printf("metrics     energy %.6f, sliced-wasserstein %.6f (%d samples)\n",
                metrics.at("energy_distance").get<double>(),
                metrics.at("sliced_wasserstein").get<double>(),
                metrics.at("samples").get<int>());
    std::printf("ledger      %lld total train steps\n",
                report.at("ledger").at("total_train_steps").get<long long>());
}

int run(int argc, char** argv) {
    CLI::App app{"two-stage grouped training for toy diffusion models"};
    app.require_subcommand(1);

    CommonArgs plan_args, base_args, prune_args, finetune_args, pipe_args, single_args,
        ablate_args, sample_args, eval_args;

    auto* plan_cmd = app.add_subcommand("plan", "write the FLOPs plan, no training");
    add_common(plan_cmd, plan_args, true, false);

    auto* base_cmd = app.add_subcommand("train-base", "stage 1: train the base model");
    add_common(base_cmd, base_args, true, true);
    base_cmd->add_flag("--no-prune", base_args.no_prune, "stamp the run as no-prune mode");

    auto* prune_cmd = app.add_subcommand("prune", "stage 2a: prune per group");
    add_common(prune_cmd, prune_args, true, true);

    auto* finetune_cmd = app.add_subcommand("finetune", "stage 2b: fine-tune per group");
    add_common(finetune_cmd, finetune_args, true, true);
    finetune_cmd->add_flag("--no-prune", finetune_args.no_prune,
                           "fine-tune the unpruned base per group");

    auto* pipe_cmd = app.add_subcommand("pipeline", "full two-stage run plus evaluation");
    add_common(pipe_cmd, pipe_args, true, true);
    pipe_cmd->add_flag("--no-prune", pipe_args.no_prune, "skip pruning, keep the base width");

    auto* single_cmd =
        app.add_subcommand("single-stage", "per-group from-scratch baseline at matched budget");
    add_common(single_cmd, single_args, true, true);

    auto* ablate_cmd =
        app.add_subcommand("ablate-schedule", "run snr/constant/uni-increasing/uni-decreasing");
    add_common(ablate_cmd, ablate_args, true, true);
    std::string ablate_shape = "all";
    ablate_cmd->add_option("--shape", ablate_shape, "one shape instead of the full sweep")
        ->check(CLI::IsMember({"all", "snr", "constant", "uni-increasing", "uni-decreasing"}));

    auto* sample_cmd = app.add_subcommand("sample", "export samples.csv from checkpoints");
    add_common(sample_cmd, sample_args, true, true);
    int sample_count = 0;
    int sample_steps = 0;
    sample_cmd->add_option("--samples", sample_count, "sample count (default dataset.size)");
    sample_cmd->add_option("--steps", sample_steps, "sampling steps (default sampling.steps)");

    auto* eval_cmd = app.add_subcommand("eval", "recompute metrics and report.json");
    add_common(eval_cmd, eval_args, true, true);

    auto* report_cmd = app.add_subcommand("report", "print the run report table");
    std::string report_dir;
    report_cmd->add_option("--out", report_dir, "experiment directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (plan_cmd->parsed()) {
            const auto cfg = resolve_config(plan_cmd, plan_args);
            const auto ctx = pd::make_plan(cfg);
            const auto text = pd::format_plan(ctx.plan, ctx.profile, ctx.budget);
            const fs::path out_dir =
                plan_args.out_dir.empty() ? fs::path(".") : fs::path(plan_args.out_dir);
            fs::create_directories(out_dir);
            std::ofstream out(out_dir / "plan.txt", std::ios::trunc);
            out << text;
            std::cout << text;
            return 0;
        }
        if (base_cmd->parsed()) {
            const auto cfg = resolve_config(base_cmd, base_args);
            const auto ctx = pd::make_plan(cfg);
            auto paths = paths_for(base_args);
            pd::DirLock lock(paths);
            pd::prepare_experiment(paths, cfg, ctx,
                                   base_args.no_prune ? "two-stage-no-prune" : "two-stage");
            pd::run_stage1(cfg, ctx, paths);
            return 0;
        }
        if (prune_cmd->parsed()) {
            const auto cfg = resolve_config(prune_cmd, prune_args);
            const auto ctx = pd::make_plan(cfg);
            auto paths = paths_for(prune_args);
            pd::DirLock lock(paths);
            pd::prepare_experiment(paths, cfg, ctx, "two-stage");
            if (!fs::exists(paths.base_ckpt())) {
                throw pd::Error("no base checkpoint under " + paths.root.string() +
                                "; run train-base first");
            }
            const auto base = pd::load_checkpoint(paths.base_ckpt());
            pd::run_prune_stage(cfg, ctx, paths, base);
            return 0;
        }
        if (finetune_cmd->parsed()) {
            const auto cfg = resolve_config(finetune_cmd, finetune_args);
            const auto ctx = pd::make_plan(cfg);
            auto paths = paths_for(finetune_args);
            pd::DirLock lock(paths);
            pd::prepare_experiment(paths, cfg, ctx,
                                   finetune_args.no_prune ? "two-stage-no-prune" : "two-stage");
            if (!fs::exists(paths.base_ckpt())) {
                throw pd::Error("no base checkpoint under " + paths.root.string() +
                                "; run train-base first");
            }
            const auto base = pd::load_checkpoint(paths.base_ckpt());
            pd::run_finetune_stage(cfg, ctx, paths, base, !finetune_args.no_prune);
            return 0;
        }
        if (pipe_cmd->parsed()) {
            if (pipe_args.no_prune && pipe_cmd->count("--proxy")) {
                throw pd::UsageError("--no-prune together with --proxy makes no sense: "
                                     "no pruning runs, so no proxy is consulted");
            }
            const auto cfg = resolve_config(pipe_cmd, pipe_args);
            auto paths = paths_for(pipe_args);
            pd::DirLock lock(paths);
            const auto text = pd::two_stage_train(cfg, paths, !pipe_args.no_prune);
            print_report_table(ordered_json::parse(text));
            return 0;
        }
        if (single_cmd->parsed()) {
            const auto cfg = resolve_config(single_cmd, single_args);
            auto paths = paths_for(single_args);
            pd::DirLock lock(paths);
            const auto text = pd::single_stage_train(cfg, paths);
            print_report_table(ordered_json::parse(text));
            return 0;
        }
        if (ablate_cmd->parsed()) {
            const auto cfg = resolve_config(ablate_cmd, ablate_args);
            auto paths = paths_for(ablate_args);
            pd::DirLock lock(paths);
            std::vector<pd::TargetShape> shapes;
            if (ablate_shape == "all") {
                shapes = {pd::TargetShape::Snr, pd::TargetShape::Constant,
                          pd::TargetShape::UniIncreasing, pd::TargetShape::UniDecreasing};
            } else {
                shapes = {pd::target_shape_from_string(ablate_shape)};
            }
            std::printf("%-16s %14s %14s %10s\n", "shape", "energy", "sliced-w", "ratio");
            for (const auto shape : shapes) {
                const auto text = pd::schedule_ablation_run(cfg, paths, shape);
                const auto report = ordered_json::parse(text);
                std::printf("%-16s %14.6f %14.6f %10.4f\n", pd::to_string(shape).c_str(),
                            report.at("metrics").at("energy_distance").get<double>(),
                            report.at("metrics").at("sliced_wasserstein").get<double>(),
                            report.at("flops").at("trajectory_mean_ratio").get<double>());
            }
            return 0;
        }
        if (sample_cmd->parsed()) {
            const auto cfg = resolve_config(sample_cmd, sample_args);
            const auto ctx = pd::make_plan(cfg);
            auto paths = paths_for(sample_args);
            pd::DirLock lock(paths);
            const auto bank = pd::load_bank(cfg, ctx, paths);
            const int n = sample_count > 0 ? sample_count : cfg.dataset_size;
            const int steps = sample_steps > 0 ? sample_steps : cfg.sample_steps;
            const auto samples = pd::ddim_sample(bank, ctx.schedule, steps, n,
                                                 pd::derive_seed(cfg.seed, "sample"));
            pd::write_samples_csv(samples, paths.samples_csv());
            std::cout << "wrote " << n << " samples to " << paths.samples_csv().string()
                      << "\n";
            return 0;
        }
        if (eval_cmd->parsed()) {
            const auto cfg = resolve_config(eval_cmd, eval_args);
            const auto ctx = pd::make_plan(cfg);
            auto paths = paths_for(eval_args);
            pd::DirLock lock(paths);
            std::string mode = "two-stage";
            if (std::ifstream marker(paths.mode_marker()); marker) {
                std::getline(marker, mode);
            }
            const auto text = pd::assemble_report(cfg, ctx, paths, mode);
            print_report_table(ordered_json::parse(text));
            return 0;
        }
        if (report_cmd->parsed()) {
            const fs::path file = fs::path(report_dir) / "report.json";
            std::ifstream in(file);
            if (!in) throw pd::Error("no report.json under " + report_dir);
            std::stringstream buf;
            buf << in.rdbuf();
            print_report_table(ordered_json::parse(buf.str()));
            return 0;
        }
    } catch (const pd::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    return run(argc, argv);
}
