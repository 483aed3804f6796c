#include "pd/pipeline.hpp"

#include "pd/errors.hpp"
#include "pd/kernels.hpp"
#include "pd/llm_proxy.hpp"
#include "pd/rng.hpp"

#include <json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

namespace pd {

namespace {

using nlohmann::ordered_json;

std::string now_stamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void atomic_write(const std::filesystem::path& path, const std::string& text) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        if (!out) throw Error("cannot open " + tmp + " for writing");
        out << text;
        if (!out) throw Error("write failure on " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

ordered_json read_json(const std::filesystem::path& path) {
    try {
        return ordered_json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

void write_or_verify(const std::filesystem::path& path, const std::string& text,
                     const std::string& what) {
    if (std::filesystem::exists(path)) {
        if (read_file(path) != text) {
            throw Error(path.string() + " already holds a different " + what +
                        "; use a fresh --out directory");
        }
        return;
    }
    atomic_write(path, text);
}

std::unique_ptr<Proxy> build_proxy(const ExperimentConfig& cfg, const Model& base,
                                   const NoiseSchedule& s, int group_index,
                                   const Batch& taylor_batch,
                                   const std::filesystem::path& prompt_dir) {
    if (cfg.proxy == "random") {
        return make_random_proxy(base, derive_seed(cfg.seed, "random-proxy", group_index));
    }
    if (cfg.proxy == "magnitude") return make_magnitude_proxy(base);
    if (cfg.proxy == "taylor") return make_taylor_proxy(base, taylor_batch, s);
    if (cfg.proxy == "llm") {
        LlmEndpoint endpoint = LlmEndpoint::from_env();
        endpoint.temperature = cfg.llm_temperature;
        endpoint.timeout_s = cfg.llm_timeout_s;
        endpoint.max_retries = cfg.llm_max_retries;
        endpoint.backoff_base_s = cfg.llm_backoff_s;
        return make_llm_proxy(std::move(endpoint), prompt_dir);
    }
    throw UsageError("unknown proxy '" + cfg.proxy + "'");
}

ordered_json scheme_to_json(const PruningScheme& scheme) {
    ordered_json remove = ordered_json::object();
    for (std::size_t l = 0; l < scheme.remove.size(); ++l) {
        remove[std::to_string(l)] = scheme.remove[l];
    }
    return remove;
}

PruningScheme scheme_from_json(const ordered_json& remove, int hidden_count) {
    PruningScheme scheme;
    scheme.remove.assign(hidden_count, {});
    for (auto it = remove.begin(); it != remove.end(); ++it) {
        const int l = std::stoi(it.key());
        if (l < 0 || l >= hidden_count) throw Error("scheme.json names layer " + it.key());
        scheme.remove[l] = it.value().get<std::vector<int>>();
    }
    return scheme;
}

} // namespace

DirLock::DirLock(const ExperimentPaths& paths) : path_(paths.lock_file()) {
    std::filesystem::create_directories(paths.root);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        throw Error("experiment directory " + paths.root.string() +
                    " is locked (remove the stale 'lock' file if no run is active)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

DirLock::~DirLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
}

void append_log(const ExperimentPaths& paths, const std::string& line) {
    std::filesystem::create_directories(paths.root);
    std::ofstream out(paths.log_txt(), std::ios::app);
    out << now_stamp() << " " << line << "\n";
    std::cout << line << "\n";
}

std::int64_t PlanContext::group_limit_flops(int i) const {
    return static_cast<std::int64_t>(std::floor(std::min(plan.upper[i], budget.f_max)));
}

std::vector<int> PlanContext::active_groups() const {
    std::vector<int> out;
    for (int i = 0; i < plan.group_count; ++i) {
        if (!plan.members[i].empty()) out.push_back(i);
    }
    return out;
}

PlanContext make_plan(const ExperimentConfig& cfg) {
    cfg.validate();
    PlanContext ctx;
    ctx.schedule = cfg.build_schedule();
    ctx.spec = cfg.model_spec();
    ctx.budget = FlopsBudget{cfg.k, static_cast<double>(count_flops(ctx.spec))};
    if (cfg.shape() == TargetShape::Snr) {
        ctx.profile = difficulty_profile(ctx.schedule, ctx.budget);
    } else {
        ctx.profile.flops_target = shaped_targets(cfg.shape(), ctx.schedule, ctx.budget);
        ctx.profile.s_n.assign(ctx.profile.flops_target.size(), 0.0);
    }
    std::vector<double> lower, upper;
    group_limits(cfg.groups, ctx.budget, lower, upper);
    ctx.plan = partition_timesteps(ctx.profile, lower, upper);
    return ctx;
}

void prepare_experiment(const ExperimentPaths& paths, const ExperimentConfig& cfg,
                        const PlanContext& ctx, const std::string& mode) {
    std::filesystem::create_directories(paths.base_dir());
    for (int i = 0; i < ctx.plan.group_count; ++i) {
        std::filesystem::create_directories(paths.group_dir(i));
    }
    write_or_verify(paths.mode_marker(), mode + "\n", "run mode");
    write_or_verify(paths.config_copy(), write_config(cfg), "config");
    atomic_write(paths.plan_txt(), format_plan(ctx.plan, ctx.profile, ctx.budget));
}

TrainResult train_loop(Model& m, const NoiseSchedule& s, ToyDataset data,
                       std::span<const int> active_timesteps, int steps, int batch_size,
                       float lr, std::uint64_t stream_seed,
                       const std::function<void(int, const Model&)>& on_checkpoint,
                       int checkpoint_every) {
    TrainResult result;
    if (steps == 0) {
        Rng rng(derive_seed(stream_seed, "batch", 0));
        const Batch probe = make_batch(data, active_timesteps, batch_size, rng);
        result.final_loss = loss(m, probe, s);
        return result;
    }

    AdamParams hp;
    hp.lr = lr;
    auto state = AdamState::like(m.params);
    for (int step = 0; step < steps; ++step) {
        Rng rng(derive_seed(stream_seed, "batch", static_cast<std::uint64_t>(step)));
        const Batch batch = make_batch(data, active_timesteps, batch_size, rng);
        const auto lg = grad(m, batch, s);
        if (!std::isfinite(lg.loss)) {
            throw Error("non-finite loss at step " + std::to_string(step) + " (stream seed " +
                        std::to_string(stream_seed) + ")");
        }
        adam_step(m.params, lg.grads, state, hp);
        result.final_loss = lg.loss;
        result.steps = step + 1;
        if (on_checkpoint && checkpoint_every > 0 && (step + 1) % checkpoint_every == 0) {
            on_checkpoint(step + 1, m);
        }
    }
    return result;
}

Model run_stage1(const ExperimentConfig& cfg, const PlanContext& ctx,
                 const ExperimentPaths& paths) {
    if (std::filesystem::exists(paths.base_ckpt()) &&
        std::filesystem::exists(paths.base_fragment())) {
        append_log(paths, "stage1: base checkpoint present, skipping");
        auto base = load_checkpoint(paths.base_ckpt());
        if (!(base.spec == ctx.spec)) {
            throw Error("base checkpoint spec does not match the config");
        }
        return base;
    }

    append_log(paths, "stage1: training base model for " + std::to_string(cfg.stage1_steps) +
                          " steps over all timesteps");
    Model base{ctx.spec, init_params(ctx.spec, derive_seed(cfg.seed, "base-init"))};
    std::vector<int> all(ctx.schedule.timestep_count);
    for (int t = 0; t < ctx.schedule.timestep_count; ++t) all[t] = t;

    const auto result = train_loop(
        base, ctx.schedule, cfg.dataset(), all, cfg.stage1_steps, cfg.batch_size,
        static_cast<float>(cfg.lr), derive_seed(cfg.seed, "stage1"),
        [&](int step, const Model& snapshot) {
            save_checkpoint(snapshot, paths.base_progress());
            append_log(paths, "stage1: checkpoint at step " + std::to_string(step));
        },
        cfg.checkpoint_every);

    save_checkpoint(base, paths.base_ckpt());
    ordered_json fragment = {{"steps", result.steps}, {"final_loss", result.final_loss}};
    atomic_write(paths.base_fragment(), fragment.dump(2) + "\n");
    append_log(paths, "stage1: done, final loss " + std::to_string(result.final_loss));
    return base;
}

void run_prune_stage(const ExperimentConfig& cfg, const PlanContext& ctx,
                     const ExperimentPaths& paths, const Model& base) {
    for (int i : ctx.active_groups()) {
        if (std::filesystem::exists(paths.group_scheme(i))) {
            append_log(paths, "prune: group " + std::to_string(i) + " scheme present, skipping");
            continue;
        }
        const auto& members = ctx.plan.members[i];
        GroupDescriptor group;
        group.index = i;
        group.t_min = members.front();
        group.t_max = members.back();
        group.snr_max_db = snr_db(ctx.schedule, group.t_min);
        group.snr_min_db = snr_db(ctx.schedule, group.t_max);

        Rng taylor_rng(derive_seed(cfg.seed, "taylor-batch", i));
        const Batch taylor_batch = make_batch(cfg.dataset(), members, cfg.batch_size, taylor_rng);
        auto proxy = build_proxy(cfg, base, ctx.schedule, i, taylor_batch,
                                 paths.group_prompts(i));

        Rng eval_rng(derive_seed(cfg.seed, "prune-eval", i));
        std::vector<Batch> eval_batches;
        for (int b = 0; b < 2; ++b) {
            eval_batches.push_back(make_batch(cfg.dataset(), members, cfg.batch_size, eval_rng));
        }

        auto bank = MemoryBank::open(paths.group_bank(i));
        const std::int64_t limit = ctx.group_limit_flops(i);
        append_log(paths, "prune: group " + std::to_string(i) + " limit " +
                              std::to_string(limit) + " FLOPs, proxy " + cfg.proxy);
        std::vector<std::string> notes;
        const auto result = iterative_prune(base, limit, *proxy, cfg.rounds, cfg.candidates,
                                            bank, group, cfg.settings_digest(), eval_batches,
                                            ctx.schedule, &notes);
        for (const auto& note : notes) append_log(paths, "prune: group " + std::to_string(i) +
                                                             ": " + note);

        ordered_json j = {
            {"remove", scheme_to_json(result.best)},
            {"provenance", result.best.provenance},
            {"round", result.best.round},
            {"loss", result.best_loss},
            {"flops", result.best_flops},
            {"round_mean_loss", result.round_mean_loss},
            {"round_std_loss", result.round_std_loss},
            {"best_so_far_loss", result.best_so_far_loss},
            {"failed_candidates", result.failed_candidates},
        };
        atomic_write(paths.group_scheme(i), j.dump(2) + "\n");
        append_log(paths, "prune: group " + std::to_string(i) + " best loss " +
                              std::to_string(result.best_loss) + " at " +
                              std::to_string(result.best_flops) + " FLOPs");
    }
}

void run_finetune_stage(const ExperimentConfig& cfg, const PlanContext& ctx,
                        const ExperimentPaths& paths, const Model& base, bool with_pruning) {
    for (int i = 0; i < ctx.plan.group_count; ++i) {
        if (std::filesystem::exists(paths.group_fragment(i))) {
            append_log(paths, "finetune: group " + std::to_string(i) + " done, skipping");
            continue;
        }
        const auto& members = ctx.plan.members[i];
        if (members.empty()) {
            ordered_json fragment = {{"index", i}, {"skipped", true}};
            atomic_write(paths.group_fragment(i), fragment.dump(2) + "\n");
            append_log(paths, "finetune: group " + std::to_string(i) + " empty, skipped");
            continue;
        }

        Model model = base;
        ordered_json prune_info;
        if (with_pruning) {
            const auto scheme_json = read_json(paths.group_scheme(i));
            const auto scheme = scheme_from_json(scheme_json.at("remove"),
                                                 ctx.spec.hidden_count());
            model = apply_mask(base, mask_from_scheme(ctx.spec, scheme));
            prune_info = {{"loss", scheme_json.at("loss")},
                          {"provenance", scheme_json.at("provenance")},
                          {"failed_candidates", scheme_json.at("failed_candidates")}};
        }

        const auto result = train_loop(model, ctx.schedule, cfg.dataset(), members,
                                       cfg.stage2_steps, cfg.batch_size,
                                       static_cast<float>(cfg.finetune_lr),
                                       derive_seed(cfg.seed, "stage2", i));
        save_checkpoint(model, paths.group_ckpt(i));

        ordered_json fragment = {
            {"index", i},
            {"skipped", false},
            {"flops_limit", ctx.group_limit_flops(i)},
            {"achieved_flops", count_flops(model.spec)},
            {"timesteps", members.size()},
            {"finetune", {{"steps", result.steps}, {"final_loss", result.final_loss}}},
        };
        if (!prune_info.is_null()) fragment["prune"] = prune_info;
        atomic_write(paths.group_fragment(i), fragment.dump(2) + "\n");
        append_log(paths, "finetune: group " + std::to_string(i) + " done, final loss " +
                              std::to_string(result.final_loss));
    }
}

ModelBank load_bank(const ExperimentConfig& cfg, const PlanContext& ctx,
                    const ExperimentPaths& paths) {
    ModelBank bank;
    bank.plan = ctx.plan;
    bank.models.resize(ctx.plan.group_count);
    for (int i = 0; i < ctx.plan.group_count; ++i) {
        if (std::filesystem::exists(paths.group_ckpt(i))) {
            bank.models[i] = load_checkpoint(paths.group_ckpt(i));
        }
    }
    if (std::filesystem::exists(paths.base_ckpt())) {
        bank.fallback = load_checkpoint(paths.base_ckpt());
    } else {
        // Single-stage runs have no base model; any trained group serves as
        // the fallback (it is only consulted for groups without members).
        bool found = false;
        for (const auto& m : bank.models) {
            if (m.has_value()) {
                bank.fallback = *m;
                found = true;
                break;
            }
        }
        if (!found) throw Error("no checkpoints found under " + paths.root.string());
    }
    (void)cfg;
    return bank;
}

MetricReport evaluate_bank(const ModelBank& bank, const ExperimentConfig& cfg,
                           const NoiseSchedule& s) {
    const std::uint64_t sample_seed = derive_seed(cfg.seed, "sample");
    const auto generated = ddim_sample(bank, s, cfg.sample_steps, cfg.dataset_size, sample_seed);

    SampleSet reference;
    reference.dim = kDataDim;
    reference.data = sample_points(cfg.dataset(), derive_seed(cfg.seed, "reference"),
                                   cfg.dataset_size);

    MetricReport report;
    report.energy_distance = energy_distance(generated, reference);
    report.sliced_wasserstein =
        sliced_wasserstein(generated, reference, 64, derive_seed(cfg.seed, "sw-projections"));
    report.sample_count = cfg.dataset_size;
    report.seed = sample_seed;
    return report;
}

std::string assemble_report(const ExperimentConfig& cfg, const PlanContext& ctx,
                            const ExperimentPaths& paths, const std::string& mode) {
    ordered_json groups = ordered_json::array();
    std::int64_t total_steps = 0;

    ordered_json stage1;
    if (std::filesystem::exists(paths.base_fragment())) {
        stage1 = read_json(paths.base_fragment());
        total_steps += stage1.at("steps").get<std::int64_t>();
    }

    for (int i = 0; i < ctx.plan.group_count; ++i) {
        const auto fragment = read_json(paths.group_fragment(i));
        if (!fragment.value("skipped", false)) {
            if (fragment.contains("finetune")) {
                total_steps += fragment.at("finetune").at("steps").get<std::int64_t>();
            }
            if (fragment.contains("train")) {
                total_steps += fragment.at("train").at("steps").get<std::int64_t>();
            }
        }
        groups.push_back(fragment);
    }

    const auto bank = load_bank(cfg, ctx, paths);
    const auto traj = trajectory_flops(bank, ctx.schedule, cfg.sample_steps);
    const auto metrics = evaluate_bank(bank, cfg, ctx.schedule);

    ordered_json plan = {
        {"groups", ctx.plan.group_count},
        {"k", cfg.k},
        {"f_max", ctx.base_flops()},
        {"shape", cfg.flops_shape},
    };
    ordered_json bounds = ordered_json::array();
    for (int i = 0; i < ctx.plan.group_count; ++i) {
        bounds.push_back({{"lower", ctx.plan.lower[i]},
                          {"upper", ctx.plan.upper[i]},
                          {"timesteps", ctx.plan.members[i].size()}});
    }
    plan["bounds"] = std::move(bounds);

    ordered_json report = {
        {"mode", mode},
        {"settings", cfg.settings_digest()},
        {"kernels", kernels::active_name()},
        {"plan", plan},
        {"stage1", stage1.is_null() ? ordered_json(nullptr) : stage1},
        {"groups", groups},
        {"flops",
         {{"base", ctx.base_flops()},
          {"trajectory_total", traj.total_per_sample},
          {"trajectory_mean", traj.mean_per_eval},
          {"trajectory_mean_ratio", traj.mean_per_eval / ctx.base_flops()}}},
        {"metrics",
         {{"energy_distance", metrics.energy_distance},
          {"sliced_wasserstein", metrics.sliced_wasserstein},
          {"samples", metrics.sample_count},
          {"seed", metrics.seed}}},
        {"ledger", {{"total_train_steps", total_steps}}},
    };
    const std::string text = report.dump(2) + "\n";
    atomic_write(paths.report_json(), text);
    return text;
}

std::string two_stage_train(const ExperimentConfig& cfg, const ExperimentPaths& paths,
                      bool with_pruning) {
    const auto start = std::chrono::steady_clock::now();
    const auto ctx = make_plan(cfg);
    prepare_experiment(paths, cfg, ctx, with_pruning ? "two-stage" : "two-stage-no-prune");

    const Model base = run_stage1(cfg, ctx, paths);
    if (with_pruning) run_prune_stage(cfg, ctx, paths, base);
    run_finetune_stage(cfg, ctx, paths, base, with_pruning);
    const auto text = assemble_report(cfg, ctx, paths, with_pruning ? "two-stage" : "two-stage-no-prune");

    const double wall = std::chrono::duration<double>(
        std::chrono::steady_clock::now() - start).count();
    append_log(paths, "pipeline finished in " + std::to_string(wall) + " s");
    return text;
}

std::string single_stage_train(const ExperimentConfig& cfg, const ExperimentPaths& paths) {
    const auto start = std::chrono::steady_clock::now();
    const auto ctx = make_plan(cfg);
    prepare_experiment(paths, cfg, ctx, "single-stage");

    const auto active = ctx.active_groups();
    if (active.empty()) throw Error("single-stage: every group is empty");

    // Matched budget by default: the two-stage total spread over the groups.
    std::vector<int> steps_per_group(ctx.plan.group_count, 0);
    if (cfg.single_stage_steps > 0) {
        for (int i : active) steps_per_group[i] = cfg.single_stage_steps;
    } else {
        const std::int64_t total =
            static_cast<std::int64_t>(cfg.stage1_steps) +
            static_cast<std::int64_t>(active.size()) * cfg.stage2_steps;
        const std::int64_t each = total / static_cast<std::int64_t>(active.size());
        std::int64_t remainder = total % static_cast<std::int64_t>(active.size());
        for (int i : active) {
            steps_per_group[i] = static_cast<int>(each + (remainder > 0 ? 1 : 0));
            if (remainder > 0) --remainder;
        }
    }

    for (int i = 0; i < ctx.plan.group_count; ++i) {
        if (std::filesystem::exists(paths.group_fragment(i))) {
            append_log(paths, "single-stage: group " + std::to_string(i) + " done, skipping");
            continue;
        }
        const auto& members = ctx.plan.members[i];
        if (members.empty()) {
            ordered_json fragment = {{"index", i}, {"skipped", true}};
            atomic_write(paths.group_fragment(i), fragment.dump(2) + "\n");
            continue;
        }

        // Architecture picked by the magnitude proxy on a throwaway model,
        // then trained from a fresh init. Both streams depend only on
        // (seed, group), so groups are independent.
        const Model throwaway{ctx.spec,
                              init_params(ctx.spec, derive_seed(cfg.seed, "throwaway", i))};
        const auto scheme = greedy_scheme_to_limit(ctx.spec, magnitude_importance(throwaway),
                                                   ctx.group_limit_flops(i));
        const auto shape = apply_mask(throwaway, mask_from_scheme(ctx.spec, scheme));
        Model model{shape.spec,
                    init_params(shape.spec, derive_seed(cfg.seed, "single-init", i))};

        append_log(paths, "single-stage: group " + std::to_string(i) + " training " +
                              std::to_string(steps_per_group[i]) + " steps");
        const auto result = train_loop(model, ctx.schedule, cfg.dataset(), members,
                                       steps_per_group[i], cfg.batch_size,
                                       static_cast<float>(cfg.lr),
                                       derive_seed(cfg.seed, "single-train", i));
        save_checkpoint(model, paths.group_ckpt(i));
        ordered_json fragment = {
            {"index", i},
            {"skipped", false},
            {"flops_limit", ctx.group_limit_flops(i)},
            {"achieved_flops", count_flops(model.spec)},
            {"timesteps", members.size()},
            {"train", {{"steps", result.steps}, {"final_loss", result.final_loss}}},
        };
        atomic_write(paths.group_fragment(i), fragment.dump(2) + "\n");
    }

    const auto text = assemble_report(cfg, ctx, paths, "single-stage");
    const double wall = std::chrono::duration<double>(
        std::chrono::steady_clock::now() - start).count();
    append_log(paths, "single-stage finished in " + std::to_string(wall) + " s");
    return text;
}

std::string schedule_ablation_run(const ExperimentConfig& cfg, const ExperimentPaths& paths,
                                  TargetShape shape) {
    ExperimentConfig shaped = cfg;
    shaped.flops_shape = to_string(shape);
    ExperimentPaths sub;
    sub.root = paths.root / ("shape-" + shaped.flops_shape);
    return two_stage_train(shaped, sub, true);
}

} // namespace pd
