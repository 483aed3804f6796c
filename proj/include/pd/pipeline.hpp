#pragma once

#include "pd/allocation.hpp"
#include "pd/config.hpp"
#include "pd/dataset.hpp"
#include "pd/denoiser.hpp"
#include "pd/metrics.hpp"
#include "pd/pruning.hpp"
#include "pd/sampler.hpp"
#include "pd/schedule.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pd {

/// Layout of one experiment directory:
///   config.copy, plan.txt, log.txt, lock, mode,
///   base/ckpt.bin, groups/<i>/{ckpt.bin, bank.jsonl, scheme.json, prompts/},
///   report.json, samples.csv
struct ExperimentPaths {
    std::filesystem::path root;

    std::filesystem::path config_copy() const { return root / "config.copy"; }
    std::filesystem::path plan_txt() const { return root / "plan.txt"; }
    std::filesystem::path log_txt() const { return root / "log.txt"; }
    std::filesystem::path lock_file() const { return root / "lock"; }
    std::filesystem::path mode_marker() const { return root / "mode"; }
    std::filesystem::path report_json() const { return root / "report.json"; }
    std::filesystem::path samples_csv() const { return root / "samples.csv"; }
    std::filesystem::path base_dir() const { return root / "base"; }
    std::filesystem::path base_ckpt() const { return base_dir() / "ckpt.bin"; }
    std::filesystem::path base_progress() const { return base_dir() / "ckpt_last.bin"; }
    std::filesystem::path base_fragment() const { return base_dir() / "train.json"; }
    std::filesystem::path group_dir(int i) const {
        return root / "groups" / std::to_string(i);
    }
    std::filesystem::path group_ckpt(int i) const { return group_dir(i) / "ckpt.bin"; }
    std::filesystem::path group_bank(int i) const { return group_dir(i) / "bank.jsonl"; }
    std::filesystem::path group_scheme(int i) const { return group_dir(i) / "scheme.json"; }
    std::filesystem::path group_fragment(int i) const { return group_dir(i) / "stage.json"; }
    std::filesystem::path group_prompts(int i) const { return group_dir(i) / "prompts"; }
};

/// Exclusive ownership of an experiment directory; a second holder fails
/// fast. Released on destruction; a crash leaves the file for the operator
/// to remove.
class DirLock {
public:
    explicit DirLock(const ExperimentPaths& paths);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::filesystem::path path_;
};

/// Timestamped line to log.txt and stdout.
void append_log(const ExperimentPaths& paths, const std::string& line);

/// Everything derived from the config before training: schedule, model
/// spec, budget (f_max = full-model FLOPs), shaped targets and the group
/// partition.
struct PlanContext {
    NoiseSchedule schedule;
    DenoiserSpec spec;
    FlopsBudget budget;
    DifficultyProfile profile;
    GroupPlan plan;

    std::int64_t base_flops() const { return static_cast<std::int64_t>(budget.f_max); }
    std::int64_t group_limit_flops(int i) const;
    std::vector<int> active_groups() const;
};

PlanContext make_plan(const ExperimentConfig& cfg);

/// Create the directory, write config.copy and plan.txt, stamp the mode.
/// Re-entry with the same config resumes; a different config or mode in an
/// existing directory is an error.
void prepare_experiment(const ExperimentPaths& paths, const ExperimentConfig& cfg,
                        const PlanContext& ctx, const std::string& mode);

struct TrainResult {
    int steps = 0;
    double final_loss = 0.0;
};

/// Adam training loop over batches drawn from active_timesteps. The batch
/// stream is a pure function of stream_seed and the step index, so a rerun
/// reproduces the trajectory bit for bit. Aborts on non-finite loss.
TrainResult train_loop(Model& m, const NoiseSchedule& s, ToyDataset data,
                       std::span<const int> active_timesteps, int steps, int batch_size,
                       float lr, std::uint64_t stream_seed,
                       const std::function<void(int step, const Model&)>& on_checkpoint = {},
                       int checkpoint_every = 0);

/// Stage 1 (resume-aware): returns the base model, training it if
/// base/ckpt.bin is absent.
Model run_stage1(const ExperimentConfig& cfg, const PlanContext& ctx,
                 const ExperimentPaths& paths);

/// Stage-2 pruning for every active group (resume-aware): iterative_prune
/// against min(w_i, f_max), persisting bank, best scheme and prompts.
void run_prune_stage(const ExperimentConfig& cfg, const PlanContext& ctx,
                     const ExperimentPaths& paths, const Model& base);

/// Stage-2 fine-tuning for every active group (resume-aware). When
/// with_pruning is false groups inherit the unpruned base architecture.
void run_finetune_stage(const ExperimentConfig& cfg, const PlanContext& ctx,
                        const ExperimentPaths& paths, const Model& base, bool with_pruning);

/// Group checkpoints + base fallback, ready for routed sampling.
ModelBank load_bank(const ExperimentConfig& cfg, const PlanContext& ctx,
                    const ExperimentPaths& paths);

/// n generated vs n fresh reference samples -> both metrics.
MetricReport evaluate_bank(const ModelBank& bank, const ExperimentConfig& cfg,
                           const NoiseSchedule& s);

/// Assemble report.json from stage fragments plus FLOPs accounting and
/// metrics; returns the serialized report text.
std::string assemble_report(const ExperimentConfig& cfg, const PlanContext& ctx,
                            const ExperimentPaths& paths, const std::string& mode);

/// Full two-stage run: plan, stage 1, per-group prune+finetune (prune
/// skipped when with_pruning is false), evaluation, report.json.
std::string two_stage_train(const ExperimentConfig& cfg, const ExperimentPaths& paths,
                      bool with_pruning);

/// Per-group from-scratch baseline at matched (or configured) step budget.
std::string single_stage_train(const ExperimentConfig& cfg, const ExperimentPaths& paths);

/// Runs the named target shape in a subdirectory of paths.root.
std::string schedule_ablation_run(const ExperimentConfig& cfg, const ExperimentPaths& paths,
                                  TargetShape shape);

} // namespace pd
