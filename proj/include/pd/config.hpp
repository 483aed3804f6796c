#pragma once

#include "pd/allocation.hpp"
#include "pd/dataset.hpp"
#include "pd/denoiser.hpp"
#include "pd/schedule.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pd {

/// Fully resolved experiment settings. Every field except dataset.name has
/// a default; unknown keys in the file are hard errors.
struct ExperimentConfig {
    // [dataset]
    std::string dataset_name;        // required
    int dataset_size = 2048;         // samples per side of the evaluation

    // [schedule]
    std::string schedule_kind = "cosine"; // cosine | linear
    int timesteps = 100;
    double beta_start = 1e-4;        // linear only
    double beta_end = 0.02;          // linear only
    double cosine_offset = 0.008;    // cosine only

    // [model]
    int input_dim = 2;
    std::vector<int> hidden_widths = {64, 64, 64};
    int time_embed_dim = 16;

    // [allocation]
    int groups = 5;
    double k = 0.5;
    std::string flops_shape = "snr"; // snr | constant | uni-increasing | uni-decreasing

    // [pruning]
    std::string proxy = "magnitude"; // random | magnitude | taylor | llm
    int rounds = 5;
    int candidates = 3;

    // [training]
    int stage1_steps = 5000;
    int stage2_steps = 1000;         // per group
    int single_stage_steps = 0;      // per group; 0 = match the two-stage budget
    int batch_size = 128;
    double lr = 1e-3;
    double finetune_lr = 1e-4;
    std::uint64_t seed = 1;
    int checkpoint_every = 1000;

    // [sampling]
    int sample_steps = 50;

    // [llm]
    double llm_temperature = 0.7;
    int llm_timeout_s = 60;
    int llm_max_retries = 3;
    double llm_backoff_s = 1.0;

    void validate() const;

    NoiseSchedule build_schedule() const;
    DenoiserSpec model_spec() const;
    ToyDataset dataset() const;
    TargetShape shape() const { return target_shape_from_string(flops_shape); }

    /// One-line summary embedded in proxy prompts and logs.
    std::string settings_digest() const;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Parse the sectioned key-value format. Unknown sections or keys raise
/// UsageError naming the offender.
ExperimentConfig parse_config(const std::string& text, const std::string& origin);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text form; load(write(cfg)) == cfg.
std::string write_config(const ExperimentConfig& cfg);

} // namespace pd
