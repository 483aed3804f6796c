#pragma once

#include "pd/allocation.hpp"
#include "pd/denoiser.hpp"
#include "pd/metrics.hpp"
#include "pd/schedule.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace pd {

/// Per-group specialized models plus the base model as fallback for groups
/// without their own checkpoint. Routing is by original timestep index.
struct ModelBank {
    GroupPlan plan;
    std::vector<std::optional<Model>> models; // one slot per group
    Model fallback;

    const Model& model_for_timestep(int t) const;
    std::int64_t flops_for_timestep(int t) const;
};

/// Evenly strided descending timesteps; the last visited step is always 0.
/// Requires 1 <= steps <= T.
std::vector<int> strided_timesteps(int timestep_count, int steps);

/// Deterministic DDIM (eta = 0): from seeded standard normal, at each
/// visited t predict eps with the routed model, form
/// x0_hat = (x_t - sqrt(1-ab_t) eps_hat)/sqrt(ab_t), then
/// x_prev = sqrt(ab_prev) x0_hat + sqrt(1-ab_prev) eps_hat. Returns the
/// final x0_hat per sample.
SampleSet ddim_sample(const ModelBank& bank, const NoiseSchedule& s, int steps,
                      int sample_count, std::uint64_t seed);

struct TrajectoryFlops {
    std::int64_t total_per_sample = 0; // sum over visited timesteps
    double mean_per_eval = 0.0;        // total / steps
};

/// FLOPs of one sampling trajectory under group routing.
TrajectoryFlops trajectory_flops(const ModelBank& bank, const NoiseSchedule& s, int steps);

} // namespace pd
