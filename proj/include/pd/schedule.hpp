#pragma once

#include <span>
#include <vector>

namespace pd {

/// Discrete forward-diffusion schedule. Index 0 is the least noisy timestep,
/// T-1 the noisiest. All schedule arithmetic is float64: cumulative products
/// over hundreds of steps lose too much precision in float32.
///
/// Invariants: 0 < alpha_bars[t] < 1, alpha_bars strictly decreasing, and
/// alpha_bars[t] == prod_{s<=t} (1 - betas[s]) to 1e-12 relative.
struct NoiseSchedule {
    int timestep_count = 0;
    std::vector<double> betas;
    std::vector<double> alpha_bars;
};

/// Betas linearly interpolated from beta_start to beta_end inclusive.
/// Requires T >= 1 and 0 < beta_start <= beta_end < 1.
NoiseSchedule build_linear_schedule(int timestep_count, double beta_start, double beta_end);

/// Squared-cosine signal decay: alpha_bar at index t follows
/// cos^2(((t/T)+offset)/(1+offset) * pi/2) on the t=1..T grid, renormalized
/// by the t=0 grid point. Implied betas are clamped to <= 0.999 and
/// alpha_bars recomputed from the clamped betas so the product invariant
/// holds exactly.
NoiseSchedule build_cosine_schedule(int timestep_count, double offset = 0.008);

/// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
std::vector<double> forward_diffuse(std::span<const double> x0, int t,
                                    std::span<const double> eps, const NoiseSchedule& s);

/// 10 * log10(alpha_bar_t / (1 - alpha_bar_t)), in decibels. Strictly
/// decreasing in t for any valid schedule.
double snr_db(const NoiseSchedule& s, int t);

} // namespace pd
