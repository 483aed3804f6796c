#include "pd/sampler.hpp"

#include "pd/errors.hpp"
#include "pd/rng.hpp"

#include <algorithm>
#include <cmath>

namespace pd {

const Model& ModelBank::model_for_timestep(int t) const {
    if (t < 0 || t >= static_cast<int>(plan.group_of_timestep.size())) {
        throw Error("sampler: timestep " + std::to_string(t) + " outside the plan");
    }
    const int g = plan.group_of(t);
    if (g < static_cast<int>(models.size()) && models[g].has_value()) return *models[g];
    return fallback;
}

std::int64_t ModelBank::flops_for_timestep(int t) const {
    return count_flops(model_for_timestep(t).spec);
}

std::vector<int> strided_timesteps(int timestep_count, int steps) {
    if (steps < 1 || steps > timestep_count) {
        throw Error("sampler: steps must lie in [1, " + std::to_string(timestep_count) +
                    "], got " + std::to_string(steps));
    }
    std::vector<int> ts(steps);
    for (int j = 0; j < steps; ++j) {
        ts[j] = static_cast<int>((static_cast<std::int64_t>(j) * timestep_count) / steps);
    }
    std::reverse(ts.begin(), ts.end());
    return ts;
}

SampleSet ddim_sample(const ModelBank& bank, const NoiseSchedule& s, int steps,
                      int sample_count, std::uint64_t seed) {
    if (sample_count < 1) throw Error("sampler: sample count must be positive");
    const auto visit = strided_timesteps(s.timestep_count, steps);
    const int dim = bank.fallback.spec.input_dim;

    SampleSet out;
    out.dim = dim;
    out.data.resize(static_cast<std::size_t>(sample_count) * dim);

    std::vector<double> x(dim), x0_hat(dim);
    std::vector<float> x_f(dim);
    for (int i = 0; i < sample_count; ++i) {
        Rng rng(derive_seed(seed, "ddim-init", static_cast<std::uint64_t>(i)));
        for (int d = 0; d < dim; ++d) x[d] = rng.normal();

        for (std::size_t j = 0; j < visit.size(); ++j) {
            const int t = visit[j];
            const double ab = s.alpha_bars[t];
            const Model& model = bank.model_for_timestep(t);
            for (int d = 0; d < dim; ++d) x_f[d] = static_cast<float>(x[d]);
            const auto eps_hat = forward(model, x_f, t, s.timestep_count);

            const double inv_sqrt_ab = 1.0 / std::sqrt(ab);
            const double noise_scale = std::sqrt(1.0 - ab);
            for (int d = 0; d < dim; ++d) {
                x0_hat[d] = (x[d] - noise_scale * eps_hat[d]) * inv_sqrt_ab;
            }
            if (j + 1 == visit.size()) break;
            const double ab_prev = s.alpha_bars[visit[j + 1]];
            const double sig = std::sqrt(ab_prev);
            const double noi = std::sqrt(1.0 - ab_prev);
            for (int d = 0; d < dim; ++d) x[d] = sig * x0_hat[d] + noi * eps_hat[d];
        }
        for (int d = 0; d < dim; ++d) out.data[static_cast<std::size_t>(i) * dim + d] = x0_hat[d];
    }
    return out;
}

TrajectoryFlops trajectory_flops(const ModelBank& bank, const NoiseSchedule& s, int steps) {
    const auto visit = strided_timesteps(s.timestep_count, steps);
    TrajectoryFlops out;
    for (int t : visit) out.total_per_sample += bank.flops_for_timestep(t);
    out.mean_per_eval = static_cast<double>(out.total_per_sample) / steps;
    return out;
}

} // namespace pd
