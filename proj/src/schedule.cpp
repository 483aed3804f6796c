#include "pd/schedule.hpp"

#include "pd/errors.hpp"
#include "pd/kernels.hpp"

#include <cmath>
#include <string>

namespace pd {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_timestep(const NoiseSchedule& s, int t) {
    if (t < 0 || t >= s.timestep_count) {
        throw Error("timestep " + std::to_string(t) + " out of range [0, " +
                    std::to_string(s.timestep_count) + ")");
    }
}

NoiseSchedule from_betas(std::vector<double> betas) {
    NoiseSchedule s;
    s.timestep_count = static_cast<int>(betas.size());
    s.alpha_bars.resize(betas.size());
    double prod = 1.0;
    for (std::size_t t = 0; t < betas.size(); ++t) {
        prod *= 1.0 - betas[t];
        s.alpha_bars[t] = prod;
    }
    s.betas = std::move(betas);
    return s;
}

} // namespace

NoiseSchedule build_linear_schedule(int timestep_count, double beta_start, double beta_end) {
    if (timestep_count < 1) throw Error("schedule needs at least one timestep");
    if (!(beta_start > 0.0) || !(beta_end < 1.0)) {
        throw Error("betas must lie in (0, 1)");
    }
    if (beta_start > beta_end) throw Error("beta_start must not exceed beta_end");

    std::vector<double> betas(timestep_count);
    if (timestep_count == 1) {
        betas[0] = beta_start;
    } else {
        for (int t = 0; t < timestep_count; ++t) {
            const double frac = static_cast<double>(t) / (timestep_count - 1);
            betas[t] = beta_start + (beta_end - beta_start) * frac;
        }
    }
    return from_betas(std::move(betas));
}

NoiseSchedule build_cosine_schedule(int timestep_count, double offset) {
    if (timestep_count < 1) throw Error("schedule needs at least one timestep");
    if (!(offset > 0.0)) throw Error("cosine offset must be positive");

    auto decay = [&](double grid_t) {
        const double arg = (grid_t / timestep_count + offset) / (1.0 + offset) * kPi / 2.0;
        const double c = std::cos(arg);
        return c * c;
    };

    // Index t maps to grid point t+1; ratio against the previous grid point
    // gives the implied beta, clamped to 0.999.
    const double f0 = decay(0.0);
    std::vector<double> betas(timestep_count);
    double prev = f0;
    for (int t = 0; t < timestep_count; ++t) {
        const double cur = decay(static_cast<double>(t + 1));
        double beta = 1.0 - cur / prev;
        if (beta > 0.999) beta = 0.999;
        betas[t] = beta;
        prev = cur;
    }
    return from_betas(std::move(betas));
}

std::vector<double> forward_diffuse(std::span<const double> x0, int t,
                                    std::span<const double> eps, const NoiseSchedule& s) {
    check_timestep(s, t);
    if (x0.size() != eps.size()) {
        throw Error("forward_diffuse: x0 has " + std::to_string(x0.size()) +
                    " dims but eps has " + std::to_string(eps.size()));
    }
    const double ab = s.alpha_bars[t];
    std::vector<double> out(x0.size());
    kernels::active().lincomb_f64(std::sqrt(ab), x0.data(), std::sqrt(1.0 - ab), eps.data(),
                                  out.data(), out.size());
    return out;
}

double snr_db(const NoiseSchedule& s, int t) {
    check_timestep(s, t);
    const double ab = s.alpha_bars[t];
    return 10.0 * std::log10(ab / (1.0 - ab));
}

} // namespace pd
