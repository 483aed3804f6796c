#include "pd/dataset.hpp"

#include "pd/errors.hpp"

#include <cmath>

namespace pd {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

ToyDataset dataset_from_string(const std::string& name) {
    if (name == "eight-gaussians") return ToyDataset::EightGaussians;
    if (name == "two-moons") return ToyDataset::TwoMoons;
    if (name == "swiss-roll") return ToyDataset::SwissRoll;
    throw UsageError("unknown dataset '" + name +
                     "' (expected eight-gaussians|two-moons|swiss-roll)");
}

std::string to_string(ToyDataset d) {
    switch (d) {
        case ToyDataset::EightGaussians: return "eight-gaussians";
        case ToyDataset::TwoMoons: return "two-moons";
        case ToyDataset::SwissRoll: return "swiss-roll";
    }
    return "eight-gaussians";
}

void sample_point(ToyDataset kind, Rng& rng, double* out) {
    switch (kind) {
        case ToyDataset::EightGaussians: {
            // 8 modes on a circle of radius 2, sigma 0.05.
            const auto mode = rng.below(8);
            const double angle = 2.0 * kPi * static_cast<double>(mode) / 8.0;
            out[0] = 2.0 * std::cos(angle) + 0.05 * rng.normal();
            out[1] = 2.0 * std::sin(angle) + 0.05 * rng.normal();
            return;
        }
        case ToyDataset::TwoMoons: {
            const double theta = rng.uniform(0.0, kPi);
            if (rng.below(2) == 0) {
                out[0] = std::cos(theta);
                out[1] = std::sin(theta) - 0.25;
            } else {
                out[0] = 1.0 - std::cos(theta);
                out[1] = 0.25 - std::sin(theta);
            }
            out[0] = 2.0 * (out[0] - 0.5) + 0.05 * rng.normal();
            out[1] = 2.0 * out[1] + 0.05 * rng.normal();
            return;
        }
        case ToyDataset::SwissRoll: {
            const double t = rng.uniform(1.5 * kPi, 4.5 * kPi);
            const double scale = 2.0 / (4.5 * kPi);
            out[0] = scale * t * std::cos(t) + 0.05 * rng.normal();
            out[1] = scale * t * std::sin(t) + 0.05 * rng.normal();
            return;
        }
    }
    throw Error("unhandled dataset kind");
}

std::vector<double> sample_points(ToyDataset kind, std::uint64_t seed, int n) {
    Rng rng(seed);
    std::vector<double> out(static_cast<std::size_t>(n) * kDataDim);
    for (int i = 0; i < n; ++i) sample_point(kind, rng, out.data() + i * kDataDim);
    return out;
}

Batch make_batch(ToyDataset kind, std::span<const int> active_timesteps, int batch_size,
                 Rng& rng) {
    if (active_timesteps.empty()) throw Error("make_batch: no active timesteps");
    if (batch_size < 1) throw Error("make_batch: batch size must be positive");
    Batch b;
    b.dim = kDataDim;
    b.x0.resize(static_cast<std::size_t>(batch_size) * kDataDim);
    b.eps.resize(b.x0.size());
    b.t.resize(batch_size);
    for (int i = 0; i < batch_size; ++i) {
        sample_point(kind, rng, b.x0.data() + i * kDataDim);
        b.t[i] = active_timesteps[rng.below(active_timesteps.size())];
        for (int d = 0; d < kDataDim; ++d) b.eps[i * kDataDim + d] = rng.normal();
    }
    return b;
}

} // namespace pd
