#pragma once

#include "pd/denoiser.hpp"
#include "pd/rng.hpp"

#include <span>
#include <string>
#include <vector>

namespace pd {

/// 2-D toy distributions standing in for image datasets.
enum class ToyDataset { EightGaussians, TwoMoons, SwissRoll };

ToyDataset dataset_from_string(const std::string& name);
std::string to_string(ToyDataset d);

constexpr int kDataDim = 2;

/// Draw one point into out[0..1].
void sample_point(ToyDataset kind, Rng& rng, double* out);

/// n points, row-major n x 2, deterministic in seed.
std::vector<double> sample_points(ToyDataset kind, std::uint64_t seed, int n);

/// Training batch: x0 from the generator, timesteps uniform over
/// active_timesteps, eps standard normal.
Batch make_batch(ToyDataset kind, std::span<const int> active_timesteps, int batch_size,
                 Rng& rng);

} // namespace pd
