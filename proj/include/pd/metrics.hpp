#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace pd {

/// Row-major collection of d-dimensional points.
struct SampleSet {
    int dim = 0;
    std::vector<double> data;

    int count() const { return dim == 0 ? 0 : static_cast<int>(data.size()) / dim; }
    const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * dim; }
};

/// Two-sample generation metrics; both are 0 for identical multisets.
struct MetricReport {
    double energy_distance = 0.0;
    double sliced_wasserstein = 0.0;
    int sample_count = 0;
    std::uint64_t seed = 0;
};

/// Energy distance V-statistic, exact over the given finite samples:
/// 2 E||a-b|| - E||a-a'|| - E||b-b'|| with expectations over all pairs.
double energy_distance(const SampleSet& a, const SampleSet& b);

/// Mean 1-D Wasserstein-1 over seeded random unit projections.
/// Requires equal sample counts.
double sliced_wasserstein(const SampleSet& a, const SampleSet& b, int projections,
                          std::uint64_t seed);

/// One row per sample, comma-separated coordinates.
void write_samples_csv(const SampleSet& s, const std::filesystem::path& path);

} // namespace pd
