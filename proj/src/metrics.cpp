#include "pd/metrics.hpp"

#include "pd/errors.hpp"
#include "pd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace pd {

namespace {

double mean_cross_distance(const SampleSet& a, const SampleSet& b) {
    const int dim = a.dim;
    double total = 0.0;
    for (int i = 0; i < a.count(); ++i) {
        const double* pa = a.row(i);
        for (int j = 0; j < b.count(); ++j) {
            const double* pb = b.row(j);
            double sq = 0.0;
            for (int d = 0; d < dim; ++d) {
                const double diff = pa[d] - pb[d];
                sq += diff * diff;
            }
            total += std::sqrt(sq);
        }
    }
    return total / (static_cast<double>(a.count()) * b.count());
}

} // namespace

double energy_distance(const SampleSet& a, const SampleSet& b) {
    if (a.dim != b.dim) throw Error("energy_distance: dimension mismatch");
    if (a.count() == 0 || b.count() == 0) throw Error("energy_distance: empty sample set");
    return 2.0 * mean_cross_distance(a, b) - mean_cross_distance(a, a) -
           mean_cross_distance(b, b);
}

double sliced_wasserstein(const SampleSet& a, const SampleSet& b, int projections,
                          std::uint64_t seed) {
    if (a.dim != b.dim) throw Error("sliced_wasserstein: dimension mismatch");
    if (a.count() != b.count() || a.count() == 0) {
        throw Error("sliced_wasserstein: needs equal non-empty sample counts");
    }
    if (projections < 1) throw Error("sliced_wasserstein: needs at least one projection");

    const int n = a.count();
    const int dim = a.dim;
    Rng rng(seed);
    std::vector<double> dir(dim), pa(n), pb(n);
    double total = 0.0;
    for (int p = 0; p < projections; ++p) {
        double norm = 0.0;
        do {
            norm = 0.0;
            for (int d = 0; d < dim; ++d) {
                dir[d] = rng.normal();
                norm += dir[d] * dir[d];
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (int d = 0; d < dim; ++d) dir[d] /= norm;

        for (int i = 0; i < n; ++i) {
            double da = 0.0, db = 0.0;
            for (int d = 0; d < dim; ++d) {
                da += a.row(i)[d] * dir[d];
                db += b.row(i)[d] * dir[d];
            }
            pa[i] = da;
            pb[i] = db;
        }
        std::sort(pa.begin(), pa.end());
        std::sort(pb.begin(), pb.end());
        double w1 = 0.0;
        for (int i = 0; i < n; ++i) w1 += std::abs(pa[i] - pb[i]);
        total += w1 / n;
    }
    return total / projections;
}

void write_samples_csv(const SampleSet& s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.precision(10);
    for (int i = 0; i < s.count(); ++i) {
        for (int d = 0; d < s.dim; ++d) {
            if (d) out << ",";
            out << s.row(i)[d];
        }
        out << "\n";
    }
    if (!out) throw Error("write failure on " + path.string());
}

} // namespace pd
