#include "pd/allocation.hpp"

#include "pd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pd {

namespace {

void check_budget(const FlopsBudget& b) {
    if (!(b.k > 0.0) || b.k > 1.0) throw Error("budget k must lie in (0, 1]");
    if (!(b.f_max > 0.0)) throw Error("budget f_max must be positive");
}

} // namespace

DifficultyProfile difficulty_profile(const NoiseSchedule& s, const FlopsBudget& b) {
    check_budget(b);
    const int t_count = s.timestep_count;

    std::vector<double> neg_snr(t_count);
    for (int t = 0; t < t_count; ++t) neg_snr[t] = -snr_db(s, t);

    double mean = 0.0;
    for (double v : neg_snr) mean += v;
    mean /= t_count;
    double var = 0.0;
    for (double v : neg_snr) var += (v - mean) * (v - mean);
    var /= t_count; // population
    const double sd = std::sqrt(var);

    DifficultyProfile p;
    p.s_n.resize(t_count);
    p.flops_target.resize(t_count);
    if (sd == 0.0) {
        // Constant SNR (or T == 1): no spread to map, use the minimum budget.
        std::fill(p.s_n.begin(), p.s_n.end(), 0.0);
        std::fill(p.flops_target.begin(), p.flops_target.end(), b.k * b.f_max);
        return p;
    }

    for (int t = 0; t < t_count; ++t) p.s_n[t] = (neg_snr[t] - mean) / sd;
    const auto [lo_it, hi_it] = std::minmax_element(p.s_n.begin(), p.s_n.end());
    const double lo = *lo_it, hi = *hi_it;
    for (int t = 0; t < t_count; ++t) {
        const double raw =
            b.k * b.f_max + (1.0 - b.k) * ((p.s_n[t] - lo) / (hi - lo)) * b.f_max;
        // Rounding can push the endpoints an ulp outside [k*f_max, f_max];
        // pin them back so every target has a containing group.
        p.flops_target[t] = std::clamp(raw, b.k * b.f_max, b.f_max);
    }
    return p;
}

double group_limit_raw(int i, int n, const FlopsBudget& b) {
    return (static_cast<double>(i) / n + (static_cast<double>(n - i) / n) * b.k) * b.f_max;
}

void group_limits(int group_count, const FlopsBudget& b,
                  std::vector<double>& lower, std::vector<double>& upper) {
    check_budget(b);
    if (group_count < 1) throw Error("group count must be at least 1");

    lower.resize(group_count);
    upper.resize(group_count);
    for (int i = 0; i < group_count; ++i) upper[i] = group_limit_raw(i, group_count, b);
    upper[group_count - 1] = std::max(upper[group_count - 1], b.f_max);

    lower[0] = 0.0;
    for (int i = 1; i < group_count; ++i) lower[i] = group_limit_raw(i - 1, group_count, b);
}

GroupPlan partition_timesteps(const DifficultyProfile& p,
                              const std::vector<double>& lower,
                              const std::vector<double>& upper) {
    const int group_count = static_cast<int>(upper.size());
    if (group_count < 1 || lower.size() != upper.size()) {
        throw Error("partition needs matching non-empty limit arrays");
    }

    GroupPlan plan;
    plan.group_count = group_count;
    plan.lower = lower;
    plan.upper = upper;
    plan.members.resize(group_count);
    plan.group_of_timestep.resize(p.flops_target.size());

    for (std::size_t t = 0; t < p.flops_target.size(); ++t) {
        const double target = p.flops_target[t];
        auto it = std::lower_bound(upper.begin(), upper.end(), target);
        if (it == upper.end()) {
            throw Error("timestep " + std::to_string(t) + " target exceeds every group limit");
        }
        // Collapsed zero-width intervals share one boundary; route to the
        // highest group carrying that limit.
        int g = static_cast<int>(std::upper_bound(it, upper.end(), *it) - upper.begin()) - 1;
        plan.members[g].push_back(static_cast<int>(t));
        plan.group_of_timestep[t] = g;
    }
    return plan;
}

GroupPlan plan_groups(const NoiseSchedule& s, const FlopsBudget& b, int group_count) {
    const DifficultyProfile profile = difficulty_profile(s, b);
    std::vector<double> lower, upper;
    group_limits(group_count, b, lower, upper);
    return partition_timesteps(profile, lower, upper);
}

TargetShape target_shape_from_string(const std::string& name) {
    if (name == "snr") return TargetShape::Snr;
    if (name == "constant") return TargetShape::Constant;
    if (name == "uni-increasing") return TargetShape::UniIncreasing;
    if (name == "uni-decreasing") return TargetShape::UniDecreasing;
    throw UsageError("unknown FLOPs shape '" + name +
                     "' (expected snr|constant|uni-increasing|uni-decreasing)");
}

std::string to_string(TargetShape shape) {
    switch (shape) {
        case TargetShape::Snr: return "snr";
        case TargetShape::Constant: return "constant";
        case TargetShape::UniIncreasing: return "uni-increasing";
        case TargetShape::UniDecreasing: return "uni-decreasing";
    }
    return "snr";
}

std::vector<double> shaped_targets(TargetShape shape, const NoiseSchedule& s,
                                   const FlopsBudget& b) {
    check_budget(b);
    const int t_count = s.timestep_count;
    std::vector<double> targets(t_count);
    switch (shape) {
        case TargetShape::Snr:
            return difficulty_profile(s, b).flops_target;
        case TargetShape::Constant:
            std::fill(targets.begin(), targets.end(), 0.5 * (1.0 + b.k) * b.f_max);
            return targets;
        case TargetShape::UniIncreasing:
        case TargetShape::UniDecreasing: {
            for (int t = 0; t < t_count; ++t) {
                double u = t_count == 1 ? 0.0 : static_cast<double>(t) / (t_count - 1);
                if (shape == TargetShape::UniDecreasing) u = 1.0 - u;
                targets[t] = std::clamp(b.k * b.f_max + (1.0 - b.k) * u * b.f_max,
                                        b.k * b.f_max, b.f_max);
            }
            return targets;
        }
    }
    return targets;
}

GroupPlan plan_groups_with_targets(const std::vector<double>& targets,
                                   const FlopsBudget& b, int group_count) {
    DifficultyProfile p;
    p.flops_target = targets;
    p.s_n.assign(targets.size(), 0.0);
    std::vector<double> lower, upper;
    group_limits(group_count, b, lower, upper);
    return partition_timesteps(p, lower, upper);
}

std::string format_plan(const GroupPlan& plan, const DifficultyProfile& profile,
                        const FlopsBudget& b) {
    std::ostringstream out;
    out.precision(6);
    out << "groups " << plan.group_count << "  k " << b.k << "  f_max " << b.f_max << "\n";
    for (int i = 0; i < plan.group_count; ++i) {
        out << "group " << i << "  bounds (" << plan.lower[i] << ", " << plan.upper[i] << "]";
        const auto& m = plan.members[i];
        if (m.empty()) {
            out << "  empty\n";
            continue;
        }
        out << "  timesteps ";
        // Contiguous runs as a-b, singletons bare.
        int run_start = m[0], prev = m[0];
        bool first = true;
        auto flush = [&](int lo, int hi) {
            if (!first) out << ",";
            first = false;
            if (lo == hi) out << lo;
            else out << lo << "-" << hi;
        };
        for (std::size_t j = 1; j < m.size(); ++j) {
            if (m[j] != prev + 1) {
                flush(run_start, prev);
                run_start = m[j];
            }
            prev = m[j];
        }
        flush(run_start, prev);
        out << "  (" << m.size() << ")\n";
    }
    out << "timestep targets\n";
    for (std::size_t t = 0; t < profile.flops_target.size(); ++t) {
        out << t << " " << profile.flops_target[t] << "\n";
    }
    return out.str();
}

} // namespace pd
