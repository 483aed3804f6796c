#pragma once

#include "pd/schedule.hpp"

#include <string>
#include <vector>

namespace pd {

/// Compute budget for one forward evaluation of the full model.
/// k is the minimum-FLOPs fraction in (0, 1]; f_max the full-model FLOPs
/// (multiply-accumulate counted as 2).
struct FlopsBudget {
    double k = 0.5;
    double f_max = 0.0;
};

/// Per-timestep difficulty. s_n is the standardized negative SNR; each
/// flops_target lies in [k*f_max, f_max] and grows with task difficulty.
struct DifficultyProfile {
    std::vector<double> s_n;
    std::vector<double> flops_target;
};

/// Partition of timesteps into groups with FLOPs bounds (v(i), w(i)].
struct GroupPlan {
    int group_count = 0;
    std::vector<double> lower;               // v(i); lower[0] == 0
    std::vector<double> upper;               // w(i); upper.back() >= f_max
    std::vector<std::vector<int>> members;   // T(i), ascending timesteps
    std::vector<int> group_of_timestep;      // inverse map, size T

    int group_of(int t) const { return group_of_timestep[t]; }
};

/// Standardize negative SNR and min-max map it onto [k*f_max, f_max].
/// Uses the population standard deviation. When every SNR is equal (or
/// T == 1) the standardization is undefined and every target is k*f_max.
DifficultyProfile difficulty_profile(const NoiseSchedule& s, const FlopsBudget& b);

/// The equal-interval upper limit for group i of n before clamping:
/// (i/n + ((n-i)/n)*k) * f_max.
double group_limit_raw(int i, int n, const FlopsBudget& b);

/// Per-group FLOPs bounds. upper(i) follows group_limit_raw except that the
/// last group is clamped up to f_max: the raw top limit sits below f_max and
/// would leave the hardest timesteps unassigned. lower(0) = 0 and
/// lower(i) = raw limit of i-1.
void group_limits(int group_count, const FlopsBudget& b,
                  std::vector<double>& lower, std::vector<double>& upper);

/// Assign each timestep to the group whose (lower, upper] interval contains
/// its FLOPs target. A target equal to upper(i) belongs to group i. When
/// consecutive limits collapse to the same value (k = 1 makes every limit
/// f_max), ties resolve to the highest group index, leaving the lower
/// groups empty.
GroupPlan partition_timesteps(const DifficultyProfile& p,
                              const std::vector<double>& lower,
                              const std::vector<double>& upper);

/// Convenience: profile + limits + partition in one call.
GroupPlan plan_groups(const NoiseSchedule& s, const FlopsBudget& b, int group_count);

/// Alternative per-timestep target shapes used by the schedule ablation.
enum class TargetShape { Snr, Constant, UniIncreasing, UniDecreasing };

TargetShape target_shape_from_string(const std::string& name);
std::string to_string(TargetShape shape);

/// snr: difficulty_profile targets. constant: all (1+k)/2 * f_max.
/// uni-increasing: linear in t from k*f_max to f_max; uni-decreasing is the
/// reverse. T == 1 pins linear shapes at their t=0 endpoint.
std::vector<double> shaped_targets(TargetShape shape, const NoiseSchedule& s,
                                   const FlopsBudget& b);

/// Partition from an explicit target vector (ablation path).
GroupPlan plan_groups_with_targets(const std::vector<double>& targets,
                                   const FlopsBudget& b, int group_count);

/// Human-readable plan listing: header, per-group bounds and timestep
/// ranges, then per-timestep targets.
std::string format_plan(const GroupPlan& plan, const DifficultyProfile& profile,
                        const FlopsBudget& b);

} // namespace pd
