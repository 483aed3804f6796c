#pragma once

#include "pd/denoiser.hpp"
#include "pd/schedule.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace pd {

/// Channels to REMOVE, per hidden layer (the complement of a PruneMask).
struct PruningScheme {
    std::vector<std::vector<int>> remove;
    std::string provenance;
    int round = 0;

    bool empty() const {
        for (const auto& r : remove) {
            if (!r.empty()) return false;
        }
        return true;
    }

    bool operator==(const PruningScheme&) const = default;
};

/// remove-lists -> kept-lists. Validates ranges and that every layer keeps
/// at least one channel.
PruneMask mask_from_scheme(const DenoiserSpec& spec, const PruningScheme& scheme);

std::int64_t scheme_flops(const DenoiserSpec& spec, const PruningScheme& scheme);

/// Orders schemes for best-candidate selection: loss, then FLOPs, then the
/// remove map lexicographically. Fixed so reruns pick identical winners.
bool scheme_less(double loss_a, std::int64_t flops_a, const PruningScheme& a,
                 double loss_b, std::int64_t flops_b, const PruningScheme& b);

struct MemoryBankEntry {
    PruningScheme scheme;
    double loss = 0.0;
    std::int64_t flops = 0;
    std::string timestamp;

    bool operator==(const MemoryBankEntry&) const = default;
};

/// Append-only history of (scheme, loss) pairs. When backed by a file every
/// append lands on disk immediately as one JSON line.
class MemoryBank {
public:
    MemoryBank() = default;

    /// File-backed bank; loads existing entries if the file exists.
    static MemoryBank open(const std::filesystem::path& jsonl_path);

    void append(MemoryBankEntry entry);
    const std::vector<MemoryBankEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<MemoryBankEntry> entries_;
    std::filesystem::path path_;
};

/// What a proxy gets told about the job.
struct GroupDescriptor {
    int index = 0;
    int t_min = 0;
    int t_max = 0;
    double snr_min_db = 0.0;
    double snr_max_db = 0.0;
};

struct ProxyRequest {
    std::vector<int> layer_widths;           // prunable hidden widths
    std::vector<std::int64_t> layer_flops;   // per-layer cost (affine + SiLU)
    std::int64_t total_flops = 0;
    std::int64_t flops_limit = 0;
    GroupDescriptor group;
    std::string settings_digest;
    std::vector<MemoryBankEntry> history;    // sorted by loss ascending
    int num_candidates = 1;
    int round = 0;
};

ProxyRequest make_proxy_request(const Model& base, std::int64_t flops_limit,
                                const GroupDescriptor& group, const std::string& settings_digest,
                                const MemoryBank& bank, int num_candidates, int round);

/// Importance-evaluation mechanism proposing removal schemes. Proposals may
/// violate the FLOPs constraint; propose_schemes() repairs or rejects them.
class Proxy {
public:
    virtual ~Proxy() = default;
    virtual std::string name() const = 0;
    virtual std::vector<PruningScheme> propose(const ProxyRequest& req) = 0;
};

/// Uniformly random removals until the constraint holds; deterministic in
/// (seed, round, candidate).
std::unique_ptr<Proxy> make_random_proxy(const Model& base, std::uint64_t seed);

/// Smallest-norm-first removal. Candidate 0 is pure greedy; later candidates
/// explore with seeded score jitter.
std::unique_ptr<Proxy> make_magnitude_proxy(const Model& base);

/// First-order saliency |w * dLoss/dw| accumulated per channel from one
/// gradient evaluation on the supplied batch.
std::unique_ptr<Proxy> make_taylor_proxy(const Model& base, const Batch& batch,
                                         const NoiseSchedule& schedule);

/// Per-channel score: L2 norm of the channel's weight row plus L2 norm of
/// its outgoing column in the next layer. Lower prunes first.
std::vector<std::vector<double>> magnitude_importance(const Model& m);

/// Per-channel first-order saliency sum over the channel's incoming row,
/// bias and outgoing column.
std::vector<std::vector<double>> taylor_importance(const Model& m, const Batch& batch,
                                                   const NoiseSchedule& s);

/// Extend `start` by removing lowest-score channels until the masked FLOPs
/// fit under the limit. Never empties a layer; throws if the limit is
/// unreachable.
PruningScheme greedy_scheme_to_limit(const DenoiserSpec& spec,
                                     const std::vector<std::vector<double>>& scores,
                                     std::int64_t flops_limit, PruningScheme start = {});

/// Run the proxy and validate every proposal: indices deduplicated and
/// range-checked, constraint violations repaired by greedy extra removal of
/// lowest-magnitude channels. Unrepairable proposals are dropped.
std::vector<PruningScheme> propose_schemes(Proxy& proxy, const ProxyRequest& req,
                                           const Model& base);

/// Masked loss on fixed held-out batches; no fine-tuning.
double evaluate_scheme(const Model& base, const PruningScheme& scheme,
                       const std::vector<Batch>& eval_batches, const NoiseSchedule& s);

struct PruneLoopResult {
    PruningScheme best;
    double best_loss = 0.0;
    std::int64_t best_flops = 0;
    std::vector<double> round_mean_loss;   // per-round candidate mean
    std::vector<double> round_std_loss;    // per-round candidate population std
    std::vector<double> best_so_far_loss;  // running minimum after each round
    int failed_candidates = 0;
};

/// The iterative decision loop: each round asks the proxy for C candidates
/// (memory bank embedded in the request), evaluates them, appends every
/// result to the bank and tracks the running best. A proxy failure falls
/// back to the magnitude proxy for that round. Throws if no round yields a
/// valid candidate.
PruneLoopResult iterative_prune(const Model& base, std::int64_t flops_limit, Proxy& proxy,
                                int rounds, int candidates_per_round, MemoryBank& bank,
                                const GroupDescriptor& group, const std::string& settings_digest,
                                const std::vector<Batch>& eval_batches, const NoiseSchedule& s,
                                std::vector<std::string>* log = nullptr);

} // namespace pd
