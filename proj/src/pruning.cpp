#include "pd/pruning.hpp"

#include "pd/errors.hpp"
#include "pd/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace pd {

namespace {

using nlohmann::json;

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<std::vector<int>> normalized_remove(const DenoiserSpec& spec,
                                                const PruningScheme& scheme) {
    if (static_cast<int>(scheme.remove.size()) > spec.hidden_count()) {
        throw Error("scheme names more layers than the spec has");
    }
    std::vector<std::vector<int>> out(spec.hidden_count());
    for (std::size_t l = 0; l < scheme.remove.size(); ++l) {
        auto r = scheme.remove[l];
        std::sort(r.begin(), r.end());
        r.erase(std::unique(r.begin(), r.end()), r.end());
        for (int idx : r) {
            if (idx < 0 || idx >= spec.hidden_widths[l]) {
                throw Error("scheme removes channel " + std::to_string(idx) +
                            " out of range for layer " + std::to_string(l));
            }
        }
        out[l] = std::move(r);
    }
    return out;
}

json remove_map_json(const PruningScheme& scheme) {
    json obj = json::object();
    for (std::size_t l = 0; l < scheme.remove.size(); ++l) {
        obj[std::to_string(l)] = scheme.remove[l];
    }
    return obj;
}

} // namespace

PruneMask mask_from_scheme(const DenoiserSpec& spec, const PruningScheme& scheme) {
    const auto remove = normalized_remove(spec, scheme);
    PruneMask mask;
    for (int l = 0; l < spec.hidden_count(); ++l) {
        std::vector<int> kept;
        std::size_t ri = 0;
        for (int c = 0; c < spec.hidden_widths[l]; ++c) {
            if (ri < remove[l].size() && remove[l][ri] == c) {
                ++ri;
                continue;
            }
            kept.push_back(c);
        }
        if (kept.empty()) {
            throw Error("scheme empties hidden layer " + std::to_string(l));
        }
        mask.kept.push_back(std::move(kept));
    }
    return mask;
}

std::int64_t scheme_flops(const DenoiserSpec& spec, const PruningScheme& scheme) {
    const auto mask = mask_from_scheme(spec, scheme);
    return count_flops(spec, &mask);
}

bool scheme_less(double loss_a, std::int64_t flops_a, const PruningScheme& a,
                 double loss_b, std::int64_t flops_b, const PruningScheme& b) {
    if (loss_a != loss_b) return loss_a < loss_b;
    if (flops_a != flops_b) return flops_a < flops_b;
    return a.remove < b.remove;
}

MemoryBank MemoryBank::open(const std::filesystem::path& jsonl_path) {
    MemoryBank bank;
    bank.path_ = jsonl_path;
    std::ifstream in(jsonl_path);
    if (!in) return bank;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error("memory bank " + jsonl_path.string() + " line " +
                        std::to_string(line_no) + ": " + e.what());
        }
        MemoryBankEntry e;
        e.scheme.round = j.value("round", 0);
        e.scheme.provenance = j.value("proxy", "");
        e.loss = j.at("loss").get<double>();
        e.flops = j.at("flops").get<std::int64_t>();
        e.timestamp = j.value("timestamp", "");
        const auto& rm = j.at("remove");
        int max_layer = -1;
        for (auto it = rm.begin(); it != rm.end(); ++it) {
            max_layer = std::max(max_layer, std::stoi(it.key()));
        }
        e.scheme.remove.assign(max_layer + 1, {});
        for (auto it = rm.begin(); it != rm.end(); ++it) {
            e.scheme.remove[std::stoi(it.key())] = it.value().get<std::vector<int>>();
        }
        bank.entries_.push_back(std::move(e));
    }
    return bank;
}

void MemoryBank::append(MemoryBankEntry entry) {
    if (!path_.empty()) {
        std::ofstream out(path_, std::ios::app);
        if (!out) throw Error("cannot append to memory bank " + path_.string());
        json j = {
            {"round", entry.scheme.round},
            {"proxy", entry.scheme.provenance},
            {"remove", remove_map_json(entry.scheme)},
            {"flops", entry.flops},
            {"loss", entry.loss},
            {"timestamp", entry.timestamp},
        };
        out << j.dump() << "\n";
        if (!out) throw Error("write failure on memory bank " + path_.string());
    }
    entries_.push_back(std::move(entry));
}

ProxyRequest make_proxy_request(const Model& base, std::int64_t flops_limit,
                                const GroupDescriptor& group, const std::string& settings_digest,
                                const MemoryBank& bank, int num_candidates, int round) {
    ProxyRequest req;
    req.layer_widths = base.spec.hidden_widths;
    for (int l = 0; l < base.spec.hidden_count(); ++l) {
        const std::int64_t in = base.spec.layer_in(l);
        const std::int64_t out = base.spec.layer_out(l);
        req.layer_flops.push_back(2 * in * out + out + 4 * out);
    }
    req.total_flops = count_flops(base.spec);
    req.flops_limit = flops_limit;
    req.group = group;
    req.settings_digest = settings_digest;
    req.history = bank.entries();
    std::sort(req.history.begin(), req.history.end(),
              [](const MemoryBankEntry& a, const MemoryBankEntry& b) {
                  return scheme_less(a.loss, a.flops, a.scheme, b.loss, b.flops, b.scheme);
              });
    req.num_candidates = num_candidates;
    req.round = round;
    return req;
}

std::vector<std::vector<double>> magnitude_importance(const Model& m) {
    std::vector<std::vector<double>> scores;
    for (int l = 0; l < m.spec.hidden_count(); ++l) {
        const Tensor& w = m.params.weights[l];
        const Tensor& w_next = m.params.weights[l + 1];
        std::vector<double> layer(w.rows);
        for (int j = 0; j < w.rows; ++j) {
            double row_sq = 0.0;
            for (int c = 0; c < w.cols; ++c) row_sq += double(w.at(j, c)) * w.at(j, c);
            double col_sq = 0.0;
            for (int r = 0; r < w_next.rows; ++r) col_sq += double(w_next.at(r, j)) * w_next.at(r, j);
            layer[j] = std::sqrt(row_sq) + std::sqrt(col_sq);
        }
        scores.push_back(std::move(layer));
    }
    return scores;
}

std::vector<std::vector<double>> taylor_importance(const Model& m, const Batch& batch,
                                                   const NoiseSchedule& s) {
    const auto lg = grad(m, batch, s);
    std::vector<std::vector<double>> scores;
    for (int l = 0; l < m.spec.hidden_count(); ++l) {
        const Tensor& w = m.params.weights[l];
        const Tensor& g = lg.grads.weights[l];
        const Tensor& w_next = m.params.weights[l + 1];
        const Tensor& g_next = lg.grads.weights[l + 1];
        std::vector<double> layer(w.rows);
        for (int j = 0; j < w.rows; ++j) {
            double acc = 0.0;
            for (int c = 0; c < w.cols; ++c) acc += std::abs(double(w.at(j, c)) * g.at(j, c));
            acc += std::abs(double(m.params.biases[l].data[j]) * lg.grads.biases[l].data[j]);
            for (int r = 0; r < w_next.rows; ++r) {
                acc += std::abs(double(w_next.at(r, j)) * g_next.at(r, j));
            }
            layer[j] = acc;
        }
        scores.push_back(std::move(layer));
    }
    return scores;
}

PruningScheme greedy_scheme_to_limit(const DenoiserSpec& spec,
                                     const std::vector<std::vector<double>>& scores,
                                     std::int64_t flops_limit, PruningScheme start) {
    PruningScheme scheme;
    scheme.remove = normalized_remove(spec, start);
    scheme.provenance = start.provenance;
    scheme.round = start.round;

    std::vector<int> kept_count(spec.hidden_count());
    std::vector<std::vector<bool>> removed(spec.hidden_count());
    for (int l = 0; l < spec.hidden_count(); ++l) {
        removed[l].assign(spec.hidden_widths[l], false);
        for (int idx : scheme.remove[l]) removed[l][idx] = true;
        kept_count[l] = spec.hidden_widths[l] - static_cast<int>(scheme.remove[l].size());
        if (kept_count[l] < 1) throw Error("scheme empties hidden layer " + std::to_string(l));
    }

    struct Cand {
        double score;
        int layer;
        int channel;
    };
    std::vector<Cand> order;
    for (int l = 0; l < spec.hidden_count(); ++l) {
        for (int c = 0; c < spec.hidden_widths[l]; ++c) {
            if (!removed[l][c]) order.push_back({scores[l][c], l, c});
        }
    }
    std::sort(order.begin(), order.end(), [](const Cand& a, const Cand& b) {
        if (a.score != b.score) return a.score < b.score;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.channel < b.channel;
    });

    auto current = scheme_flops(spec, scheme);
    for (const Cand& cand : order) {
        if (current <= flops_limit) break;
        if (kept_count[cand.layer] <= 1) continue;
        removed[cand.layer][cand.channel] = true;
        kept_count[cand.layer] -= 1;
        scheme.remove[cand.layer].insert(
            std::lower_bound(scheme.remove[cand.layer].begin(), scheme.remove[cand.layer].end(),
                             cand.channel),
            cand.channel);
        current = scheme_flops(spec, scheme);
    }
    if (current > flops_limit) {
        throw Error("FLOPs limit " + std::to_string(flops_limit) +
                    " unreachable: single-channel floor needs " + std::to_string(current));
    }
    return scheme;
}

namespace {

// Deterministic exploration jitter for score-based proxies: candidate 0 is
// the pure greedy scheme, later candidates mildly reshuffle the ranking.
std::vector<std::vector<double>> jitter_scores(const std::vector<std::vector<double>>& scores,
                                               std::uint64_t salt, int round, int candidate) {
    if (candidate == 0) return scores;
    Rng rng(derive_seed(salt, "score-jitter",
                        (static_cast<std::uint64_t>(round) << 20) + candidate));
    auto out = scores;
    for (auto& layer : out) {
        for (auto& v : layer) v *= 1.0 + 0.15 * rng.uniform(-1.0, 1.0);
    }
    return out;
}

class RandomProxy final : public Proxy {
public:
    RandomProxy(const Model& base, std::uint64_t seed) : base_(&base), seed_(seed) {}
    std::string name() const override { return "random"; }

    std::vector<PruningScheme> propose(const ProxyRequest& req) override {
        std::vector<PruningScheme> out;
        for (int j = 0; j < req.num_candidates; ++j) {
            Rng rng(derive_seed(seed_, "random-proxy",
                                (static_cast<std::uint64_t>(req.round) << 20) + j));
            PruningScheme scheme;
            scheme.remove.assign(base_->spec.hidden_count(), {});
            scheme.provenance = name();
            std::vector<std::vector<int>> kept(base_->spec.hidden_count());
            for (int l = 0; l < base_->spec.hidden_count(); ++l) {
                kept[l].resize(base_->spec.hidden_widths[l]);
                for (int c = 0; c < base_->spec.hidden_widths[l]; ++c) kept[l][c] = c;
            }
            while (scheme_flops(base_->spec, scheme) > req.flops_limit) {
                std::vector<int> candidates;
                for (int l = 0; l < base_->spec.hidden_count(); ++l) {
                    if (kept[l].size() > 1) candidates.push_back(l);
                }
                if (candidates.empty()) break;
                const int l = candidates[rng.below(candidates.size())];
                const auto pos = rng.below(kept[l].size());
                const int channel = kept[l][pos];
                kept[l].erase(kept[l].begin() + static_cast<std::ptrdiff_t>(pos));
                scheme.remove[l].insert(
                    std::lower_bound(scheme.remove[l].begin(), scheme.remove[l].end(), channel),
                    channel);
            }
            out.push_back(std::move(scheme));
        }
        return out;
    }

private:
    const Model* base_;
    std::uint64_t seed_;
};

class MagnitudeProxy final : public Proxy {
public:
    explicit MagnitudeProxy(const Model& base)
        : base_(&base), scores_(magnitude_importance(base)) {}
    std::string name() const override { return "magnitude"; }

    std::vector<PruningScheme> propose(const ProxyRequest& req) override {
        std::vector<PruningScheme> out;
        for (int j = 0; j < req.num_candidates; ++j) {
            auto scheme = greedy_scheme_to_limit(
                base_->spec, jitter_scores(scores_, 0x6d61676eULL, req.round, j),
                req.flops_limit);
            scheme.provenance = name();
            out.push_back(std::move(scheme));
        }
        return out;
    }

private:
    const Model* base_;
    std::vector<std::vector<double>> scores_;
};

class TaylorProxy final : public Proxy {
public:
    TaylorProxy(const Model& base, const Batch& batch, const NoiseSchedule& schedule)
        : base_(&base), scores_(taylor_importance(base, batch, schedule)) {}
    std::string name() const override { return "taylor"; }

    std::vector<PruningScheme> propose(const ProxyRequest& req) override {
        std::vector<PruningScheme> out;
        for (int j = 0; j < req.num_candidates; ++j) {
            auto scheme = greedy_scheme_to_limit(
                base_->spec, jitter_scores(scores_, 0x7461796cULL, req.round, j),
                req.flops_limit);
            scheme.provenance = name();
            out.push_back(std::move(scheme));
        }
        return out;
    }

private:
    const Model* base_;
    std::vector<std::vector<double>> scores_;
};

} // namespace

std::unique_ptr<Proxy> make_random_proxy(const Model& base, std::uint64_t seed) {
    return std::make_unique<RandomProxy>(base, seed);
}

std::unique_ptr<Proxy> make_magnitude_proxy(const Model& base) {
    return std::make_unique<MagnitudeProxy>(base);
}

std::unique_ptr<Proxy> make_taylor_proxy(const Model& base, const Batch& batch,
                                         const NoiseSchedule& schedule) {
    return std::make_unique<TaylorProxy>(base, batch, schedule);
}

std::vector<PruningScheme> propose_schemes(Proxy& proxy, const ProxyRequest& req,
                                           const Model& base) {
    if (req.num_candidates < 1) throw Error("candidate count must be at least 1");
    auto raw = proxy.propose(req);
    std::vector<PruningScheme> out;
    for (auto& scheme : raw) {
        scheme.provenance = scheme.provenance.empty() ? proxy.name() : scheme.provenance;
        scheme.round = req.round;
        try {
            scheme.remove = normalized_remove(base.spec, scheme);
            if (scheme_flops(base.spec, scheme) > req.flops_limit) {
                scheme = greedy_scheme_to_limit(base.spec, magnitude_importance(base),
                                                req.flops_limit, scheme);
            }
            out.push_back(std::move(scheme));
        } catch (const Error&) {
            // Unrepairable proposal (bad indices, emptied layer, unreachable
            // limit): dropped; the caller logs the shortfall.
        }
    }
    return out;
}

double evaluate_scheme(const Model& base, const PruningScheme& scheme,
                       const std::vector<Batch>& eval_batches, const NoiseSchedule& s) {
    if (eval_batches.empty()) throw Error("evaluate_scheme: no evaluation batches");
    const auto pruned = apply_mask(base, mask_from_scheme(base.spec, scheme));
    double total = 0.0;
    for (const auto& batch : eval_batches) total += loss(pruned, batch, s);
    return total / static_cast<double>(eval_batches.size());
}

PruneLoopResult iterative_prune(const Model& base, std::int64_t flops_limit, Proxy& proxy,
                                int rounds, int candidates_per_round, MemoryBank& bank,
                                const GroupDescriptor& group, const std::string& settings_digest,
                                const std::vector<Batch>& eval_batches, const NoiseSchedule& s,
                                std::vector<std::string>* log) {
    if (rounds < 1 || candidates_per_round < 1) {
        throw Error("iterative_prune: rounds and candidates must be at least 1");
    }
    auto note = [&](std::string msg) {
        if (log) log->push_back(std::move(msg));
    };

    std::unique_ptr<Proxy> fallback;
    PruneLoopResult result;
    bool have_best = false;

    for (int r = 0; r < rounds; ++r) {
        const auto req = make_proxy_request(base, flops_limit, group, settings_digest, bank,
                                            candidates_per_round, r);
        std::vector<PruningScheme> schemes;
        try {
            schemes = propose_schemes(proxy, req, base);
        } catch (const Error& e) {
            if (proxy.name() == "magnitude") throw;
            note("round " + std::to_string(r) + ": proxy '" + proxy.name() + "' failed (" +
                 e.what() + "); falling back to magnitude");
            if (!fallback) fallback = make_magnitude_proxy(base);
            schemes = propose_schemes(*fallback, req, base);
        }
        if (static_cast<int>(schemes.size()) < candidates_per_round) {
            const int missing = candidates_per_round - static_cast<int>(schemes.size());
            result.failed_candidates += missing;
            note("round " + std::to_string(r) + ": " + std::to_string(missing) +
                 " candidate(s) rejected during validation");
        }

        double sum = 0.0, sum_sq = 0.0;
        for (auto& scheme : schemes) {
            const double candidate_loss = evaluate_scheme(base, scheme, eval_batches, s);
            const std::int64_t candidate_flops = scheme_flops(base.spec, scheme);
            bank.append({scheme, candidate_loss, candidate_flops, iso_timestamp()});
            sum += candidate_loss;
            sum_sq += candidate_loss * candidate_loss;
            if (!have_best || scheme_less(candidate_loss, candidate_flops, scheme,
                                          result.best_loss, result.best_flops, result.best)) {
                result.best = scheme;
                result.best_loss = candidate_loss;
                result.best_flops = candidate_flops;
                have_best = true;
            }
        }
        if (schemes.empty()) {
            result.round_mean_loss.push_back(std::numeric_limits<double>::quiet_NaN());
            result.round_std_loss.push_back(std::numeric_limits<double>::quiet_NaN());
        } else {
            const double n = static_cast<double>(schemes.size());
            const double mean = sum / n;
            result.round_mean_loss.push_back(mean);
            result.round_std_loss.push_back(std::sqrt(std::max(0.0, sum_sq / n - mean * mean)));
        }
        result.best_so_far_loss.push_back(
            have_best ? result.best_loss : std::numeric_limits<double>::quiet_NaN());
    }

    if (!have_best) {
        throw Error("iterative_prune: no valid candidate produced in " + std::to_string(rounds) +
                    " round(s)");
    }
    return result;
}

} // namespace pd
