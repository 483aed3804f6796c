// Acceptance gate: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line each. Exit status is the number of failed criteria.

#include "pd/allocation.hpp"
#include "pd/config.hpp"
#include "pd/dataset.hpp"
#include "pd/denoiser.hpp"
#include "pd/kernels.hpp"
#include "pd/errors.hpp"
#include "pd/llm_proxy.hpp"
#include "pd/metrics.hpp"
#include "pd/pipeline.hpp"
#include "pd/pruning.hpp"
#include "pd/rng.hpp"
#include "pd/sampler.hpp"
#include "pd/schedule.hpp"
#include "test_util.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace pd;
using nlohmann::ordered_json;

namespace {

int g_failures = 0;

void criterion(int index, const std::string& label, const std::function<bool(std::string&)>& body) {
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
        ok = body(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %2d: %s (%.2f s)%s%s\n", ok ? "PASS" : "FAIL", index,
                label.c_str(), secs, detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

// ---------------------------------------------------------------------------
// Reference-run machinery: one cache of finished experiment directories,
// keyed by (mode, seed), all on the shipped reference configuration.
// ---------------------------------------------------------------------------

ExperimentConfig reference_config() {
    ExperimentConfig cfg;
    cfg.dataset_name = "eight-gaussians";
    cfg.dataset_size = 2048;
    cfg.schedule_kind = "cosine";
    cfg.timesteps = 100;
    cfg.hidden_widths = {64, 64, 64};
    cfg.time_embed_dim = 16;
    cfg.groups = 5;
    cfg.k = 0.5;
    cfg.proxy = "magnitude";
    cfg.rounds = 5;
    cfg.candidates = 3;
    cfg.stage1_steps = 5000;
    cfg.stage2_steps = 1000;
    cfg.batch_size = 128;
    cfg.sample_steps = 50;
    cfg.seed = 1;
    return cfg;
}

fs::path g_root;

struct RunHandle {
    ExperimentPaths paths;
    ordered_json report;
};

std::map<std::string, RunHandle> g_runs;

const RunHandle& reference_run(const std::string& mode, std::uint64_t seed) {
    const std::string key = mode + "/" + std::to_string(seed);
    auto it = g_runs.find(key);
    if (it != g_runs.end()) return it->second;

    ExperimentConfig cfg = reference_config();
    cfg.seed = seed;
    ExperimentPaths paths{g_root / (mode + "-seed" + std::to_string(seed))};

    std::string text;
    if (mode == "two-stage") {
        text = two_stage_train(cfg, paths, true);
    } else if (mode == "noprune") {
        text = two_stage_train(cfg, paths, false);
    } else if (mode == "base") {
        // The stage-1 model alone: no pruning, zero fine-tune steps, so every
        // group checkpoint is the base model.
        cfg.stage2_steps = 0;
        text = two_stage_train(cfg, paths, false);
    } else if (mode == "single") {
        text = single_stage_train(cfg, paths);
    } else {
        throw pd::Error("unknown reference mode " + mode);
    }
    return g_runs.emplace(key, RunHandle{paths, ordered_json::parse(text)}).first->second;
}

double energy_of(const std::string& mode, std::uint64_t seed) {
    return reference_run(mode, seed).report.at("metrics").at("energy_distance").get<double>();
}

double median3(double a, double b, double c) {
    std::vector<double> v{a, b, c};
    std::sort(v.begin(), v.end());
    return v[1];
}

bool rel_close(double got, double want, double tol) {
    return std::abs(got - want) <= tol * std::max({1.0, std::abs(got), std::abs(want)});
}

// ---------------------------------------------------------------------------
// Criterion 1 oracle: long-double re-derivation of SNR, targets, limits and
// membership, no shared code with the production path.
// ---------------------------------------------------------------------------

struct OracleAllocation {
    std::vector<double> snr;
    std::vector<double> targets;
    std::vector<double> raw_limits;
    std::vector<int> membership;
};

OracleAllocation allocation_oracle(const NoiseSchedule& s, double k, double f, int n_groups) {
    const int t_count = s.timestep_count;
    OracleAllocation out;
    out.snr.resize(t_count);
    std::vector<long double> neg(t_count);
    for (int t = 0; t < t_count; ++t) {
        const long double ab = s.alpha_bars[t];
        const long double snr = 10.0L * std::log10((double)(ab / (1.0L - ab)));
        out.snr[t] = static_cast<double>(snr);
        neg[t] = -snr;
    }
    long double mean = 0.0L;
    for (auto v : neg) mean += v;
    mean /= t_count;
    long double var = 0.0L;
    for (auto v : neg) var += (v - mean) * (v - mean);
    var /= t_count;
    const long double sd = std::sqrt((double)var);
    std::vector<long double> sn(t_count);
    for (int t = 0; t < t_count; ++t) sn[t] = (neg[t] - mean) / sd;
    const long double lo = *std::min_element(sn.begin(), sn.end());
    const long double hi = *std::max_element(sn.begin(), sn.end());
    out.targets.resize(t_count);
    for (int t = 0; t < t_count; ++t) {
        out.targets[t] = static_cast<double>(k * f + (1.0L - k) * ((sn[t] - lo) / (hi - lo)) * f);
    }

    out.raw_limits.resize(n_groups);
    for (int i = 0; i < n_groups; ++i) {
        out.raw_limits[i] =
            static_cast<double>((static_cast<long double>(i) / n_groups +
                                 (static_cast<long double>(n_groups - i) / n_groups) * k) *
                                f);
    }
    std::vector<long double> v(n_groups), w(n_groups);
    for (int i = 0; i < n_groups; ++i) w[i] = out.raw_limits[i];
    w[n_groups - 1] = std::max<long double>(w[n_groups - 1], f);
    v[0] = 0.0L;
    for (int i = 1; i < n_groups; ++i) v[i] = out.raw_limits[i - 1];

    out.membership.resize(t_count, -1);
    for (int t = 0; t < t_count; ++t) {
        for (int i = 0; i < n_groups; ++i) {
            if (v[i] < out.targets[t] && out.targets[t] <= w[i]) {
                out.membership[t] = i;
                break;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

bool criterion1(std::string& detail) {
    const auto s = build_cosine_schedule(1000, 0.008);
    const FlopsBudget budget{0.5, 8.14e9};
    const auto oracle = allocation_oracle(s, budget.k, budget.f_max, 10);

    const auto profile = difficulty_profile(s, budget);
    std::vector<double> lower, upper;
    group_limits(10, budget, lower, upper);
    const auto plan = partition_timesteps(profile, lower, upper);

    for (int t = 0; t < 1000; ++t) {
        if (!rel_close(snr_db(s, t), oracle.snr[t], 1e-9)) {
            detail = "snr mismatch at t=" + std::to_string(t);
            return false;
        }
        if (!rel_close(profile.flops_target[t], oracle.targets[t], 1e-9)) {
            detail = "target mismatch at t=" + std::to_string(t);
            return false;
        }
        if (plan.group_of(t) != oracle.membership[t]) {
            detail = "membership mismatch at t=" + std::to_string(t);
            return false;
        }
    }
    for (int i = 0; i < 10; ++i) {
        const double expect = (0.50 + 0.05 * i) * budget.f_max;
        if (std::abs(group_limit_raw(i, 10, budget) - expect) > 1e-12 * budget.f_max) {
            detail = "raw limit " + std::to_string(i) + " off";
            return false;
        }
        if (!rel_close(group_limit_raw(i, 10, budget), oracle.raw_limits[i], 1e-9)) {
            detail = "limit oracle mismatch at i=" + std::to_string(i);
            return false;
        }
    }
    if (upper[9] != budget.f_max) {
        detail = "clamp missing on the last group";
        return false;
    }
    detail = "1000 timesteps, 10 groups checked";
    return true;
}

bool criterion2(std::string& detail) {
    long long plans = 0;
    for (const bool cosine : {false, true}) {
        NoiseSchedule s;
        for (int t_count = 1; t_count <= 500; ++t_count) {
            s = cosine ? build_cosine_schedule(t_count, 0.008)
                       : build_linear_schedule(t_count, 1e-4, 0.02);
            for (const double k : {0.1, 0.5, 1.0}) {
                const FlopsBudget budget{k, 19906.0};
                const auto profile = difficulty_profile(s, budget);
                for (int n = 1; n <= 20; ++n) {
                    std::vector<double> lower, upper;
                    group_limits(n, budget, lower, upper);
                    const auto plan = partition_timesteps(profile, lower, upper);
                    ++plans;

                    std::vector<int> seen(t_count, 0);
                    for (const auto& g : plan.members) {
                        for (int t : g) seen[t]++;
                    }
                    for (int t = 0; t < t_count; ++t) {
                        if (seen[t] != 1) {
                            detail = "partition broken: T=" + std::to_string(t_count) +
                                     " N=" + std::to_string(n) + " k=" + std::to_string(k);
                            return false;
                        }
                    }
                    for (int t = 1; t < t_count; ++t) {
                        if (plan.group_of(t) < plan.group_of(t - 1)) {
                            detail = "group index not monotone: T=" + std::to_string(t_count) +
                                     " N=" + std::to_string(n) + " k=" + std::to_string(k);
                            return false;
                        }
                    }
                    for (const auto& g : plan.members) {
                        for (std::size_t j = 1; j < g.size(); ++j) {
                            if (g[j] != g[j - 1] + 1) {
                                detail = "group not contiguous";
                                return false;
                            }
                        }
                    }
                }
            }
        }
    }
    detail = std::to_string(plans) + " plans checked";
    return true;
}

bool criterion3(std::string& detail) {
    const auto s = build_cosine_schedule(10);
    Rng pick(2024);
    int checked = 0;
    for (int trial = 0; trial < 5; ++trial) {
        DenoiserSpec spec;
        spec.input_dim = 2;
        spec.time_embed_dim = 4;
        const int layers = 1 + static_cast<int>(pick.below(2));
        for (int l = 0; l < layers; ++l) {
            spec.hidden_widths.push_back(4 + static_cast<int>(pick.below(5)));
        }
        Model m{spec, init_params(spec, 3000 + trial)};
        const Batch batch = testutil::random_batch(6, 10, 4000 + trial);
        const auto lg = grad(m, batch, s);
        const auto flat = testutil::FlatParams::from(m.params);

        double gmax = 0.0;
        for (const auto& w : lg.grads.weights) {
            for (float v : w.data) gmax = std::max(gmax, std::abs(double(v)));
        }

        int accepted = 0, guard = 0;
        while (accepted < 20 && guard++ < 4000) {
            const int l = static_cast<int>(pick.below(spec.layer_count()));
            const bool is_weight = pick.below(2) == 0;
            const auto& src = is_weight ? flat.weights[l] : flat.biases[l];
            const auto idx = static_cast<std::size_t>(pick.below(src.size()));
            const double an = is_weight ? lg.grads.weights[l].data[idx]
                                        : lg.grads.biases[l].data[idx];
            if (std::abs(an) < 1e-2 * gmax) continue;
            ++accepted;

            auto shifted = flat;
            auto& coord = is_weight ? shifted.weights[l][idx] : shifted.biases[l][idx];
            const double saved = coord;
            const double h = 1e-3;
            coord = saved + h;
            const double up = testutil::reference_loss(spec, shifted, batch, s);
            coord = saved - h;
            const double down = testutil::reference_loss(spec, shifted, batch, s);
            const double fd = (up - down) / (2.0 * h);
            if (std::abs(fd - an) > 1e-3 * std::max(std::abs(fd), std::abs(an))) {
                detail = "gradient mismatch: fd=" + std::to_string(fd) +
                         " analytic=" + std::to_string(an);
                return false;
            }
        }
        if (accepted < 20) {
            detail = "could not find 20 probe coordinates";
            return false;
        }
        checked += accepted;
    }
    detail = std::to_string(checked) + " coordinates over 5 specs";
    return true;
}

bool criterion4(std::string& detail) {
    DenoiserSpec spec;
    spec.input_dim = 2;
    spec.hidden_widths = {16, 12};
    spec.time_embed_dim = 8;
    const Model base{spec, init_params(spec, 41)};
    const auto s = build_cosine_schedule(20);
    std::vector<int> all_ts(20);
    for (int t = 0; t < 20; ++t) all_ts[t] = t;
    Rng batch_rng(42);
    const Batch tbatch = make_batch(ToyDataset::EightGaussians, all_ts, 32, batch_rng);
    const std::int64_t full = count_flops(spec);

    // llm-stub: a local endpoint cycling syntactically valid proposals, some
    // of which violate the limit and must be repaired.
    httplib::Server server;
    std::atomic<int> call_count{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        const int c = call_count++;
        static const char* bodies[] = {
            "{\"remove\": {\"0\": [0,1,2,3], \"1\": [0]}}",
            "{\"remove\": {}}",
            "plan: {\"remove\": {\"0\": [5], \"1\": [1,2,3]}}",
        };
        ordered_json env = {{"choices",
                             {{{"message", {{"role", "assistant"},
                                            {"content", bodies[c % 3]}}}}}}};
        res.set_content(env.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    LlmEndpoint stub;
    stub.url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    stub.model = "stub";
    stub.timeout_s = 5;
    stub.max_retries = 1;
    stub.backoff_base_s = 0.0;

    bool ok = true;
    long long schemes_checked = 0;
    auto run_trials = [&](const std::string& name, auto make) {
        for (int trial = 0; trial < 100 && ok; ++trial) {
            Rng vary(900 + trial);
            const std::int64_t limit = full / 2 + static_cast<std::int64_t>(vary.below(full / 2));
            auto proxy = make(trial);
            const MemoryBank empty_bank;
            auto req = make_proxy_request(base, limit, GroupDescriptor{}, "acceptance",
                                          empty_bank, 1 + trial % 3, trial % 5);
            const auto schemes = propose_schemes(*proxy, req, base);
            if (schemes.size() != static_cast<std::size_t>(req.num_candidates)) {
                detail = name + ": dropped candidates at trial " + std::to_string(trial);
                ok = false;
                return;
            }
            for (const auto& scheme : schemes) {
                ++schemes_checked;
                if (scheme_flops(spec, scheme) > limit) {
                    detail = name + ": constraint violated at trial " + std::to_string(trial);
                    ok = false;
                    return;
                }
            }
        }
    };
    run_trials("random", [&](int trial) { return make_random_proxy(base, 7000 + trial); });
    run_trials("magnitude", [&](int) { return make_magnitude_proxy(base); });
    run_trials("taylor", [&](int) { return make_taylor_proxy(base, tbatch, s); });
    run_trials("llm-stub", [&](int) { return make_llm_proxy(stub, {}); });

    // Bank growth: R*C per iterative_prune run, zero failures, every proxy.
    if (ok) {
        Rng eval_rng(43);
        std::vector<Batch> eval_batches = {
            make_batch(ToyDataset::EightGaussians, all_ts, 32, eval_rng)};
        const std::int64_t limit = (full * 3) / 4;
        const int rounds = 5, cands = 3;
        std::unique_ptr<Proxy> proxies[] = {
            make_random_proxy(base, 99), make_magnitude_proxy(base),
            make_taylor_proxy(base, tbatch, s), make_llm_proxy(stub, {})};
        for (auto& proxy : proxies) {
            MemoryBank bank;
            const auto result = iterative_prune(base, limit, *proxy, rounds, cands, bank,
                                                GroupDescriptor{}, "acceptance", eval_batches, s);
            if (bank.size() != static_cast<std::size_t>(rounds * cands) ||
                result.failed_candidates != 0) {
                detail = proxy->name() + ": bank grew by " + std::to_string(bank.size()) +
                         " with " + std::to_string(result.failed_candidates) + " failures";
                ok = false;
                break;
            }
        }
    }

    server.stop();
    server_thread.join();
    if (ok) detail = std::to_string(schemes_checked) + " schemes across 4 proxies";
    return ok;
}

bool criterion5(std::string& detail) {
    const auto s = build_cosine_schedule(100);
    DenoiserSpec spec;
    spec.input_dim = 2;
    spec.hidden_widths = {64, 64, 64};
    spec.time_embed_dim = 16;
    const Model base{spec, init_params(spec, 77)};
    const FlopsBudget budget{0.5, static_cast<double>(count_flops(spec))};

    const auto plan5 = plan_groups(s, budget, 5);
    ModelBank grouped{plan5, {}, base};
    grouped.models.assign(5, base);
    const auto plan1 = plan_groups(s, budget, 1);
    ModelBank single{plan1, {}, base};
    single.models.resize(1);

    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        for (const int steps : {10, 50, 100}) {
            const auto a = ddim_sample(grouped, s, steps, 4, seed);
            const auto b = ddim_sample(single, s, steps, 4, seed);
            if (a.data != b.data) {
                detail = "divergence at seed " + std::to_string(seed) + " S=" +
                         std::to_string(steps);
                return false;
            }
        }
    }
    detail = "10 seeds x {10,50,100} steps bitwise equal";
    return true;
}

bool criterion6(std::string& detail) {
    const auto& run = reference_run("two-stage", 1);
    const double ratio =
        run.report.at("flops").at("trajectory_mean_ratio").get<double>();
    std::ostringstream out;
    out.precision(4);
    out << "trajectory mean ratio " << ratio << " (band 0.70..0.90)";
    detail = out.str();
    return ratio >= 0.70 && ratio <= 0.90;
}

bool criterion7(std::string& detail) {
    auto attempt = [&](const std::vector<std::uint64_t>& seeds, std::string& why) {
        const double base_med = median3(energy_of("base", seeds[0]), energy_of("base", seeds[1]),
                                        energy_of("base", seeds[2]));
        const double noprune_med =
            median3(energy_of("noprune", seeds[0]), energy_of("noprune", seeds[1]),
                    energy_of("noprune", seeds[2]));
        const double pruned_med = median3(energy_of("two-stage", seeds[0]), energy_of("two-stage", seeds[1]),
                                          energy_of("two-stage", seeds[2]));
        std::ostringstream out;
        out.precision(4);
        out << "median energy base=" << base_med << " noprune=" << noprune_med
            << " pruned=" << pruned_med;
        why = out.str();
        return noprune_med <= base_med && pruned_med <= 1.15 * base_med;
    };
    std::string why;
    if (attempt({1, 2, 3}, why)) {
        detail = why;
        return true;
    }
    std::string retry_why;
    const bool ok = attempt({11, 12, 13}, retry_why);
    detail = why + "; retry " + retry_why;
    return ok;
}

bool criterion8(std::string& detail) {
    auto attempt = [&](const std::vector<std::uint64_t>& seeds, std::string& why) {
        const double two_med = median3(energy_of("two-stage", seeds[0]), energy_of("two-stage", seeds[1]),
                                       energy_of("two-stage", seeds[2]));
        const double one_med =
            median3(energy_of("single", seeds[0]), energy_of("single", seeds[1]),
                    energy_of("single", seeds[2]));
        std::ostringstream out;
        out.precision(4);
        out << "median energy two-stage=" << two_med << " single-stage=" << one_med;
        why = out.str();
        return two_med <= one_med;
    };
    std::string why;
    if (attempt({1, 2, 3}, why)) {
        detail = why;
        return true;
    }
    std::string retry_why;
    const bool ok = attempt({11, 12, 13}, retry_why);
    detail = why + "; retry " + retry_why;
    return ok;
}

bool criterion9(std::string& detail) {
    const auto& run = reference_run("two-stage", 1);
    const Model base = load_checkpoint(run.paths.base_ckpt());
    const auto s = reference_config().build_schedule();
    std::vector<int> all_ts(s.timestep_count);
    for (int t = 0; t < s.timestep_count; ++t) all_ts[t] = t;

    for (std::uint64_t proxy_seed = 1; proxy_seed <= 5; ++proxy_seed) {
        Rng eval_rng(derive_seed(proxy_seed, "stability-eval"));
        std::vector<Batch> eval_batches = {
            make_batch(ToyDataset::EightGaussians, all_ts, 128, eval_rng)};
        auto proxy = make_random_proxy(base, 5000 + proxy_seed);
        MemoryBank bank;
        const std::int64_t limit = (count_flops(base.spec) * 7) / 10;
        const auto result = iterative_prune(base, limit, *proxy, 5, 3, bank, GroupDescriptor{},
                                            "stability", eval_batches, s);
        if (result.round_mean_loss.size() != 5) {
            detail = "round means missing";
            return false;
        }
        for (double mean : result.round_mean_loss) {
            if (!std::isfinite(mean)) {
                detail = "non-finite round mean";
                return false;
            }
        }
        for (std::size_t r = 1; r < result.best_so_far_loss.size(); ++r) {
            if (result.best_so_far_loss[r] > result.best_so_far_loss[r - 1]) {
                detail = "best-so-far increased at round " + std::to_string(r);
                return false;
            }
        }
    }
    detail = "5 runs, 5 rounds each, running minimum monotone";
    return true;
}

bool criterion10(std::string& detail) {
    ExperimentConfig cfg = reference_config();
    ExperimentPaths a{g_root / "repro-a"};
    ExperimentPaths b{g_root / "repro-b"};
    const auto ta = two_stage_train(cfg, a, true);
    const auto tb = two_stage_train(cfg, b, true);
    const auto ja = ordered_json::parse(ta);
    const auto jb = ordered_json::parse(tb);
    if (ja.at("metrics") != jb.at("metrics")) {
        detail = "metrics fields differ";
        return false;
    }
    if (ta != tb) {
        detail = "metrics equal but full reports differ";
        return false;
    }
    detail = "two pipeline executions byte-identical";
    return true;
}

} // namespace

int main() {
    g_root = fs::temp_directory_path() / "pd_acceptance";
    fs::remove_all(g_root);
    fs::create_directories(g_root);
    std::printf("acceptance suite (kernels: %s, workdir %s)\n",
                kernels::active_name().c_str(), g_root.string().c_str());

    criterion(1, "formula fidelity vs brute-force oracle (T=1000, N=10, k=0.5)", criterion1);
    criterion(2, "partition/contiguity invariants, T=1..500, N=1..20, k in {0.1,0.5,1.0}",
              criterion2);
    criterion(3, "analytic gradients vs central finite differences", criterion3);
    criterion(4, "FLOPs constraint on every proxy; bank growth R*C", criterion4);
    criterion(5, "grouped DDIM bitwise equals single-model DDIM", criterion5);
    criterion(6, "trajectory-mean FLOPs within 0.70..0.90 of the base model", criterion6);
    criterion(7, "quality premise: grouped fine-tuning does not hurt", criterion7);
    criterion(8, "two-stage beats single-stage at matched budget", criterion8);
    criterion(9, "stability protocol: R=5, C=3 running minimum monotone", criterion9);
    criterion(10, "pipeline reproducibility from one config", criterion10);

    if (g_failures == 0) {
        std::printf("all criteria passed\n");
    } else {
        std::printf("%d criterion(s) failed\n", g_failures);
    }
    return g_failures;
}
