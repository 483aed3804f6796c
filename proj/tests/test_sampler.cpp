#include <doctest.h>

#include "pd/allocation.hpp"
#include "pd/errors.hpp"
#include "pd/metrics.hpp"
#include "pd/pruning.hpp"
#include "pd/rng.hpp"
#include "pd/sampler.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>

using namespace pd;
using testutil::small_spec;

namespace {

ModelBank bank_of(const GroupPlan& plan, const Model& base) {
    ModelBank bank;
    bank.plan = plan;
    bank.models.resize(plan.group_count);
    bank.fallback = base;
    return bank;
}

} // namespace

TEST_CASE("strided timesteps: descending, ends at zero, covers S=T") {
    const auto full = strided_timesteps(10, 10);
    CHECK(full.front() == 9);
    CHECK(full.back() == 0);
    for (std::size_t j = 1; j < full.size(); ++j) CHECK(full[j] < full[j - 1]);

    for (int steps : {1, 3, 7, 50}) {
        const auto ts = strided_timesteps(100, steps);
        CHECK(static_cast<int>(ts.size()) == steps);
        CHECK(ts.back() == 0);
        for (std::size_t j = 1; j < ts.size(); ++j) CHECK(ts[j] < ts[j - 1]);
    }
    CHECK_THROWS_AS(strided_timesteps(10, 11), Error);
    CHECK_THROWS_AS(strided_timesteps(10, 0), Error);
}

TEST_CASE("routing: identical models in every group reproduce single-model DDIM bitwise") {
    const auto s = build_cosine_schedule(40);
    const auto spec = small_spec({12, 10}, 4);
    const Model base{spec, init_params(spec, 31)};
    const FlopsBudget budget{0.5, static_cast<double>(count_flops(spec))};

    const auto plan5 = plan_groups(s, budget, 5);
    auto grouped = bank_of(plan5, base);
    for (auto& slot : grouped.models) slot = base;

    const auto plan1 = plan_groups(s, budget, 1);
    auto single = bank_of(plan1, base);

    for (const std::uint64_t seed : {1ull, 2ull, 99ull}) {
        for (const int steps : {5, 17, 40}) {
            const auto a = ddim_sample(grouped, s, steps, 8, seed);
            const auto b = ddim_sample(single, s, steps, 8, seed);
            CHECK(a.data == b.data); // bitwise
        }
    }
}

TEST_CASE("routing invariance: storage order of groups does not matter") {
    const auto s = build_cosine_schedule(30);
    const auto spec = small_spec({10, 8}, 4);
    const Model base{spec, init_params(spec, 33)};
    const FlopsBudget budget{0.5, static_cast<double>(count_flops(spec))};
    const auto plan = plan_groups(s, budget, 4);

    auto bank = bank_of(plan, base);
    for (int g = 0; g < plan.group_count; ++g) {
        bank.models[g] = Model{spec, init_params(spec, 100 + g)};
    }
    const auto out1 = ddim_sample(bank, s, 15, 6, 5);

    // The same group->model mapping reached through a reordered plan.
    GroupPlan shuffled = plan;
    std::vector<int> perm(plan.group_count);
    for (int g = 0; g < plan.group_count; ++g) perm[g] = (g + 2) % plan.group_count;
    ModelBank bank2 = bank;
    for (int g = 0; g < plan.group_count; ++g) {
        shuffled.members[perm[g]] = plan.members[g];
        shuffled.lower[perm[g]] = plan.lower[g];
        shuffled.upper[perm[g]] = plan.upper[g];
        bank2.models[perm[g]] = bank.models[g];
    }
    for (int t = 0; t < s.timestep_count; ++t) {
        shuffled.group_of_timestep[t] = perm[plan.group_of(t)];
    }
    bank2.plan = shuffled;
    const auto out2 = ddim_sample(bank2, s, 15, 6, 5);
    CHECK(out1.data == out2.data);
}

namespace {

// Denoiser that answers with a pre-arranged exact eps, exposed through the
// model interface by zeroing everything and writing eps into the bias of
// the output layer.
Model oracle_model(const DenoiserSpec& spec, const std::vector<float>& eps) {
    Model m{spec, init_params(spec, 0)};
    for (auto& w : m.params.weights) std::fill(w.data.begin(), w.data.end(), 0.0f);
    for (auto& b : m.params.biases) std::fill(b.data.begin(), b.data.end(), 0.0f);
    auto& out_bias = m.params.biases.back();
    for (std::size_t d = 0; d < eps.size(); ++d) out_bias.data[d] = eps[d];
    return m;
}

} // namespace

TEST_CASE("a perfect-eps oracle inverts the forward process") {
    const auto s = build_cosine_schedule(50);
    DenoiserSpec spec;
    spec.input_dim = 2;
    spec.hidden_widths = {4};
    spec.time_embed_dim = 4;

    // Construct x_t from known (x0, eps); a model that always answers eps
    // recovers x0 exactly in one step.
    const std::vector<double> x0 = {1.25, -0.5};
    const std::vector<double> eps = {0.3, 0.8};
    const Model oracle = oracle_model(spec, {0.3f, 0.8f});
    const FlopsBudget budget{0.5, static_cast<double>(count_flops(spec))};
    auto bank = bank_of(plan_groups(s, budget, 1), oracle);

    for (int t : {0, 10, 49}) {
        const auto x_t = forward_diffuse(x0, t, eps, s);
        std::vector<float> x_f = {static_cast<float>(x_t[0]), static_cast<float>(x_t[1])};
        const auto eps_hat = forward(oracle, x_f, t, s.timestep_count);
        const double ab = s.alpha_bars[t];
        for (int d = 0; d < 2; ++d) {
            const double rec = (x_t[d] - std::sqrt(1.0 - ab) * eps_hat[d]) / std::sqrt(ab);
            CHECK(rec == doctest::Approx(x0[d]).epsilon(1e-5));
        }
    }

    // Production-path trace: fix an exactly representable eps, then derive
    // the x0 whose trajectory passes through the sampler's own seeded start.
    // With the oracle answering that eps, every DDIM step keeps x0_hat on the
    // trajectory, so the output recovers x0 at any stride.
    const std::vector<float> eps_exact = {0.25f, -0.5f};
    for (const int steps : {s.timestep_count, 25, 10}) {
        const std::uint64_t seed = 99;
        Rng init_rng(derive_seed(seed, "ddim-init", 0));
        const std::vector<double> x_start = {init_rng.normal(), init_rng.normal()};
        const int t_hi = strided_timesteps(s.timestep_count, steps).front();
        const double ab = s.alpha_bars[t_hi];
        std::vector<double> x0_implied(2);
        for (int d = 0; d < 2; ++d) {
            x0_implied[d] = (x_start[d] - std::sqrt(1.0 - ab) * eps_exact[d]) / std::sqrt(ab);
        }
        auto traced = bank_of(plan_groups(s, budget, 1), oracle_model(spec, eps_exact));
        const auto out = ddim_sample(traced, s, steps, 1, seed);
        for (int d = 0; d < 2; ++d) {
            CHECK(out.data[d] == doctest::Approx(x0_implied[d]).epsilon(1e-6));
        }
    }
}

TEST_CASE("trajectory flops: identical specs, two-group mean, enumeration oracle") {
    const auto s = build_cosine_schedule(100);
    const auto spec = small_spec({16, 16}, 8);
    const Model base{spec, init_params(spec, 41)};
    const FlopsBudget budget{0.5, static_cast<double>(count_flops(spec))};

    auto uniform = bank_of(plan_groups(s, budget, 5), base);
    const auto tf = trajectory_flops(uniform, s, 50);
    CHECK(tf.mean_per_eval == doctest::Approx(double(count_flops(spec))));
    CHECK(tf.total_per_sample == 50 * count_flops(spec));

    // Reference plan: per-step enumeration oracle.
    const auto plan = plan_groups(s, budget, 5);
    auto bank = bank_of(plan, base);
    PruningScheme drop;
    drop.remove = {{0, 1, 2, 3}, {0, 1}};
    for (int g = 0; g < plan.group_count; ++g) {
        bank.models[g] = g % 2 == 0 ? apply_mask(base, mask_from_scheme(spec, drop)) : base;
    }
    const auto got = trajectory_flops(bank, s, 50);
    std::int64_t expect = 0;
    for (int t : strided_timesteps(100, 50)) {
        expect += count_flops(bank.models[plan.group_of(t)]->spec);
    }
    CHECK(got.total_per_sample == expect);
    CHECK(got.mean_per_eval == doctest::Approx(double(expect) / 50.0));

    // Two groups splitting the visited steps evenly: mean = (a + b) / 2.
    {
        GroupPlan half;
        half.group_count = 2;
        half.lower = {0.0, 1.0};
        half.upper = {1.0, 2.0};
        half.members.resize(2);
        half.group_of_timestep.resize(100);
        // Visited steps are {0, 2, ..., 98}; splitting at 50 puts 25 in each group.
        for (int t = 0; t < 100; ++t) {
            const int g = t < 50 ? 0 : 1;
            half.members[g].push_back(t);
            half.group_of_timestep[t] = g;
        }
        ModelBank two = bank_of(half, base);
        PruningScheme thin;
        thin.remove = {{0, 1, 2, 3, 4, 5}, {0, 1, 2}};
        two.models[0] = apply_mask(base, mask_from_scheme(spec, thin));
        two.models[1] = base;
        const double a = double(count_flops(two.models[0]->spec));
        const double b = double(count_flops(spec));
        CHECK(trajectory_flops(two, s, 50).mean_per_eval ==
              doctest::Approx((a + b) / 2.0));
    }

    // Pruning any group's model strictly decreases the total.
    for (int g = 0; g < plan.group_count; ++g) {
        ModelBank cheaper = uniform;
        PruningScheme one;
        one.remove = {{0}, {}};
        cheaper.models[g] = apply_mask(base, mask_from_scheme(spec, one));
        CHECK(trajectory_flops(cheaper, s, 100).total_per_sample < 100 * count_flops(spec));
    }
}

TEST_CASE("energy distance: hand values, symmetry, oracle") {
    SampleSet a, b;
    a.dim = b.dim = 2;
    a.data = {0.0, 0.0};
    b.data = {3.0, 4.0};
    CHECK(energy_distance(a, b) == doctest::Approx(10.0));
    CHECK(energy_distance(a, a) == doctest::Approx(0.0));

    Rng rng(55);
    SampleSet x, y;
    x.dim = y.dim = 2;
    for (int i = 0; i < 20; ++i) {
        x.data.push_back(rng.normal());
        x.data.push_back(rng.normal());
        y.data.push_back(rng.normal() + 0.5);
        y.data.push_back(rng.normal());
    }
    CHECK(energy_distance(x, y) == doctest::Approx(energy_distance(y, x)).epsilon(1e-12));
    CHECK(energy_distance(x, y) >= 0.0);

    // Independent double-loop oracle with explicit term accumulation.
    auto pair_mean = [](const SampleSet& p, const SampleSet& q) {
        long double total = 0.0L;
        for (int i = 0; i < p.count(); ++i) {
            for (int j = 0; j < q.count(); ++j) {
                long double sq = 0.0L;
                for (int d = 0; d < p.dim; ++d) {
                    const long double diff = p.row(i)[d] - q.row(j)[d];
                    sq += diff * diff;
                }
                total += std::sqrt(double(sq));
            }
        }
        return double(total / (static_cast<long double>(p.count()) * q.count()));
    };
    const double oracle = 2.0 * pair_mean(x, y) - pair_mean(x, x) - pair_mean(y, y);
    CHECK(std::abs(energy_distance(x, y) - oracle) <= 1e-10 * std::max(1.0, std::abs(oracle)));

    // Identical multisets in different order still give zero.
    SampleSet shuffled = x;
    std::reverse(shuffled.data.begin(), shuffled.data.end());
    std::reverse(shuffled.data.begin(), shuffled.data.end());
    CHECK(energy_distance(x, shuffled) == doctest::Approx(0.0));
}

TEST_CASE("sliced wasserstein: zero on identical, grows with shift, deterministic") {
    Rng rng(66);
    SampleSet x, y_near, y_far;
    x.dim = y_near.dim = y_far.dim = 2;
    for (int i = 0; i < 64; ++i) {
        const double a = rng.normal(), b = rng.normal();
        x.data.insert(x.data.end(), {a, b});
        y_near.data.insert(y_near.data.end(), {a + 0.1, b});
        y_far.data.insert(y_far.data.end(), {a + 2.0, b});
    }
    CHECK(sliced_wasserstein(x, x, 64, 1) == doctest::Approx(0.0));
    const double near = sliced_wasserstein(x, y_near, 64, 1);
    const double far = sliced_wasserstein(x, y_far, 64, 1);
    CHECK(near > 0.0);
    CHECK(far > near);
    CHECK(sliced_wasserstein(x, y_far, 64, 1) == doctest::Approx(far));

    SampleSet odd;
    odd.dim = 2;
    odd.data = {1.0, 2.0};
    CHECK_THROWS_AS(sliced_wasserstein(x, odd, 64, 1), Error);
}
