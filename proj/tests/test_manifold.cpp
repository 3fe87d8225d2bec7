#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <random>

#include "mfx/manifold.hpp"
#include "mfx/optimizer.hpp"
#include "support.hpp"

using namespace mfx;

namespace {

struct Trained {
    Model model;
    ParameterVector params;
    Batch batch;
};

// A 20-unit MLP fitted for a few hundred Adam steps on one random batch.
Trained trained_mlp() {
    Model m = test::mlp(10, {20}, 4);
    auto p = init_parameters<float>(m, 3);
    auto b = test::random_batch<float>(m, 64, 4);
    auto st = make_optimizer<float>({OptimizerKind::Adam, 0.01, 0.9, 0.999, 1e-8, 0.0}, p.size());
    for (int k = 0; k < 300; ++k) optimizer_step_inplace(st, p, grad(m, p, b));
    return {m, p, b};
}

const Trained& fixture() {
    static const Trained t = trained_mlp();
    return t;
}

}  // namespace

TEST_CASE("fixture is actually trained") {
    const auto& t = fixture();
    CHECK(loss(t.model, t.params, t.batch) < 0.5);
}

TEST_CASE("barrier of a point with itself is zero") {
    const auto& t = fixture();
    CHECK(barrier_midpoint(t.model, t.params, t.params, t.batch) == 0.0);
}

TEST_CASE("barrier on the quadratic w^2") {
    auto layout = test::flat_layout(1);
    test::Quadratic f({2.0}, {0.0});
    BasicParameterVector<double> a(layout, {0.0}), b(layout, {2.0});
    CHECK(barrier_midpoint(f, a, b) == -1.0);
    const double half[] = {0.5};
    auto c = barrier_curve(f, a, b, half);
    REQUIRE(c.size() == 1);
    CHECK(c[0].deviation == -1.0);
}

TEST_CASE("barrier matches an independent interpolation") {
    const auto& t = fixture();
    PermutationSampler sampler(5);
    auto q = apply(t.model, t.params, sampler.sample(t.model.param_layer(0)));
    ParameterVector mid(t.params.layout_ptr());
    for (std::size_t i = 0; i < mid.size(); ++i)
        mid.flat()[i] = static_cast<float>((static_cast<double>(t.params.flat()[i]) + q.flat()[i]) / 2.0);
    const double expect =
        loss(t.model, mid, t.batch) - 0.5 * (loss(t.model, t.params, t.batch) + loss(t.model, q, t.batch));
    const double got = barrier_midpoint(t.model, t.params, q, t.batch);
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
    CHECK(got > 0.0);
    // argument order does not matter
    CHECK(barrier_midpoint(t.model, q, t.params, t.batch) == got);
}

TEST_CASE("barrier curve") {
    const auto& t = fixture();
    PermutationSampler sampler(6);
    auto q = apply(t.model, t.params, sampler.sample(t.model.param_layer(0)));
    BatchObjective<float> f(t.model, t.batch);
    const double ends[] = {0.0, 1.0};
    for (const auto& pt : barrier_curve(f, t.params, q, ends)) CHECK(pt.deviation == 0.0);

    std::vector<double> grid;
    for (int i = 0; i <= 100; ++i) grid.push_back(i / 100.0);
    auto curve = barrier_curve(f, t.params, q, grid);
    double sup = -1e300;
    for (const auto& pt : curve) sup = std::max(sup, pt.deviation);
    CHECK(barrier_midpoint(f, t.params, q) <= sup);
    CHECK(curve[50].deviation == doctest::Approx(barrier_midpoint(f, t.params, q)).epsilon(1e-9));

    CHECK_THROWS_AS(barrier_curve(f, t.params, q, std::span<const double>{}), InvalidArgument);
    const double bad[] = {1.5};
    CHECK_THROWS_AS(barrier_curve(f, t.params, q, bad), InvalidArgument);
}

TEST_CASE("chain uses 2n + 1 loss evaluations") {
    const auto& t = fixture();
    BatchObjective<float> inner(t.model, t.batch);
    test::CountingObjective<float> f(inner);
    auto set = barrier_samples(f, t.model, t.params, t.model.param_layer(0), ChainOptions{50, 7, 1, 0});
    CHECK(f.calls == 101);
    CHECK(set.loss_evaluations == 101);
    CHECK(set.size() == 50);
    CHECK(set.permutations.size() == 50);
}

TEST_CASE("chain barriers are absolute values and node losses agree") {
    const auto& t = fixture();
    auto set = barrier_samples(t.model, t.params, t.model.param_layer(0), 100, 8, t.batch);
    const double l0 = loss(t.model, t.params, t.batch);
    REQUIRE(set.node_losses.size() == 101);
    for (std::size_t i = 0; i < set.size(); ++i) {
        CHECK(set.barriers[i] >= 0.0);
        CHECK(set.barriers[i] == std::abs(set.signed_barriers[i]));
    }
    for (double l : set.node_losses) CHECK(std::abs(l - l0) < 1e-5);
    // node i + 1 is P(theta, pi_i), recomputed directly
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(set.node_losses[i + 1] == loss(t.model, apply(t.model, t.params, set.permutations[i]), t.batch));
    CHECK(set.batch_fingerprint == fingerprint(t.batch));
    CHECK_THROWS_AS(barrier_samples(t.model, t.params, t.model.param_layer(0), 0, 8, t.batch), InvalidArgument);
}

namespace {

// Reads one weight, so it changes under any permutation that moves it.
class FirstWeight final : public Objective<float> {
public:
    double value(const ParameterVector& p) const override { return 3.0 + p.flat()[0]; }
    ParameterVector gradient(const ParameterVector& p) const override { return ParameterVector(p.layout_ptr()); }
};

}  // namespace

TEST_CASE("chain rejects nodes whose loss differs from L(theta)") {
    const auto& t = fixture();
    CHECK_THROWS_AS(barrier_samples(FirstWeight{}, t.model, t.params, t.model.param_layer(0), ChainOptions{30, 7, 1, 0}),
                    NumericError);
}

TEST_CASE("parallel chain is bit-identical to the serial one") {
    const auto& t = fixture();
    auto serial = barrier_samples(t.model, t.params, t.model.param_layer(0), 60, 9, t.batch, 1);
    auto parallel = barrier_samples(t.model, t.params, t.model.param_layer(0), 60, 9, t.batch, 4);
    CHECK(serial.barriers == parallel.barriers);
    CHECK(serial.node_losses == parallel.node_losses);
}

TEST_CASE("nearest-rank quantile") {
    const std::vector<double> b{3, 1, 5, 2, 4};
    CHECK(quantile(b, 0.4) == 2.0);
    CHECK(quantile(b, 0.999) == 5.0);
    CHECK(quantile(b, 0.2) == 1.0);
    CHECK(quantile(b, 0.21) == 2.0);
    CHECK_THROWS_AS(quantile(b, 0.0), InvalidArgument);
    CHECK_THROWS_AS(quantile(b, 1.0), InvalidArgument);
    CHECK_THROWS_AS(quantile(std::vector<double>{}, 0.5), InvalidArgument);
}

TEST_CASE("quantile counting bound on random samples") {
    std::mt19937_64 rng(12);
    std::exponential_distribution<double> dist(3.0);
    std::vector<double> b(1000);
    for (auto& v : b) v = dist(rng);
    for (double q : {0.05, 0.1, 0.2, 0.3, 0.4, 0.7, 0.95}) {
        const double lambda = quantile(b, q);
        const auto below = std::count_if(b.begin(), b.end(), [&](double v) { return v <= lambda; });
        const double frac = static_cast<double>(below) / 1000.0;
        CHECK(frac >= q - 1e-12);
        CHECK(frac <= q + 1.0 / 1000.0 + 1e-12);
    }
}

TEST_CASE("edge ratio extremes and monotonicity") {
    const auto& t = fixture();
    auto set = barrier_samples(t.model, t.params, t.model.param_layer(0), 80, 13, t.batch);
    const double hi = *std::max_element(set.barriers.begin(), set.barriers.end());
    const double lo = *std::min_element(set.barriers.begin(), set.barriers.end());
    CHECK(score_chain(set, hi).ratio == 1.0);
    CHECK(score_chain(set, lo * 0.5).ratio == 0.0);
    CHECK(score_chain(set, lo).edges >= 1);  // ties count as edges
    double prev = -1.0;
    std::vector<double> sorted = set.barriers;
    std::sort(sorted.begin(), sorted.end());
    for (double lambda : sorted) {
        const double r = score_chain(set, lambda).ratio;
        CHECK(r >= prev);
        prev = r;
    }
    auto est = manifold_ratio(t.model, t.params, t.model.param_layer(0), hi, 80, 13, t.batch);
    CHECK(est.ratio == 1.0);
    CHECK(est.barriers == set.barriers);
    CHECK_THROWS_AS(manifold_ratio(t.model, t.params, t.model.param_layer(0), -1.0, 10, 13, t.batch),
                    InvalidArgument);
}

TEST_CASE("same-sample quantile bound on a chain") {
    const auto& t = fixture();
    auto set = barrier_samples(t.model, t.params, t.model.param_layer(0), 200, 14, t.batch);
    for (double q : {0.1, 0.2, 0.4}) {
        const double m = score_chain(set, quantile(set, q)).ratio;
        CHECK(m >= q);
        CHECK(m <= q + 1.0 / 200.0);
    }
}

TEST_CASE("identical candidate gives M = 0") {
    const auto& t = fixture();
    const auto layer = t.model.param_layer(0);
    const MetricSeeds same{21, 21};
    auto m = manifold_metric(t.model, t.params, layer, t.model, t.params, layer, 0.4, 100, same, t.batch);
    CHECK(m.value == 0.0);
    CHECK(m.base_ratio == m.candidate_ratio);
    CHECK(m.base_ratio >= 0.4);
}

TEST_CASE("zero-edge candidate gives M = -100 q") {
    BarrierSampleSet base, cand;
    for (int i = 1; i <= 10; ++i) {
        base.barriers.push_back(i * 0.1);
        cand.barriers.push_back(5.0 + i);
    }
    auto m = manifold_metric(base, cand, 0.4);
    CHECK(m.lambda == doctest::Approx(0.4));
    CHECK(m.base_ratio == 0.4);
    CHECK(m.candidate_ratio == 0.0);
    CHECK(m.value == doctest::Approx(-40.0).epsilon(1e-15));
    CHECK(m.value == 100.0 * (m.candidate_ratio - m.base_ratio));
}

TEST_CASE("metric guards") {
    BarrierSampleSet a, b;
    a.barriers = {1, 2, 3};
    b.barriers = {1, 2, 3};
    b.batch_fingerprint = 1;
    CHECK_THROWS_AS(manifold_metric(a, b, 0.4), InvalidArgument);
    b.batch_fingerprint = 0;
    b.barriers.pop_back();
    CHECK_THROWS_AS(manifold_metric(a, b, 0.4), InvalidArgument);
    auto s = MetricSeeds::from(7);
    CHECK(s.base != s.candidate);
    CHECK(MetricSeeds::from(7).base == s.base);
    CHECK(MetricSeeds::from(8).base != s.base);
}

TEST_CASE("sweep cells equal standalone runs") {
    const auto& t = fixture();
    const auto layer = t.model.param_layer(0);
    const MetricSeeds seeds{31, 32};
    const std::vector<double> qs{0.05, 0.1, 0.2, 0.4};
    const std::vector<std::size_t> ns{50, 100, 150};
    auto base = barrier_samples(t.model, t.params, layer, 150, seeds.base, t.batch);
    auto cand = barrier_samples(t.model, t.params, layer, 150, seeds.candidate, t.batch);
    auto cells = sensitivity_sweep(base, {{"cand", cand}}, qs, ns);
    CHECK(cells.size() == qs.size() * ns.size());
    for (const auto& c : cells) {
        auto ref = manifold_metric(t.model, t.params, layer, t.model, t.params, layer, c.q, c.n, seeds, t.batch);
        CHECK(c.metric == ref.value);
        CHECK(c.lambda == ref.lambda);
        CHECK(c.base_ratio == ref.base_ratio);
        CHECK(c.candidate_ratio == ref.candidate_ratio);
    }
    const std::size_t too_long[] = {151};
    CHECK_THROWS_AS(sensitivity_sweep(base, {{"cand", cand}}, qs, too_long), InvalidArgument);
}

TEST_CASE("prefix equals a shorter chain") {
    const auto& t = fixture();
    auto full = barrier_samples(t.model, t.params, t.model.param_layer(0), 90, 40, t.batch);
    auto part = barrier_samples(t.model, t.params, t.model.param_layer(0), 30, 40, t.batch);
    auto pre = full.prefix(30);
    CHECK(pre.barriers == part.barriers);
    CHECK(pre.node_losses == part.node_losses);
    CHECK(pre.permutations == part.permutations);
    CHECK(pre.loss_evaluations == 61);
    CHECK_THROWS_AS(full.prefix(91), InvalidArgument);
}
