#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <thread>

#include "mfx/network.hpp"
#include "mfx/objective.hpp"
#include "mfx/optimizer.hpp"
#include "mfx/parameters.hpp"
#include "support.hpp"

using namespace mfx;

namespace {

template <class T>
void set_segment(BasicParameterVector<T>& p, std::size_t seg, std::vector<double> values) {
    auto s = p.segment(seg);
    REQUIRE(s.size() == values.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<T>(values[i]);
}

// Central differences of the 64-bit loss at coordinate i.
double fd_coordinate(const Model& m, BasicParameterVector<double> p, const BasicBatch<double>& b, std::size_t i,
                     double eps) {
    const double w = p.flat()[i];
    p.flat()[i] = w + eps;
    const double lp = loss(m, p, b);
    p.flat()[i] = w - eps;
    const double lm = loss(m, p, b);
    return (lp - lm) / (2.0 * eps);
}

}  // namespace

TEST_CASE("tensor rejects mismatched data and zero dims") {
    CHECK_THROWS_AS(Tensor(Shape{2, 3}, std::vector<float>(5)), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
    Tensor t(Shape{2, 3}, 1.5f);
    CHECK(t.size() == 6);
    CHECK(t.row_size() == 3);
    CHECK(t.all_finite());
    t[4] = std::nanf("");
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("identity dense layer returns its input") {
    Model m = compile(ModelSpec{{3}, 3, {LayerDesc::dense(3)}});
    ParameterVector p(m.layout());
    set_segment(p, 0, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor x(Shape{2, 3}, std::vector<float>{1.f, -2.f, 3.5f, 0.25f, 7.f, -1.f});
    CHECK(forward(m, p, x) == x);
}

TEST_CASE("zero weights give zero logits") {
    Model m = test::mlp(5, {4}, 3);
    ParameterVector p(m.layout());
    auto logits = forward(m, p, test::random_tensor(Shape{3, 5}, 1));
    for (float v : logits.data()) CHECK(v == 0.0f);
}

TEST_CASE("two-layer MLP matches hand arithmetic") {
    Model m = test::mlp(2, {2}, 2);
    ParameterVector p(m.layout());
    // weights are stored (in, out): h = x W1 + b1
    set_segment(p, 0, {1, -1, 2, 0.5});
    set_segment(p, 1, {0.5, -0.5});
    set_segment(p, 2, {1, 2, 3, 4});
    set_segment(p, 3, {0.1, 0.2});
    Tensor x(Shape{1, 2}, std::vector<float>{1.f, 2.f});
    // h = (1 + 4 + 0.5, -1 + 1 - 0.5) = (5.5, -0.5) -> relu (5.5, 0)
    // y = (5.5 + 0.1, 11 + 0.2)
    auto y = forward(m, p, x);
    CHECK(y[0] == doctest::Approx(5.6).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(11.2).epsilon(1e-6));
}

TEST_CASE("forward reports the offending layer on shape mismatch") {
    Model m = test::mlp(4, {3}, 2);
    ParameterVector p(m.layout());
    try {
        forward(m, p, Tensor(Shape{2, 5}));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK_FALSE(e.where().empty());
    }
    Model other = test::mlp(4, {5}, 2);
    CHECK_THROWS_AS(forward(m, ParameterVector(other.layout()), Tensor(Shape{2, 4})), ShapeError);
}

TEST_CASE("uniform logits give ln C") {
    Model m = test::mlp(6, {4}, 7);
    ParameterVector p(m.layout());
    Batch b{test::random_tensor(Shape{5, 6}, 3), {0, 1, 2, 3, 6}};
    CHECK(loss(m, p, b) == doctest::Approx(std::log(7.0)).epsilon(1e-6));
}

TEST_CASE("cross-entropy matches the closed form") {
    Model m = compile(ModelSpec{{3}, 3, {LayerDesc::dense(3)}});
    BasicParameterVector<double> p(m.layout());
    set_segment(p, 0, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    for (double margin : {0.5, 3.0, 40.0}) {
        BasicBatch<double> b{BasicTensor<double>(Shape{1, 3}, std::vector<double>{margin, 0, 0}), {0}};
        CHECK(loss(m, p, b) == doctest::Approx(std::log1p(2.0 * std::exp(-margin))).epsilon(1e-12));
    }
    // large margins do not overflow and approach zero
    BasicBatch<double> big{BasicTensor<double>(Shape{1, 3}, std::vector<double>{1000, 0, 0}), {0}};
    CHECK(loss(m, p, big) == doctest::Approx(0.0));
}

TEST_CASE("loss is a batch mean") {
    Model m = test::mlp(4, {5}, 3);
    auto p = init_parameters<float>(m, 11);
    Batch one{test::random_tensor(Shape{1, 4}, 5), {2}};
    Tensor two_in(Shape{2, 4});
    for (std::size_t i = 0; i < 4; ++i) two_in[i] = two_in[4 + i] = one.inputs[i];
    Batch two{two_in, {2, 2}};
    CHECK(loss(m, p, two) == doctest::Approx(loss(m, p, one)).epsilon(1e-7));
}

TEST_CASE("loss rejects non-finite logits") {
    Model m = test::mlp(2, {2}, 2);
    ParameterVector p(m.layout());
    p.flat()[0] = std::numeric_limits<float>::infinity();
    Batch b{Tensor(Shape{1, 2}, std::vector<float>{1.f, 1.f}), {0}};
    CHECK_THROWS_AS(loss(m, p, b), NumericError);
}

TEST_CASE("gradient vanishes at the minimum of a quadratic") {
    auto layout = test::flat_layout(1);
    test::Quadratic f({2.0}, {-4.0});  // L = w^2 - 4w, minimum at 2
    BasicParameterVector<double> w(layout, {2.0});
    CHECK(f.gradient(w).flat()[0] == 0.0);
}

TEST_CASE("batch gradient is the mean of per-example gradients") {
    Model m = test::mlp(4, {6}, 3);
    auto p = init_parameters<double>(m, 5);
    auto b = test::random_batch<double>(m, 3, 9);
    auto g = grad(m, p, b);
    std::vector<double> sum(g.size(), 0.0);
    for (std::size_t e = 0; e < 3; ++e) {
        BasicBatch<double> one{BasicTensor<double>(Shape{1, 4}, std::vector<double>(b.inputs.data().begin() + e * 4,
                                                                                   b.inputs.data().begin() + e * 4 + 4)),
                               {b.labels[e]}};
        auto ge = grad(m, p, one);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += ge.flat()[i];
    }
    for (std::size_t i = 0; i < sum.size(); ++i) CHECK(g.flat()[i] == doctest::Approx(sum[i] / 3.0).epsilon(1e-12));
}

TEST_CASE("64-bit gradient agrees with central differences") {
    Model m = test::mlp(5, {8, 6}, 3);
    auto p = init_parameters<double>(m, 21);
    auto b = test::random_batch<double>(m, 4, 22);
    auto g = grad(m, p, b);
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
    for (int k = 0; k < 20; ++k) {
        const std::size_t i = pick(rng);
        CHECK(test::rel_err(g.flat()[i], fd_coordinate(m, p, b, i, 1e-5), 1e-8) < 1e-6);
    }
}

TEST_CASE("32-bit gradient agrees with central differences") {
    Model m = test::mlp(5, {8, 6}, 3);
    auto p = init_parameters<float>(m, 31);
    auto b = test::random_batch<float>(m, 4, 32);
    auto g = grad(m, p, b);
    auto pd = cast_parameters<float, double>(p);
    auto bd = cast_batch<double>(b);
    std::mt19937_64 rng(33);
    std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
    for (int k = 0; k < 10; ++k) {
        const std::size_t i = pick(rng);
        CHECK(test::rel_err(g.flat()[i], fd_coordinate(m, pd, bd, i, 1e-3), 1e-4) < 1e-3);
    }
}

TEST_CASE("conv gradient agrees with central differences") {
    Model m = test::cnn("C1(3)-MaxPool(2)-F1(5)", {2, 6, 6}, 4);
    auto p = init_parameters<double>(m, 41);
    auto b = test::random_batch<double>(m, 3, 42);
    auto g = grad(m, p, b);
    for (std::size_t i = 0; i < p.size(); i += 7)
        CHECK(test::rel_err(g.flat()[i], fd_coordinate(m, p, b, i, 1e-5), 1e-8) < 1e-6);
}

TEST_CASE("forward, loss and grad are deterministic and pure") {
    Model m = test::cnn("C1(4)-MaxPool(2)-F1(8)", {3, 8, 8}, 5);
    auto p = init_parameters<float>(m, 3);
    const auto before = p;
    auto b = test::random_batch<float>(m, 6, 4);
    CHECK(forward(m, p, b.inputs) == forward(m, p, b.inputs));
    CHECK(loss(m, p, b) == loss(m, p, b));
    CHECK(grad(m, p, b) == grad(m, p, b));
    CHECK(p == before);
}

TEST_CASE("hvp of a quadratic is A v") {
    auto layout = test::flat_layout(3);
    test::Quadratic f({4, 1, 0, 1, 3, -1, 0, -1, 2}, {0.5, -1, 2});
    BasicParameterVector<double> w(layout, {0.3, -0.2, 1.1});
    std::vector<double> v{1.0, -2.0, 0.5};
    auto hv = hvp(f, w, BasicParameterVector<double>(layout, v));
    auto expect = f.times(v);
    for (std::size_t i = 0; i < 3; ++i) CHECK(hv.flat()[i] == doctest::Approx(expect[i]).epsilon(1e-8));
}

TEST_CASE("hvp of the zero direction is zero") {
    Model m = test::mlp(3, {4}, 2);
    auto p = init_parameters<float>(m, 1);
    auto b = test::random_batch<float>(m, 2, 2);
    auto hv = hvp(m, p, b, ParameterVector(m.layout()));
    for (float v : hv.flat()) CHECK(v == 0.0f);
}

TEST_CASE("hvp is symmetric on a tiny MLP") {
    Model m = test::mlp(3, {5}, 3);
    auto p = init_parameters<double>(m, 7);
    auto b = test::random_batch<double>(m, 4, 8);
    auto u = unflatten(test::random_tensor<double>(Shape{p.size()}, 9).values(), m.layout());
    auto v = unflatten(test::random_tensor<double>(Shape{p.size()}, 10).values(), m.layout());
    auto hu = hvp(m, p, b, u);
    auto hv = hvp(m, p, b, v);
    double vhu = 0.0, uhv = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        vhu += v.flat()[i] * hu.flat()[i];
        uhv += u.flat()[i] * hv.flat()[i];
    }
    CHECK(test::rel_err(vhu, uhv) < 1e-3);
}

TEST_CASE("sgd step") {
    auto layout = test::flat_layout(1);
    ParameterVector w(layout, {1.0f}), g(layout, {0.5f});
    auto st = make_optimizer<float>({OptimizerKind::SGD, 0.1, 0.9, 0.999, 1e-8, 0.0}, 1);
    auto [st2, w2] = optimizer_step(st, w, g);
    CHECK(w2.flat()[0] == doctest::Approx(0.95f));
    CHECK(st2.step == 1);
}

TEST_CASE("adam first step follows the hand-unrolled recurrence") {
    auto layout = test::flat_layout(1);
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    BasicParameterVector<double> w(layout, {0.5}), g(layout, {1.0});
    auto st = make_optimizer<double>({OptimizerKind::Adam, lr, b1, b2, eps, 0.0}, 1);
    CHECK(st.first_moment[0] == 0.0);
    CHECK(st.second_moment[0] == 0.0);
    auto [s1, w1] = optimizer_step(st, w, g);
    // m = (1 - b1) g, v = (1 - b2) g^2; bias correction restores g and g^2
    const double mhat = (1 - b1) * 1.0 / (1 - b1);
    const double vhat = (1 - b2) * 1.0 / (1 - b2);
    CHECK(w1.flat()[0] == doctest::Approx(0.5 - lr * mhat / (std::sqrt(vhat) + eps)).epsilon(1e-14));
    // second step with g = -2
    BasicParameterVector<double> g2(layout, {-2.0});
    auto [s2, w2] = optimizer_step(s1, w1, g2);
    const double m2 = b1 * (1 - b1) * 1.0 + (1 - b1) * -2.0;
    const double v2 = b2 * (1 - b2) * 1.0 + (1 - b2) * 4.0;
    const double expect = w1.flat()[0] - lr * (m2 / (1 - b1 * b1)) / (std::sqrt(v2 / (1 - b2 * b2)) + eps);
    CHECK(w2.flat()[0] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(s2.step == 2);
}

TEST_CASE("adamw decays the weights by lr * d * w relative to adam") {
    auto layout = test::flat_layout(2);
    BasicParameterVector<double> w(layout, {0.5, -2.0}), g(layout, {0.3, -0.1});
    const double lr = 0.001, d = 0.01;
    auto adam = make_optimizer<double>({OptimizerKind::Adam, lr, 0.9, 0.999, 1e-8, 0.0}, 2);
    auto adamw = make_optimizer<double>({OptimizerKind::AdamW, lr, 0.9, 0.999, 1e-8, d}, 2);
    auto wa = optimizer_step(adam, w, g).second;
    auto ww = optimizer_step(adamw, w, g).second;
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(ww.flat()[i] == doctest::Approx(wa.flat()[i] - lr * d * w.flat()[i]).epsilon(1e-14));
}

TEST_CASE("optimizer rejects non-finite gradients before mutation") {
    auto layout = test::flat_layout(2);
    ParameterVector w(layout, {1.0f, 2.0f}), g(layout, {0.1f, std::nanf("")});
    auto st = make_optimizer<float>({}, 2);
    const auto st0 = st;
    const auto w0 = w;
    CHECK_THROWS_AS(optimizer_step_inplace(st, w, g), NumericError);
    CHECK(st == st0);
    CHECK(w == w0);
}

TEST_CASE("lerp") {
    auto layout = test::flat_layout(2);
    ParameterVector a(layout, {2.f, 0.f}), b(layout, {0.f, 2.f});
    CHECK(lerp(a, b, 1.0) == a);
    CHECK(lerp(a, b, 0.0) == b);
    CHECK(lerp(a, b, 0.5) == ParameterVector(layout, {1.f, 1.f}));
    CHECK_THROWS_AS(lerp(a, b, 1.5), InvalidArgument);
    ParameterVector c(test::flat_layout(3));
    CHECK_THROWS_AS(lerp(a, c, 0.5), ShapeError);
}

TEST_CASE("concurrent readers of shared parameters agree") {
    Model m = test::mlp(8, {16}, 4);
    auto p = init_parameters<float>(m, 12);
    auto b = test::random_batch<float>(m, 16, 13);
    const double ref = loss(m, p, b);
    std::vector<double> got(4);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < got.size(); ++t) pool.emplace_back([&, t] { got[t] = loss(m, p, b); });
    for (auto& th : pool) th.join();
    for (double v : got) CHECK(v == ref);
}
