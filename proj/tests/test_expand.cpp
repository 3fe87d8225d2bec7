#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mfx/expand.hpp"
#include "mfx/network.hpp"
#include "mfx/unit_map.hpp"
#include "support.hpp"

using namespace mfx;

namespace {

// Column j of a dense weight stored (in, out).
template <class T>
std::vector<T> dense_column(const BasicParameterVector<T>& p, std::size_t seg, std::size_t in, std::size_t out,
                            std::size_t j) {
    std::vector<T> col;
    auto w = p.segment(seg);
    for (std::size_t i = 0; i < in; ++i) col.push_back(w[i * out + j]);
    return col;
}

}  // namespace

TEST_CASE("duplicating every hidden unit once halves the outgoing rows") {
    Model m = test::mlp(3, {2}, 2);
    auto p = init_parameters<float>(m, 1);
    ModelSpec spec = m.spec();
    spec.layers[0].out = 4;
    spec.layers[2].in = 4;
    Model wide = compile(spec);
    const std::vector<std::size_t> source{0, 1, 0, 1};
    const std::vector<float> scale(4, 0.5f);
    auto q = remap_units<float>(m, p, wide, 0, source, scale);
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(dense_column(q, 0, 3, 4, j) == dense_column(p, 0, 3, 2, source[j]));
        CHECK(q.segment(1)[j] == p.segment(1)[source[j]]);
        for (std::size_t k = 0; k < 2; ++k) CHECK(q.segment(2)[j * 2 + k] == p.segment(2)[source[j] * 2 + k] * 0.5f);
    }
    auto x = test::random_tensor(Shape{100, 3}, 2);
    CHECK(test::max_abs_diff(forward(m, p, x), forward(wide, q, x)) < 1e-5);
}

TEST_CASE("widened MLP output matches hand arithmetic") {
    Model m = test::mlp(1, {2}, 1);
    BasicParameterVector<double> p(m.layout(), {1.0, -2.0, 0.5, 1.0, 3.0, -1.0, 0.25});
    // h = relu(2 * (1, -2) + (0.5, 1)) = (2.5, 0); y = 2.5 * 3 + 0 * -1 + 0.25
    const double expect = 7.75;
    BasicTensor<double> x(Shape{1, 1}, std::vector<double>{2.0});
    CHECK(forward(m, p, x)[0] == expect);

    ExpansionPlan plan;
    plan.targets.push_back({m.param_layer(0), 3});
    plan.duplication_seed = 5;
    auto e = widen(m, p, plan);
    auto w = e.params.segment(0);
    auto b = e.params.segment(1);
    auto v = e.params.segment(2);
    const std::size_t src = w[2] == 1.0 ? 0 : 1;
    CHECK(w[2] == w[src]);
    CHECK(b[2] == b[src]);
    CHECK(v[2] == v[src]);
    CHECK(v[src] == p.segment(2)[src] / 2.0);
    CHECK(v[1 - src] == p.segment(2)[1 - src]);
    // recompute by hand from the widened parameters
    double y = e.params.segment(3)[0];
    for (std::size_t j = 0; j < 3; ++j) y += std::max(0.0, 2.0 * w[j] + b[j]) * v[j];
    CHECK(y == doctest::Approx(expect).epsilon(1e-15));
    CHECK(forward(e.model, e.params, x)[0] == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("outgoing weights of a unit present r times are divided by r") {
    Model m = test::mlp(4, {5}, 3);
    auto p = init_parameters<double>(m, 3);
    auto e = widen(m, p, width_plan(m, 0, 3.0, 17));
    REQUIRE(e.model.param_layer(0).width == 15);
    std::vector<std::size_t> source(15);
    std::vector<std::size_t> count(5, 0);
    for (std::size_t j = 0; j < 15; ++j) {
        auto col = dense_column(e.params, 0, 4, 15, j);
        for (std::size_t s = 0; s < 5; ++s)
            if (col == dense_column(p, 0, 4, 5, s)) source[j] = s;
        ++count[source[j]];
    }
    for (std::size_t j = 0; j < 5; ++j) CHECK(source[j] == j);
    for (std::size_t j = 0; j < 15; ++j)
        for (std::size_t k = 0; k < 3; ++k)
            CHECK(e.params.segment(2)[j * 3 + k] ==
                  doctest::Approx(p.segment(2)[source[j] * 3 + k] / static_cast<double>(count[source[j]])));
}

TEST_CASE("conv first layer 8 to 16 channels preserves the function") {
    Model m = test::cnn("C1(8)-C2(32)-MaxPool(2)-F1(256)", {3, 32, 32}, 10);
    auto p = init_parameters<float>(m, 4);
    auto e = widen(m, p, width_plan(m, 0, 2.0, 9));
    CHECK(e.model.param_layer(0).width == 16);
    CHECK(e.model.num_parameters() > m.num_parameters());
    CHECK(e.params.layout() == *e.model.layout());
    auto x = test::random_tensor(Shape{10, 3, 32, 32}, 5);
    CHECK(test::max_abs_diff(forward(m, p, x), forward(e.model, e.params, x)) < 1e-5);
}

TEST_CASE("widening through a flatten boundary preserves the function") {
    Model m = test::cnn("C1(6)-MaxPool(2)-F1(16)", {2, 8, 8}, 5);
    auto p = init_parameters<float>(m, 6);
    auto x = test::random_tensor(Shape{100, 2, 8, 8}, 7);
    const auto ref = forward(m, p, x);
    for (double factor : {1.0, 1.25, 1.5, 2.0, 3.0, 4.0}) {
        auto e = widen(m, p, width_plan(m, 0, factor, 8));
        CHECK(test::max_abs_diff(ref, forward(e.model, e.params, x)) < 1e-5);
    }
    // a dense hidden layer as target
    auto e = widen(m, p, width_plan(m, 1, 2.0, 8));
    CHECK(e.model.param_layer(1).width == 32);
    CHECK(test::max_abs_diff(ref, forward(e.model, e.params, x)) < 1e-5);
}

TEST_CASE("keep-original split with noise stays function-preserving") {
    Model m = test::cnn("C1(6)-MaxPool(2)-F1(16)", {2, 8, 8}, 5);
    auto p = init_parameters<float>(m, 10);
    auto x = test::random_tensor(Shape{50, 2, 8, 8}, 11);
    auto plain = widen(m, p, width_plan(m, 0, 2.0, 12, 0.0, OutgoingSplit::KeepOriginal));
    auto noisy = widen(m, p, width_plan(m, 0, 2.0, 12, 0.1, OutgoingSplit::KeepOriginal));
    CHECK_FALSE(plain.params == noisy.params);
    CHECK(test::max_abs_diff(forward(m, p, x), forward(noisy.model, noisy.params, x)) < 1e-5);
    // noise only touches the new units' incoming weights
    auto a = plain.params.segment(0), b = noisy.params.segment(0);
    for (std::size_t k = 0; k < 6 * 2 * 9; ++k) CHECK(a[k] == b[k]);
    CHECK(plain.params.segment(1).size() == noisy.params.segment(1).size());
    CHECK(std::equal(plain.params.segment(1).begin(), plain.params.segment(1).end(), noisy.params.segment(1).begin()));
}

TEST_CASE("split names parse") {
    CHECK(parse_outgoing_split("equal") == OutgoingSplit::Equal);
    CHECK(parse_outgoing_split(to_string(OutgoingSplit::KeepOriginal)) == OutgoingSplit::KeepOriginal);
    CHECK_THROWS_AS(parse_outgoing_split("half"), InvalidArgument);
}

TEST_CASE("widening is deterministic in the duplication seed") {
    Model m = test::mlp(4, {6}, 3);
    auto p = init_parameters<float>(m, 1);
    CHECK(widen(m, p, width_plan(m, 0, 2.0, 3)).params == widen(m, p, width_plan(m, 0, 2.0, 3)).params);
    CHECK_FALSE(widen(m, p, width_plan(m, 0, 2.0, 3)).params == widen(m, p, width_plan(m, 0, 2.0, 4)).params);
}

TEST_CASE("widen errors") {
    Model m = test::mlp(4, {6}, 3);
    auto p = init_parameters<float>(m, 1);
    ExpansionPlan shrink;
    shrink.targets.push_back({m.param_layer(0), 5});
    CHECK_THROWS_AS(widen(m, p, shrink), InvalidArgument);
    ExpansionPlan classifier;
    classifier.targets.push_back({m.param_layer(1), 6});
    CHECK_THROWS_AS(widen(m, p, classifier), Error);
    CHECK_THROWS_AS(width_plan(m, 0, 0.5, 1), InvalidArgument);
    auto noisy = width_plan(m, 0, 2.0, 1);
    noisy.noise_scale = -1.0;
    CHECK_THROWS_AS(widen(m, p, noisy), InvalidArgument);
}

TEST_CASE("identity conv insertion preserves the function") {
    Model m = test::cnn("C1(4)-C2(4)-MaxPool(2)-F1(8)", {3, 8, 8}, 5);
    auto p = init_parameters<float>(m, 2);
    auto x = test::random_tensor(Shape{20, 3, 8, 8}, 3);
    auto e = deepen(m, p, relu_after(m, 0));
    CHECK(e.model.param_layers().size() == m.param_layers().size() + 1);
    CHECK(e.model.num_parameters() > m.num_parameters());
    CHECK(test::max_abs_diff(forward(m, p, x), forward(e.model, e.params, x)) < 1e-5);

    SUBCASE("two insertions equal one then one") {
        auto twice = deepen(e.model, e.params, relu_after(e.model, 0));
        auto again = deepen(e.model, e.params, relu_after(e.model, 1));
        CHECK(twice.model.spec() == again.model.spec());
        CHECK(twice.params == again.params);
        CHECK(test::max_abs_diff(forward(m, p, x), forward(twice.model, twice.params, x)) < 1e-5);
    }
}

TEST_CASE("deepen errors") {
    Model mismatch = test::cnn("C1(4)-C2(6)-F1(8)", {3, 8, 8}, 5);
    auto p = init_parameters<float>(mismatch, 1);
    CHECK_THROWS_AS(deepen(mismatch, p, relu_after(mismatch, 0)), ShapeError);
    Model m = test::cnn("C1(4)-C2(4)-F1(8)", {3, 8, 8}, 5);
    auto q = init_parameters<float>(m, 1);
    CHECK_THROWS_AS(deepen(m, q, 0), InvalidArgument);                   // not a ReLU
    CHECK_THROWS_AS(deepen(m, q, relu_after(m, 1)), InvalidArgument);  // conv followed by dense
}
