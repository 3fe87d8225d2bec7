#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "mfx/network.hpp"
#include "mfx/permute.hpp"
#include "support.hpp"

using namespace mfx;

TEST_CASE("transposition count is ceil(log2 l)") {
    CHECK(transpositions_for_width(4) == 2);
    CHECK(transpositions_for_width(5) == 3);
    CHECK(transpositions_for_width(8) == 3);
    CHECK(transpositions_for_width(20) == 5);
    CHECK(transpositions_for_width(512) == 9);
    CHECK(transpositions_for_width(513) == 10);
}

TEST_CASE("samples carry their transpositions") {
    for (std::size_t l : {4u, 20u, 512u}) {
        PermutationSampler sampler(l);
        LayerHandle h{0, LayerKind::Dense, l};
        for (int k = 0; k < 3; ++k) {
            auto p = sample_permutation(h, sampler);
            CHECK(p.provenance.size() == transpositions_for_width(l));
            CHECK(is_bijection(p.mapping));
            CHECK_FALSE(is_identity(p.mapping));
            // replaying the transpositions reproduces the mapping
            std::vector<std::uint32_t> m(l);
            for (std::uint32_t i = 0; i < l; ++i) m[i] = i;
            for (auto [a, b] : p.provenance) std::swap(m[a], m[b]);
            CHECK(m == p.mapping);
        }
    }
}

TEST_CASE("1000 samples at width 20 are distinct") {
    PermutationSampler sampler(99);
    LayerHandle h{0, LayerKind::Dense, 20};
    std::set<std::vector<std::uint32_t>> seen;
    for (int k = 0; k < 1000; ++k) seen.insert(sampler.sample(h).mapping);
    CHECK(seen.size() == 1000);
    CHECK(sampler.distinct_samples() == 1000);
}

TEST_CASE("sampler errors") {
    PermutationSampler sampler(1);
    CHECK_THROWS_AS(sampler.sample(LayerHandle{0, LayerKind::Dense, 3}), InvalidArgument);
    // width 4 with two transpositions reaches only a handful of mappings
    PermutationSampler small(2, 200);
    LayerHandle h{0, LayerKind::Dense, 4};
    std::size_t drawn = 0;
    CHECK_THROWS_AS(
        [&] {
            for (;;) {
                small.sample(h);
                ++drawn;
            }
        }(),
        Error);
    CHECK(drawn >= 6);
    CHECK(drawn < 24);
}

TEST_CASE("bijection helpers and inverse") {
    std::vector<std::uint32_t> ok{2, 0, 1, 3}, dup{0, 0, 1, 2}, range{0, 1, 4, 2};
    CHECK(is_bijection(ok));
    CHECK_FALSE(is_bijection(dup));
    CHECK_FALSE(is_bijection(range));
    Permutation p{LayerHandle{0, LayerKind::Dense, 4}, ok, {}};
    auto inv = inverse(p);
    for (std::uint32_t j = 0; j < 4; ++j) CHECK(inv.mapping[p.mapping[j]] == j);
}

TEST_CASE("serialized permutations round-trip") {
    Model m = test::mlp(3, {6}, 2);
    PermutationSampler sampler(4);
    auto p = sampler.sample(m.param_layer(0));
    auto back = deserialize_permutation(serialize_permutation(p), m);
    CHECK(back.layer == p.layer);
    CHECK(back.mapping == p.mapping);
    CHECK_THROWS(deserialize_permutation("layer=0;width=6;mapping=0,1,2,3,4,4", m));
    CHECK_THROWS(deserialize_permutation("layer=0;width=5;mapping=0,1,2,3,4", m));
}

TEST_CASE("identity permutation leaves parameters unchanged") {
    Model m = test::cnn("C1(6)-MaxPool(2)-F1(8)", {2, 8, 8}, 4);
    auto p = init_parameters<float>(m, 1);
    CHECK(apply(m, p, identity_permutation(m.param_layer(0))) == p);
    CHECK(apply(m, p, identity_permutation(m.param_layer(1))) == p);
}

TEST_CASE("apply then inverse is bit-exact") {
    Model m = test::cnn("C1(6)-MaxPool(2)-F1(8)", {2, 8, 8}, 4);
    auto p = init_parameters<float>(m, 2);
    PermutationSampler sampler(3);
    for (std::size_t ord : {0u, 1u}) {
        auto perm = sampler.sample(m.param_layer(ord));
        auto q = apply(m, p, perm);
        CHECK_FALSE(q == p);
        CHECK(apply(m, q, inverse(perm)) == p);
    }
}

TEST_CASE("permutations preserve logits") {
    for (const char* arch : {"F1(20)", "C1(6)-MaxPool(2)-F1(8)", "C1(5)-C2(7)-F1(6)"}) {
        Model m = test::cnn(arch, {2, 6, 6}, 4);
        auto p = init_parameters<float>(m, 5);
        auto x = test::random_tensor(Shape{100, 2, 6, 6}, 6);
        const auto ref = forward(m, p, x);
        PermutationSampler sampler(7);
        for (std::size_t ord = 0; ord + 1 < m.param_layers().size(); ++ord) {
            auto q = apply(m, p, sampler.sample(m.param_layer(ord)));
            CHECK(test::max_abs_diff(ref, forward(m, q, x)) < 1e-5);
        }
    }
}

TEST_CASE("channel permutation moves contiguous blocks across a flatten") {
    Model m = test::cnn("C1(4)-F1(3)", {1, 2, 2}, 2);
    auto p = init_parameters<float>(m, 8);
    Permutation perm{m.param_layer(0), {2, 0, 3, 1}, {}};
    auto q = apply(m, p, perm);
    const auto& dense = m.layer(m.param_layer(1).index);
    auto before = p.segment(static_cast<std::size_t>(dense.weight_segment));
    auto after = q.segment(static_cast<std::size_t>(dense.weight_segment));
    const std::size_t block = 2 * 2, out = 3;
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t r = 0; r < block; ++r)
            for (std::size_t k = 0; k < out; ++k)
                CHECK(after[((c * block) + r) * out + k] == before[((perm.mapping[c] * block) + r) * out + k]);
}

TEST_CASE("loss is invariant under sampled permutations") {
    Model m = test::mlp(12, {20}, 5);
    auto p = init_parameters<float>(m, 9);
    auto b = test::random_batch<float>(m, 64, 10);
    const double l0 = loss(m, p, b);
    PermutationSampler sampler(11);
    for (int k = 0; k < 200; ++k) CHECK(std::abs(loss(m, apply(m, p, sampler.sample(m.param_layer(0))), b) - l0) < 1e-5);
}

TEST_CASE("classifier layer cannot be permuted") {
    Model m = test::mlp(3, {4}, 4);
    auto p = init_parameters<float>(m, 1);
    CHECK_THROWS_AS(apply(m, p, identity_permutation(m.param_layer(1))), Error);
    Permutation wrong{m.param_layer(0), {0, 1, 2}, {}};
    CHECK_THROWS_AS(apply(m, p, wrong), ShapeError);
}
