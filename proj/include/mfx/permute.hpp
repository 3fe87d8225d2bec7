#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mfx/model.hpp"
#include "mfx/parameters.hpp"

namespace mfx {

// Re-indexing of one layer's units: new unit j takes old unit mapping[j].
struct Permutation {
    LayerHandle layer;
    std::vector<std::uint32_t> mapping;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> provenance;  // transpositions applied in order

    friend bool operator==(const Permutation&, const Permutation&) = default;
};

bool is_bijection(std::span<const std::uint32_t> mapping);
bool is_identity(std::span<const std::uint32_t> mapping);

Permutation identity_permutation(const LayerHandle& layer);
Permutation inverse(const Permutation& perm);

// "layer=<index>;width=<l>;mapping=3,0,1,2"
std::string serialize_permutation(const Permutation& perm);
Permutation deserialize_permutation(std::string_view text, const Model& model);

// ceil(log2(width)), the number of transpositions per sample.
std::size_t transpositions_for_width(std::size_t width);

struct MappingHash {
    std::size_t operator()(const std::vector<std::uint32_t>& m) const noexcept;
};

// Seeded source of distinct, non-identity permutations. Each sample starts
// from the identity and applies ceil(log2 l) random transpositions, pairs
// drawn with replacement; results equal to the identity or to an earlier
// sample are rejected and redrawn.
class PermutationSampler {
public:
    explicit PermutationSampler(std::uint64_t seed, std::size_t max_attempts = 10000)
        : rng_(seed), max_attempts_(max_attempts) {}

    Permutation sample(const LayerHandle& layer);

    std::size_t distinct_samples() const noexcept { return seen_.size(); }

private:
    std::mt19937_64 rng_;
    std::size_t max_attempts_;
    std::unordered_set<std::vector<std::uint32_t>, MappingHash> seen_;
};

inline Permutation sample_permutation(const LayerHandle& layer, PermutationSampler& sampler) {
    return sampler.sample(layer);
}

// P(params, perm): permutes the layer's output units and the matching inputs
// of the next parameterized layer. Function-preserving.
template <class T>
BasicParameterVector<T> apply(const Model& model, const BasicParameterVector<T>& params, const Permutation& perm);

}  // namespace mfx
