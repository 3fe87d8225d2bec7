#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfx/model.hpp"
#include "mfx/network.hpp"
#include "mfx/objective.hpp"
#include "mfx/permute.hpp"

namespace mfx {

// L((theta1 + theta2) / 2) - (L(theta1) + L(theta2)) / 2. Signed.
template <class T>
double barrier_midpoint(const Objective<T>& f, const BasicParameterVector<T>& theta1,
                        const BasicParameterVector<T>& theta2);

template <class T>
double barrier_midpoint(const Model& model, const BasicParameterVector<T>& theta1,
                        const BasicParameterVector<T>& theta2, const BasicBatch<T>& batch) {
    return barrier_midpoint(BatchObjective<T>(model, batch), theta1, theta2);
}

struct CurvePoint {
    double alpha = 0.0;
    double deviation = 0.0;  // L(a t1 + (1-a) t2) - (a L(t1) + (1-a) L(t2))
};

// Deviation of the interpolated loss from the interpolated endpoint losses on
// a grid of alphas; its maximum approximates the loss barrier.
template <class T>
std::vector<CurvePoint> barrier_curve(const Objective<T>& f, const BasicParameterVector<T>& theta1,
                                      const BasicParameterVector<T>& theta2, std::span<const double> grid);

// Absolute midpoint barriers along one permutation chain, in generation order.
struct BarrierSampleSet {
    std::vector<double> barriers;         // |b_i|, i = 1..n
    std::vector<double> signed_barriers;  // b_i
    std::vector<double> node_losses;      // L(theta_1) .. L(theta_{n+1})
    std::vector<Permutation> permutations;
    LayerHandle layer;
    std::uint64_t seed = 0;
    std::uint64_t params_fingerprint = 0;
    std::uint64_t batch_fingerprint = 0;
    std::size_t loss_evaluations = 0;

    std::size_t size() const noexcept { return barriers.size(); }
    // First n entries, as if the chain had been generated with length n.
    BarrierSampleSet prefix(std::size_t n) const;
};

struct ChainOptions {
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::uint64_t batch_fingerprint = 0;  // tag recorded in the sample set
};

// Runs the chain theta_1 = theta, theta_{i+1} = P(theta, pi_i) with n distinct
// sampled permutations and records |barrier(theta_i, theta_{i+1})|. Node losses
// are computed once per node: 2n + 1 loss evaluations in total.
template <class T>
BarrierSampleSet barrier_samples(const Objective<T>& f, const Model& model, const BasicParameterVector<T>& params,
                                 const LayerHandle& layer, const ChainOptions& options);

template <class T>
BarrierSampleSet barrier_samples(const Model& model, const BasicParameterVector<T>& params, const LayerHandle& layer,
                                 std::size_t n, std::uint64_t seed, const BasicBatch<T>& batch, unsigned threads = 1) {
    ChainOptions opt{n, seed, threads, fingerprint(batch)};
    return barrier_samples(BatchObjective<T>(model, batch), model, params, layer, opt);
}

// Nearest-rank quantile: the ceil(q * n)-th smallest value, q in (0, 1).
double quantile(std::span<const double> values, double q);
inline double quantile(const BarrierSampleSet& set, double q) { return quantile(set.barriers, q); }

struct ManifoldEstimate {
    std::size_t edges = 0;
    std::size_t n = 0;
    double ratio = 0.0;  // edges / n
    double lambda = 0.0;
    std::vector<double> barriers;
    std::vector<bool> is_edge;
};

// Counts edges b_i <= lambda on an existing chain.
ManifoldEstimate score_chain(std::span<const double> barriers, double lambda);
inline ManifoldEstimate score_chain(const BarrierSampleSet& set, double lambda) {
    return score_chain(set.barriers, lambda);
}

template <class T>
ManifoldEstimate manifold_ratio(const Model& model, const BasicParameterVector<T>& params, const LayerHandle& layer,
                                double lambda, std::size_t n, std::uint64_t seed, const BasicBatch<T>& batch,
                                unsigned threads = 1) {
    if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be non-negative");
    return score_chain(barrier_samples(model, params, layer, n, seed, batch, threads), lambda);
}

struct ManifoldMetric {
    double value = 0.0;  // percent: 100 * (candidate_ratio - base_ratio)
    double q = 0.0;
    std::size_t n = 0;
    double lambda = 0.0;
    double base_ratio = 0.0;
    double candidate_ratio = 0.0;
    ManifoldEstimate base;
    ManifoldEstimate candidate;
};

// Combines a base chain and a candidate chain of equal length evaluated on
// the same batch: lambda is the q-quantile of the base barriers and both
// chains are scored against it.
ManifoldMetric manifold_metric(const BarrierSampleSet& base, const BarrierSampleSet& candidate, double q);

struct MetricSeeds {
    std::uint64_t base = 0;
    std::uint64_t candidate = 0;

    // Independent streams derived from one experiment seed.
    static MetricSeeds from(std::uint64_t experiment_seed);
};

template <class T>
ManifoldMetric manifold_metric(const Model& candidate_model, const BasicParameterVector<T>& candidate,
                               const LayerHandle& candidate_layer, const Model& base_model,
                               const BasicParameterVector<T>& base, const LayerHandle& base_layer, double q,
                               std::size_t n, const MetricSeeds& seeds, const BasicBatch<T>& batch,
                               unsigned threads = 1) {
    auto b = barrier_samples(base_model, base, base_layer, n, seeds.base, batch, threads);
    auto c = barrier_samples(candidate_model, candidate, candidate_layer, n, seeds.candidate, batch, threads);
    return manifold_metric(b, c, q);
}

struct SweepCell {
    double q = 0.0;
    std::size_t n = 0;
    std::string plan;
    double metric = 0.0;
    double lambda = 0.0;
    double base_ratio = 0.0;
    double candidate_ratio = 0.0;
};

// Scores every (q, n) cell from one chain per model of length max(N): cell
// (q, n) uses the first n barriers of each chain.
std::vector<SweepCell> sensitivity_sweep(const BarrierSampleSet& base,
                                         const std::vector<std::pair<std::string, BarrierSampleSet>>& candidates,
                                         std::span<const double> qs, std::span<const std::size_t> ns);

}  // namespace mfx
