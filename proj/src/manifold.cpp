#include "mfx/manifold.hpp"

#include <algorithm>
#include <cmath>

#include "mfx/parallel.hpp"
#include "mfx/random.hpp"

namespace mfx {

namespace {

template <class T>
double checked_loss(const Objective<T>& f, const BasicParameterVector<T>& p, const std::string& where) {
    const double v = f.value(p);
    if (!std::isfinite(v)) throw NumericError(where, "non-finite loss");
    return v;
}

}  // namespace

template <class T>
double barrier_midpoint(const Objective<T>& f, const BasicParameterVector<T>& theta1,
                        const BasicParameterVector<T>& theta2) {
    const double l1 = checked_loss(f, theta1, "barrier endpoint theta1");
    const double l2 = checked_loss(f, theta2, "barrier endpoint theta2");
    const double mid = checked_loss(f, lerp(theta1, theta2, 0.5), "barrier midpoint");
    return mid - 0.5 * (l1 + l2);
}

template <class T>
std::vector<CurvePoint> barrier_curve(const Objective<T>& f, const BasicParameterVector<T>& theta1,
                                      const BasicParameterVector<T>& theta2, std::span<const double> grid) {
    if (grid.empty()) throw InvalidArgument("barrier_curve: empty alpha grid");
    for (double a : grid)
        if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("barrier_curve: alpha outside [0, 1]");
    const double l1 = checked_loss(f, theta1, "curve endpoint theta1");
    const double l2 = checked_loss(f, theta2, "curve endpoint theta2");
    std::vector<CurvePoint> out;
    out.reserve(grid.size());
    for (double a : grid) {
        const double l = checked_loss(f, lerp(theta1, theta2, a), "curve alpha=" + std::to_string(a));
        out.push_back({a, l - (a * l1 + (1.0 - a) * l2)});
    }
    return out;
}

BarrierSampleSet BarrierSampleSet::prefix(std::size_t n) const {
    if (n > barriers.size())
        throw InvalidArgument("prefix of length " + std::to_string(n) + " from a chain of " +
                              std::to_string(barriers.size()));
    BarrierSampleSet out;
    out.barriers.assign(barriers.begin(), barriers.begin() + static_cast<std::ptrdiff_t>(n));
    out.signed_barriers.assign(signed_barriers.begin(), signed_barriers.begin() + static_cast<std::ptrdiff_t>(n));
    out.node_losses.assign(node_losses.begin(), node_losses.begin() + static_cast<std::ptrdiff_t>(n + 1));
    out.permutations.assign(permutations.begin(), permutations.begin() + static_cast<std::ptrdiff_t>(n));
    out.layer = layer;
    out.seed = seed;
    out.params_fingerprint = params_fingerprint;
    out.batch_fingerprint = batch_fingerprint;
    out.loss_evaluations = 2 * n + 1;
    return out;
}

template <class T>
BarrierSampleSet barrier_samples(const Objective<T>& f, const Model& model, const BasicParameterVector<T>& params,
                                 const LayerHandle& layer, const ChainOptions& options) {
    if (options.n < 1) throw InvalidArgument("barrier_samples: n must be at least 1");
    const std::size_t n = options.n;

    BarrierSampleSet set;
    set.layer = layer;
    set.seed = options.seed;
    set.params_fingerprint = fingerprint(params);
    set.batch_fingerprint = options.batch_fingerprint;

    // Sampling is sequential; node i + 1 is P(theta, pi_i), node 0 is theta.
    PermutationSampler sampler(options.seed);
    set.permutations.reserve(n);
    for (std::size_t i = 0; i < n; ++i) set.permutations.push_back(sampler.sample(layer));

    auto node = [&](std::size_t j) {
        return j == 0 ? params : apply(model, params, set.permutations[j - 1]);
    };

    set.node_losses.assign(n + 1, 0.0);
    std::vector<double> mid(n, 0.0);
    // Tasks 0..n are node losses, n+1..2n midpoints; results are written by index.
    parallel_for(2 * n + 1, options.threads, [&](std::size_t task) {
        if (task <= n) {
            set.node_losses[task] = checked_loss(f, node(task), "chain node " + std::to_string(task));
        } else {
            const std::size_t i = task - (n + 1);
            mid[i] = checked_loss(f, lerp(node(i), node(i + 1), 0.5), "chain midpoint " + std::to_string(i));
        }
    });
    set.loss_evaluations = 2 * n + 1;

    // Permutations preserve the function, so every node must reproduce L(theta).
    const double l0 = set.node_losses[0];
    for (std::size_t j = 1; j <= n; ++j)
        if (std::abs(set.node_losses[j] - l0) > 1e-5 * std::max(1.0, std::abs(l0)))
            throw NumericError("barrier_samples", "chain node " + std::to_string(j) + " loss " + std::to_string(set.node_losses[j]) +
                               " differs from L(theta) = " + std::to_string(l0));

    set.signed_barriers.resize(n);
    set.barriers.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double b = mid[i] - 0.5 * (set.node_losses[i] + set.node_losses[i + 1]);
        set.signed_barriers[i] = b;
        set.barriers[i] = std::abs(b);
    }
    return set;
}

double quantile(std::span<const double> values, double q) {
    if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("quantile: q must lie in (0, 1)");
    if (values.empty()) throw InvalidArgument("quantile: empty sample");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    // Absorb representation error in q * n (e.g. 0.1 * 1000) before the ceiling.
    const double r = q * n;
    double rank = std::ceil(r);
    if (rank - r > 1.0 - 1e-9 * std::max(1.0, r)) rank -= 1.0;
    const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(rank), 1, sorted.size());
    return sorted[k - 1];
}

ManifoldEstimate score_chain(std::span<const double> barriers, double lambda) {
    if (barriers.empty()) throw InvalidArgument("score_chain: empty chain");
    ManifoldEstimate est;
    est.n = barriers.size();
    est.lambda = lambda;
    est.barriers.assign(barriers.begin(), barriers.end());
    est.is_edge.resize(est.n);
    for (std::size_t i = 0; i < est.n; ++i) {
        est.is_edge[i] = barriers[i] <= lambda;
        est.edges += est.is_edge[i] ? 1 : 0;
    }
    est.ratio = static_cast<double>(est.edges) / static_cast<double>(est.n);
    return est;
}

ManifoldMetric manifold_metric(const BarrierSampleSet& base, const BarrierSampleSet& candidate, double q) {
    if (base.batch_fingerprint != candidate.batch_fingerprint)
        throw InvalidArgument("manifold_metric: base and candidate chains were evaluated on different batches");
    if (base.size() != candidate.size())
        throw InvalidArgument("manifold_metric: chains differ in length (" + std::to_string(base.size()) + " vs " +
                              std::to_string(candidate.size()) + ")");
    ManifoldMetric m;
    m.q = q;
    m.n = base.size();
    m.lambda = quantile(base, q);
    m.base = score_chain(base, m.lambda);
    m.candidate = score_chain(candidate, m.lambda);
    m.base_ratio = m.base.ratio;
    m.candidate_ratio = m.candidate.ratio;
    m.value = 100.0 * (m.candidate_ratio - m.base_ratio);
    return m;
}

MetricSeeds MetricSeeds::from(std::uint64_t experiment_seed) {
    return {derive_seed(experiment_seed, {0x6261736500ULL}), derive_seed(experiment_seed, {0x63616e6400ULL})};
}

std::vector<SweepCell> sensitivity_sweep(const BarrierSampleSet& base,
                                         const std::vector<std::pair<std::string, BarrierSampleSet>>& candidates,
                                         std::span<const double> qs, std::span<const std::size_t> ns) {
    std::vector<SweepCell> cells;
    for (std::size_t n : ns) {
        if (n < 1 || n > base.size())
            throw InvalidArgument("sweep n=" + std::to_string(n) + " exceeds the base chain length " +
                                  std::to_string(base.size()));
        const auto b = base.prefix(n);
        for (double q : qs) {
            for (const auto& [name, chain] : candidates) {
                if (n > chain.size()) throw InvalidArgument("sweep n exceeds candidate chain '" + name + "'");
                const auto m = manifold_metric(b, chain.prefix(n), q);
                cells.push_back({q, n, name, m.value, m.lambda, m.base_ratio, m.candidate_ratio});
            }
        }
    }
    return cells;
}

#define MFX_INSTANTIATE(T)                                                                                       \
    template double barrier_midpoint<T>(const Objective<T>&, const BasicParameterVector<T>&,                     \
                                        const BasicParameterVector<T>&);                                         \
    template std::vector<CurvePoint> barrier_curve<T>(const Objective<T>&, const BasicParameterVector<T>&,       \
                                                      const BasicParameterVector<T>&, std::span<const double>);  \
    template BarrierSampleSet barrier_samples<T>(const Objective<T>&, const Model&, const BasicParameterVector<T>&, \
                                                 const LayerHandle&, const ChainOptions&);

MFX_INSTANTIATE(float)
MFX_INSTANTIATE(double)
#undef MFX_INSTANTIATE

}  // namespace mfx
