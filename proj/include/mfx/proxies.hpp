#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mfx/model.hpp"
#include "mfx/network.hpp"
#include "mfx/objective.hpp"

namespace mfx {

enum class ProxyKind { GradNorm, Jacov, Snip, Grasp, SynFlow, SotlE };

std::string_view to_string(ProxyKind kind);
ProxyKind parse_proxy_kind(std::string_view name);
// Comma-separated list; "all" selects every batch-based proxy.
std::vector<ProxyKind> parse_proxy_list(std::string_view list);
inline constexpr ProxyKind kZeroCostProxies[] = {ProxyKind::GradNorm, ProxyKind::Jacov, ProxyKind::Snip,
                                                 ProxyKind::Grasp, ProxyKind::SynFlow};

struct ProxyScore {
    ProxyKind kind = ProxyKind::GradNorm;
    double value = 0.0;
    std::uint64_t batch_fingerprint = 0;
    std::uint64_t params_fingerprint = 0;
};

// Value with a uniform "higher is better" orientation (SoTL-E is negated).
double oriented(ProxyKind kind, double value);

// Sum over parameter segments of the L2 norm of that segment's gradient.
template <class T>
double grad_norm(const Objective<T>& f, const BasicParameterVector<T>& params);

// Sum of |theta * dL/dtheta|.
template <class T>
double snip(const Objective<T>& f, const BasicParameterVector<T>& params);

// -sum(theta * (H g)), g the gradient and H g a finite-difference HVP.
template <class T>
double grasp(const Objective<T>& f, const BasicParameterVector<T>& params,
             double hvp_epsilon = default_hvp_epsilon<T>());

// Path-norm saliency: with |theta| and an all-ones input, R = sum(logits);
// returns sum(|theta| * dR/d|theta|). The caller's parameters are untouched.
template <class T>
double synflow(const Model& model, const BasicParameterVector<T>& params);

struct PowerIterationOptions {
    double tolerance = 1e-6;
    std::size_t max_iterations = 1000;
};

// Largest eigenvalue of the batch covariance of per-example input Jacobians
// of sum(logits).
template <class T>
double jacov(const Model& model, const BasicParameterVector<T>& params, const BasicTensor<T>& inputs,
             const PowerIterationOptions& options = {});

// Per-example Jacobians of sum(logits) w.r.t. the input, one row per example.
template <class T>
std::vector<std::vector<double>> input_jacobians(const Model& model, const BasicParameterVector<T>& params,
                                                 const BasicTensor<T>& inputs);

// Largest eigenvalue of a symmetric positive semi-definite matrix (row-major,
// dim x dim) by power iteration.
double top_eigenvalue_psd(std::span<const double> matrix, std::size_t dim, const PowerIterationOptions& options = {});

// Sum of the recorded per-batch training losses of one epoch.
double sotl_e(std::span<const double> epoch_losses);

template <class T>
double grad_norm(const Model& model, const BasicParameterVector<T>& params, const BasicBatch<T>& batch) {
    return grad_norm(BatchObjective<T>(model, batch), params);
}
template <class T>
double snip(const Model& model, const BasicParameterVector<T>& params, const BasicBatch<T>& batch) {
    return snip(BatchObjective<T>(model, batch), params);
}
template <class T>
double grasp(const Model& model, const BasicParameterVector<T>& params, const BasicBatch<T>& batch,
             double hvp_epsilon = default_hvp_epsilon<T>()) {
    return grasp(BatchObjective<T>(model, batch), params, hvp_epsilon);
}

// Any batch-based proxy by kind (SotlE is rejected: it needs a training log).
template <class T>
ProxyScore compute_proxy(ProxyKind kind, const Model& model, const BasicParameterVector<T>& params,
                         const BasicBatch<T>& batch);

}  // namespace mfx
