#include "mfx/proxies.hpp"

#include <cmath>
#include <sstream>

namespace mfx {

std::string_view to_string(ProxyKind kind) {
    switch (kind) {
        case ProxyKind::GradNorm: return "gradnorm";
        case ProxyKind::Jacov: return "jacov";
        case ProxyKind::Snip: return "snip";
        case ProxyKind::Grasp: return "grasp";
        case ProxyKind::SynFlow: return "synflow";
        case ProxyKind::SotlE: return "sotl_e";
    }
    return "?";
}

ProxyKind parse_proxy_kind(std::string_view name) {
    for (auto k : {ProxyKind::GradNorm, ProxyKind::Jacov, ProxyKind::Snip, ProxyKind::Grasp, ProxyKind::SynFlow,
                   ProxyKind::SotlE})
        if (to_string(k) == name) return k;
    throw InvalidArgument("unknown proxy '" + std::string(name) + "'");
}

std::vector<ProxyKind> parse_proxy_list(std::string_view list) {
    if (list == "all") return {std::begin(kZeroCostProxies), std::end(kZeroCostProxies)};
    std::vector<ProxyKind> out;
    std::istringstream is{std::string(list)};
    std::string tok;
    while (std::getline(is, tok, ',')) {
        const auto b = tok.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        const auto e = tok.find_last_not_of(" \t");
        out.push_back(parse_proxy_kind(std::string_view(tok).substr(b, e - b + 1)));
    }
    if (out.empty()) throw InvalidArgument("empty proxy list");
    return out;
}

double oriented(ProxyKind kind, double value) { return kind == ProxyKind::SotlE ? -value : value; }

namespace {

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericError(what, "non-finite score");
}

}  // namespace

template <class T>
double grad_norm(const Objective<T>& f, const BasicParameterVector<T>& params) {
    const auto g = f.gradient(params);
    double total = 0.0;
    for (std::size_t s = 0; s < g.num_segments(); ++s) total += l2_norm<T>(g.segment(s));
    require_finite(total, "gradnorm");
    return total;
}

template <class T>
double snip(const Objective<T>& f, const BasicParameterVector<T>& params) {
    const auto g = f.gradient(params);
    auto w = params.flat();
    auto d = g.flat();
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) total += std::abs(static_cast<double>(w[i]) * static_cast<double>(d[i]));
    require_finite(total, "snip");
    return total;
}

template <class T>
double grasp(const Objective<T>& f, const BasicParameterVector<T>& params, double hvp_epsilon) {
    const auto g = f.gradient(params);
    const auto hg = hvp(f, params, g, hvp_epsilon);
    auto w = params.flat();
    auto h = hg.flat();
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) total += static_cast<double>(w[i]) * static_cast<double>(h[i]);
    require_finite(total, "grasp");
    return -total;
}

template <class T>
double synflow(const Model& model, const BasicParameterVector<T>& params) {
    BasicParameterVector<T> abs_params = params;
    for (auto& w : abs_params.flat()) w = std::abs(w);
    Shape in_shape{1};
    in_shape.insert(in_shape.end(), model.input_shape().begin(), model.input_shape().end());
    BasicTensor<T> ones(in_shape, T{1});
    BasicTensor<T> seed(Shape{1, model.num_classes()}, T{1});
    const auto bp = backprop(model, abs_params, ones, seed, false);
    auto w = abs_params.flat();
    auto d = bp.param_grad.flat();
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) total += static_cast<double>(w[i]) * static_cast<double>(d[i]);
    require_finite(total, "synflow");
    return total;
}

template <class T>
std::vector<std::vector<double>> input_jacobians(const Model& model, const BasicParameterVector<T>& params,
                                                 const BasicTensor<T>& inputs) {
    const std::size_t b = inputs.dim(0);
    // Examples are independent, so one reverse pass seeded with ones yields
    // every per-example Jacobian row of sum(logits).
    BasicTensor<T> seed(Shape{b, model.num_classes()}, T{1});
    const auto bp = backprop(model, params, inputs, seed, true);
    const std::size_t d = inputs.row_size();
    std::vector<std::vector<double>> rows(b, std::vector<double>(d));
    for (std::size_t e = 0; e < b; ++e)
        for (std::size_t i = 0; i < d; ++i) rows[e][i] = static_cast<double>(bp.input_grad[e * d + i]);
    return rows;
}

double top_eigenvalue_psd(std::span<const double> matrix, std::size_t dim, const PowerIterationOptions& options) {
    if (matrix.size() != dim * dim) throw ShapeError("power iteration", "matrix is not dim x dim");
    double scale = 0.0;
    for (double v : matrix) scale += v * v;
    scale = std::sqrt(scale);
    if (scale == 0.0) return 0.0;

    std::vector<double> v(dim), w(dim);
    for (std::size_t i = 0; i < dim; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i % 7);
    double nv = 0.0;
    for (double x : v) nv += x * x;
    for (double& x : v) x /= std::sqrt(nv);

    double residual = 0.0;
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
        for (std::size_t r = 0; r < dim; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < dim; ++c) acc += matrix[r * dim + c] * v[c];
            w[r] = acc;
        }
        double lambda = 0.0, nw = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            lambda += v[i] * w[i];
            nw += w[i] * w[i];
        }
        residual = 0.0;
        for (std::size_t i = 0; i < dim; ++i) residual += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
        residual = std::sqrt(residual);
        if (nw == 0.0) return 0.0;
        if (residual <= options.tolerance * scale) return lambda;
        nw = std::sqrt(nw);
        for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] / nw;
    }
    throw NumericError("power iteration", "no convergence after " + std::to_string(options.max_iterations) +
                                              " iterations (residual " + std::to_string(residual) + ")");
}

template <class T>
double jacov(const Model& model, const BasicParameterVector<T>& params, const BasicTensor<T>& inputs,
             const PowerIterationOptions& options) {
    const std::size_t b = inputs.dim(0);
    if (b < 2) throw InvalidArgument("jacov needs a batch of at least 2 examples");
    auto rows = input_jacobians(model, params, inputs);
    const std::size_t d = rows.front().size();
    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows)
        for (std::size_t i = 0; i < d; ++i) mean[i] += r[i];
    for (double& m : mean) m /= static_cast<double>(b);
    for (auto& r : rows)
        for (std::size_t i = 0; i < d; ++i) r[i] -= mean[i];
    // The d x d covariance Jc^T Jc / (b - 1) shares its non-zero spectrum with
    // the b x b Gram matrix Jc Jc^T / (b - 1), which is much smaller.
    std::vector<double> gram(b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = i; j < b; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += rows[i][k] * rows[j][k];
            acc /= static_cast<double>(b - 1);
            gram[i * b + j] = acc;
            gram[j * b + i] = acc;
        }
    const double value = top_eigenvalue_psd(gram, b, options);
    require_finite(value, "jacov");
    return value;
}

double sotl_e(std::span<const double> epoch_losses) {
    if (epoch_losses.empty()) throw InvalidArgument("sotl_e: empty loss log");
    double total = 0.0;
    for (double l : epoch_losses) total += l;
    return total;
}

template <class T>
ProxyScore compute_proxy(ProxyKind kind, const Model& model, const BasicParameterVector<T>& params,
                         const BasicBatch<T>& batch) {
    ProxyScore s;
    s.kind = kind;
    s.batch_fingerprint = fingerprint(batch);
    s.params_fingerprint = fingerprint(params);
    switch (kind) {
        case ProxyKind::GradNorm: s.value = grad_norm(model, params, batch); break;
        case ProxyKind::Jacov: s.value = jacov(model, params, batch.inputs); break;
        case ProxyKind::Snip: s.value = snip(model, params, batch); break;
        case ProxyKind::Grasp: s.value = grasp(model, params, batch); break;
        case ProxyKind::SynFlow: s.value = synflow(model, params); break;
        case ProxyKind::SotlE: throw InvalidArgument("sotl_e is computed from a training log, not a batch");
    }
    return s;
}

#define MFX_INSTANTIATE(T)                                                                                      \
    template double grad_norm<T>(const Objective<T>&, const BasicParameterVector<T>&);                          \
    template double snip<T>(const Objective<T>&, const BasicParameterVector<T>&);                               \
    template double grasp<T>(const Objective<T>&, const BasicParameterVector<T>&, double);                      \
    template double synflow<T>(const Model&, const BasicParameterVector<T>&);                                   \
    template double jacov<T>(const Model&, const BasicParameterVector<T>&, const BasicTensor<T>&,               \
                             const PowerIterationOptions&);                                                     \
    template std::vector<std::vector<double>> input_jacobians<T>(const Model&, const BasicParameterVector<T>&,  \
                                                                 const BasicTensor<T>&);                        \
    template ProxyScore compute_proxy<T>(ProxyKind, const Model&, const BasicParameterVector<T>&,               \
                                         const BasicBatch<T>&);

MFX_INSTANTIATE(float)
MFX_INSTANTIATE(double)
#undef MFX_INSTANTIATE

}  // namespace mfx
