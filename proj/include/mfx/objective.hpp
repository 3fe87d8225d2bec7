#pragma once

#include <cmath>

#include "mfx/network.hpp"

namespace mfx {

// A differentiable scalar function of a parameter vector. Model losses on a
// fixed batch are the usual instance; analytic surrogates implement it in
// tests.
template <class T>
class Objective {
public:
    virtual ~Objective() = default;
    virtual double value(const BasicParameterVector<T>& params) const = 0;
    virtual BasicParameterVector<T> gradient(const BasicParameterVector<T>& params) const = 0;
};

template <class T>
class BatchObjective final : public Objective<T> {
public:
    BatchObjective(const Model& model, const BasicBatch<T>& batch) : model_(model), batch_(batch) {}

    double value(const BasicParameterVector<T>& params) const override { return loss(model_, params, batch_); }
    BasicParameterVector<T> gradient(const BasicParameterVector<T>& params) const override {
        return grad(model_, params, batch_);
    }

    const Model& model() const noexcept { return model_; }
    const BasicBatch<T>& batch() const noexcept { return batch_; }

private:
    const Model& model_;
    const BasicBatch<T>& batch_;
};

template <class T>
constexpr double default_hvp_epsilon() {
    return sizeof(T) >= 8 ? 1e-5 : 1e-3;
}

template <class T>
double l2_norm(std::span<const T> v) {
    double s = 0.0;
    for (T x : v) s += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(s);
}

// Hessian-vector product by central differences of the gradient:
// (g(p + h v) - g(p - h v)) / (2 h) with h = epsilon / |v|. Returns zeros for v = 0.
template <class T>
BasicParameterVector<T> hvp(const Objective<T>& f, const BasicParameterVector<T>& params,
                            const BasicParameterVector<T>& v, double epsilon = default_hvp_epsilon<T>()) {
    if (!params.same_layout(v)) require_same_layout(params.layout(), v.layout(), "hvp direction");
    const double norm = l2_norm<T>(v.flat());
    BasicParameterVector<T> out(params.layout_ptr());
    if (norm == 0.0) return out;
    const double h = epsilon / norm;
    BasicParameterVector<T> plus = params, minus = params;
    auto p = params.flat();
    auto dv = v.flat();
    auto fp = plus.flat();
    auto fm = minus.flat();
    for (std::size_t i = 0; i < p.size(); ++i) {
        fp[i] = static_cast<T>(static_cast<double>(p[i]) + h * static_cast<double>(dv[i]));
        fm[i] = static_cast<T>(static_cast<double>(p[i]) - h * static_cast<double>(dv[i]));
    }
    const auto gp = f.gradient(plus);
    const auto gm = f.gradient(minus);
    auto a = gp.flat();
    auto b = gm.flat();
    auto o = out.flat();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = static_cast<T>((static_cast<double>(a[i]) - static_cast<double>(b[i])) / (2.0 * h));
    return out;
}

template <class T>
BasicParameterVector<T> hvp(const Model& model, const BasicParameterVector<T>& params, const BasicBatch<T>& batch,
                            const BasicParameterVector<T>& v, double epsilon = default_hvp_epsilon<T>()) {
    return hvp(BatchObjective<T>(model, batch), params, v, epsilon);
}

}  // namespace mfx
