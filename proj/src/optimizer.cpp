#include "mfx/optimizer.hpp"

#include <cmath>

namespace mfx {

std::string_view to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::SGD: return "sgd";
        case OptimizerKind::Adam: return "adam";
        case OptimizerKind::AdamW: return "adamw";
    }
    return "?";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
    if (name == "sgd") return OptimizerKind::SGD;
    if (name == "adam") return OptimizerKind::Adam;
    if (name == "adamw") return OptimizerKind::AdamW;
    throw InvalidArgument("unknown optimizer '" + std::string(name) + "' (expected sgd, adam or adamw)");
}

template <class T>
void optimizer_step_inplace(BasicOptimizerState<T>& state, BasicParameterVector<T>& params,
                            const BasicParameterVector<T>& grads) {
    if (!params.same_layout(grads)) require_same_layout(params.layout(), grads.layout(), "optimizer gradients");
    auto g = grads.flat();
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!std::isfinite(g[i])) throw NumericError("optimizer", "non-finite gradient at index " + std::to_string(i));

    const auto& s = state.settings;
    auto w = params.flat();
    if (s.kind == OptimizerKind::SGD) {
        const T lr = static_cast<T>(s.learning_rate), wd = static_cast<T>(s.weight_decay);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (g[i] + wd * w[i]);
        ++state.step;
        return;
    }
    if (state.first_moment.size() != w.size() || state.second_moment.size() != w.size())
        throw ShapeError("optimizer", "moment buffers do not match parameter count");

    ++state.step;
    const double t = static_cast<double>(state.step);
    const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(s.beta1, t));
    const T c2 = static_cast<T>(1.0 - std::pow(s.beta2, t));
    const T lr = static_cast<T>(s.learning_rate), eps = static_cast<T>(s.epsilon);
    const T wd = static_cast<T>(s.weight_decay);
    const bool decoupled = s.kind == OptimizerKind::AdamW;
    auto& m = state.first_moment;
    auto& v = state.second_moment;
    for (std::size_t i = 0; i < w.size(); ++i) {
        T gi = g[i];
        if (!decoupled) gi += wd * w[i];
        m[i] = b1 * m[i] + (T{1} - b1) * gi;
        v[i] = b2 * v[i] + (T{1} - b2) * gi * gi;
        const T mhat = m[i] / c1;
        const T vhat = v[i] / c2;
        T next = w[i] - lr * mhat / (std::sqrt(vhat) + eps);
        if (decoupled) next -= lr * wd * w[i];
        w[i] = next;
    }
}

template void optimizer_step_inplace<float>(BasicOptimizerState<float>&, BasicParameterVector<float>&,
                                            const BasicParameterVector<float>&);
template void optimizer_step_inplace<double>(BasicOptimizerState<double>&, BasicParameterVector<double>&,
                                             const BasicParameterVector<double>&);

}  // namespace mfx
