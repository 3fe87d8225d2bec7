#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mfx/parameters.hpp"

namespace mfx {

enum class OptimizerKind { SGD, Adam, AdamW };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerSettings {
    OptimizerKind kind = OptimizerKind::AdamW;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-4;

    friend bool operator==(const OptimizerSettings&, const OptimizerSettings&) = default;
};

// SGD ignores the moment buffers. Adam applies weight decay as an L2 term on
// the gradient; AdamW decays the weights directly (decoupled).
template <class T>
struct BasicOptimizerState {
    OptimizerSettings settings;
    std::uint64_t step = 0;
    std::vector<T> first_moment;
    std::vector<T> second_moment;

    friend bool operator==(const BasicOptimizerState&, const BasicOptimizerState&) = default;
};

using OptimizerState = BasicOptimizerState<float>;

template <class T>
BasicOptimizerState<T> make_optimizer(const OptimizerSettings& settings, std::size_t num_params) {
    return {settings, 0, std::vector<T>(num_params, T{0}), std::vector<T>(num_params, T{0})};
}

// Applies one update in place. Rejects non-finite gradients before touching
// either the state or the parameters.
template <class T>
void optimizer_step_inplace(BasicOptimizerState<T>& state, BasicParameterVector<T>& params,
                            const BasicParameterVector<T>& grads);

template <class T>
std::pair<BasicOptimizerState<T>, BasicParameterVector<T>> optimizer_step(BasicOptimizerState<T> state,
                                                                          BasicParameterVector<T> params,
                                                                          const BasicParameterVector<T>& grads) {
    optimizer_step_inplace(state, params, grads);
    return {std::move(state), std::move(params)};
}

}  // namespace mfx
