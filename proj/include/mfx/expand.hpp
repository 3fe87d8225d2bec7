#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "mfx/model.hpp"
#include "mfx/parameters.hpp"

namespace mfx {

struct WidthTarget {
    LayerHandle layer;
    std::size_t new_width = 0;
};

// How the outgoing weights of a unit present r times are shared by its copies.
//   Equal: each copy gets 1/r.
//   KeepOriginal: the original unit keeps its full weight and the new copies
//   get zero, so noise on the copies' incoming weights keeps the expansion
//   exactly function-preserving.
enum class OutgoingSplit { Equal, KeepOriginal };

std::string_view to_string(OutgoingSplit split);
OutgoingSplit parse_outgoing_split(std::string_view name);

struct ExpansionPlan {
    enum class Mode { Width, Depth };

    Mode mode = Mode::Width;
    std::vector<WidthTarget> targets;  // width mode
    std::size_t insert_after = 0;      // depth mode: index of the ReLU to insert after
    std::uint64_t duplication_seed = 0;
    // Std-dev of Gaussian noise added to the incoming weights of newly created
    // units. With the Equal split only zero is function-preserving.
    double noise_scale = 0.0;
    OutgoingSplit split = OutgoingSplit::Equal;
};

// Plan that widens the `ordinal`-th parameterized layer to round(width * factor).
ExpansionPlan width_plan(const Model& model, std::size_t ordinal, double factor, std::uint64_t seed,
                         double noise_scale = 0.0, OutgoingSplit split = OutgoingSplit::Equal);

template <class T>
struct Expanded {
    Model model;
    BasicParameterVector<T> params;
};

// Net2Net widening: new units copy a uniformly drawn source unit (incoming
// weights and bias); every outgoing weight of a unit present r times is
// divided by r (or kept on the original, see OutgoingSplit).
template <class T>
Expanded<T> widen(const Model& model, const BasicParameterVector<T>& params, const ExpansionPlan& plan);

// Inserts Conv(C -> C) with an identity kernel plus ReLU after the ReLU at
// layer index `position`. The ReLU must sit between two conv layers with the
// same channel count.
template <class T>
Expanded<T> deepen(const Model& model, const BasicParameterVector<T>& params, std::size_t position);

template <class T>
Expanded<T> expand(const Model& model, const BasicParameterVector<T>& params, const ExpansionPlan& plan) {
    return plan.mode == ExpansionPlan::Mode::Width ? widen(model, params, plan)
                                                   : deepen(model, params, plan.insert_after);
}

// Index of the ReLU directly following the `ordinal`-th parameterized layer.
std::size_t relu_after(const Model& model, std::size_t ordinal);

}  // namespace mfx
