#pragma once

#include <cstddef>
#include <span>

#include "mfx/model.hpp"
#include "mfx/parameters.hpp"

namespace mfx {

// Rebuilds parameters after re-indexing the output units (or channels) of
// parameterized layer `layer`. New unit j takes the incoming weights and bias
// of old unit source[j]; in the next parameterized layer, the inputs fed by
// new unit j copy those of old unit source[j] multiplied by out_scale[j].
// Flatten boundaries are handled by moving whole per-channel column blocks.
//
// `from` and `to` differ only in the width of `layer` (and the matching input
// width of the next parameterized layer). Both permutation and Net2Net
// widening are instances of this map.
template <class T>
BasicParameterVector<T> remap_units(const Model& from, const BasicParameterVector<T>& params, const Model& to,
                                    std::size_t layer, std::span<const std::size_t> source,
                                    std::span<const T> out_scale);

// The parameterized layer consuming `layer`'s units; throws when `layer` is
// the classifier.
std::size_t downstream_layer(const Model& model, std::size_t layer);

}  // namespace mfx
