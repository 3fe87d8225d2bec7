#include "mfx/unit_map.hpp"

#include <algorithm>

namespace mfx {

std::size_t downstream_layer(const Model& model, std::size_t layer) {
    const auto& l = model.layer(layer);
    if (!l.desc.parameterized())
        throw InvalidArgument("layer " + std::to_string(layer) + " has no units to re-index");
    auto next = model.next_param_layer(layer);
    if (!next)
        throw InvalidArgument("layer " + std::to_string(layer) +
                              " is the classifier: no downstream layer to absorb the re-indexing");
    return *next;
}

template <class T>
BasicParameterVector<T> remap_units(const Model& from, const BasicParameterVector<T>& params, const Model& to,
                                    std::size_t layer, std::span<const std::size_t> source,
                                    std::span<const T> out_scale) {
    const std::size_t next = downstream_layer(from, layer);
    const auto& src_l = from.layer(layer);
    const auto& src_n = from.layer(next);
    const auto& dst_l = to.layer(layer);
    const auto& dst_n = to.layer(next);
    const std::size_t old_w = src_l.desc.out, new_w = dst_l.desc.out;
    if (source.size() != new_w || out_scale.size() != new_w)
        throw ShapeError("layer " + std::to_string(layer), "unit map has " + std::to_string(source.size()) +
                                                              " entries for width " + std::to_string(new_w));
    for (std::size_t s : source)
        if (s >= old_w) throw InvalidArgument("unit map source " + std::to_string(s) + " out of range");
    if (from.layout()->num_segments() != to.layout()->num_segments())
        throw ShapeError("remap", "source and target models differ in segment count");

    BasicParameterVector<T> out(to.layout());
    // Untouched segments carry over verbatim.
    for (std::size_t s = 0; s < from.layout()->num_segments(); ++s) {
        const int si = static_cast<int>(s);
        if (si == src_l.weight_segment || si == src_l.bias_segment || si == src_n.weight_segment) continue;
        auto a = params.segment(s);
        auto b = out.segment(s);
        if (a.size() != b.size()) throw ShapeError(from.layout()->segment(s).name, "unexpected size change");
        std::copy(a.begin(), a.end(), b.begin());
    }

    // Incoming side: output units of `layer`.
    {
        auto W = params.segment(static_cast<std::size_t>(src_l.weight_segment));
        auto b = params.segment(static_cast<std::size_t>(src_l.bias_segment));
        auto W2 = out.segment(static_cast<std::size_t>(dst_l.weight_segment));
        auto b2 = out.segment(static_cast<std::size_t>(dst_l.bias_segment));
        if (src_l.desc.kind == LayerKind::Dense) {
            const std::size_t in = src_l.desc.in;
            for (std::size_t i = 0; i < in; ++i)
                for (std::size_t j = 0; j < new_w; ++j) W2[i * new_w + j] = W[i * old_w + source[j]];
        } else {
            const std::size_t fsz = src_l.desc.in * 9;
            for (std::size_t j = 0; j < new_w; ++j)
                std::copy_n(W.begin() + static_cast<std::ptrdiff_t>(source[j] * fsz), fsz,
                            W2.begin() + static_cast<std::ptrdiff_t>(j * fsz));
        }
        for (std::size_t j = 0; j < new_w; ++j) b2[j] = b[source[j]];
    }

    // Outgoing side: inputs of the next parameterized layer.
    {
        auto W = params.segment(static_cast<std::size_t>(src_n.weight_segment));
        auto W2 = out.segment(static_cast<std::size_t>(dst_n.weight_segment));
        if (src_n.desc.kind == LayerKind::Dense) {
            // (in, out) layout; each unit owns `block` consecutive rows (1 for
            // dense -> dense, H*W after a conv -> flatten boundary).
            const std::size_t cols = src_n.desc.out;
            const std::size_t block = src_n.desc.in / old_w;
            if (block * old_w != src_n.desc.in || dst_n.desc.in != block * new_w)
                throw ShapeError("layer " + std::to_string(next), "input width is not a whole number of unit blocks");
            for (std::size_t j = 0; j < new_w; ++j) {
                const T scale = out_scale[j];
                for (std::size_t r = 0; r < block; ++r) {
                    const T* src = W.data() + (source[j] * block + r) * cols;
                    T* dst = W2.data() + (j * block + r) * cols;
                    for (std::size_t c = 0; c < cols; ++c) dst[c] = src[c] * scale;
                }
            }
        } else {
            // (cout, cin, 3, 3)
            const std::size_t cout = src_n.desc.out;
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t j = 0; j < new_w; ++j) {
                    const T scale = out_scale[j];
                    const T* src = W.data() + (co * old_w + source[j]) * 9;
                    T* dst = W2.data() + (co * new_w + j) * 9;
                    for (std::size_t t = 0; t < 9; ++t) dst[t] = src[t] * scale;
                }
        }
    }
    return out;
}

template BasicParameterVector<float> remap_units<float>(const Model&, const BasicParameterVector<float>&, const Model&,
                                                        std::size_t, std::span<const std::size_t>,
                                                        std::span<const float>);
template BasicParameterVector<double> remap_units<double>(const Model&, const BasicParameterVector<double>&,
                                                          const Model&, std::size_t, std::span<const std::size_t>,
                                                          std::span<const double>);

}  // namespace mfx
