#include "mfx/expand.hpp"

#include <cmath>
#include <random>

#include "mfx/unit_map.hpp"

namespace mfx {

std::string_view to_string(OutgoingSplit split) {
    return split == OutgoingSplit::Equal ? "equal" : "keep-original";
}

OutgoingSplit parse_outgoing_split(std::string_view name) {
    if (name == "equal") return OutgoingSplit::Equal;
    if (name == "keep-original") return OutgoingSplit::KeepOriginal;
    throw InvalidArgument("unknown outgoing split '" + std::string(name) + "' (expected equal or keep-original)");
}

ExpansionPlan width_plan(const Model& model, std::size_t ordinal, double factor, std::uint64_t seed,
                         double noise_scale, OutgoingSplit split) {
    if (!(factor >= 1.0)) throw InvalidArgument("expansion factor must be >= 1");
    const LayerHandle h = model.param_layer(ordinal);
    ExpansionPlan plan;
    plan.targets.push_back({h, static_cast<std::size_t>(std::llround(static_cast<double>(h.width) * factor))});
    plan.duplication_seed = seed;
    plan.noise_scale = noise_scale;
    plan.split = split;
    return plan;
}

namespace {

template <class T>
Expanded<T> widen_one(const Model& model, const BasicParameterVector<T>& params, const WidthTarget& target,
                      std::mt19937_64& rng, double noise_scale, OutgoingSplit split) {
    const std::size_t li = target.layer.index;
    if (li >= model.layers().size() || !model.layer(li).desc.parameterized())
        throw InvalidArgument("expansion target " + std::to_string(li) + " is not a dense or conv layer");
    const std::size_t old_w = model.layer(li).desc.out;
    if (target.new_width < old_w)
        throw InvalidArgument("new width " + std::to_string(target.new_width) + " is smaller than current width " +
                              std::to_string(old_w) + " of layer " + std::to_string(li));
    const std::size_t next = downstream_layer(model, li);

    ModelSpec spec = model.spec();
    spec.layers[li].out = target.new_width;
    const std::size_t block = model.layer(next).desc.in / old_w;
    spec.layers[next].in = block * target.new_width;
    Model grown = compile(std::move(spec));

    std::vector<std::size_t> source(target.new_width);
    std::vector<std::size_t> count(old_w, 1);
    std::uniform_int_distribution<std::size_t> pick(0, old_w - 1);
    for (std::size_t j = 0; j < target.new_width; ++j) {
        source[j] = j < old_w ? j : pick(rng);
        if (j >= old_w) ++count[source[j]];
    }
    std::vector<T> scale(target.new_width);
    if (split == OutgoingSplit::KeepOriginal) {
        for (std::size_t j = 0; j < target.new_width; ++j) scale[j] = j < old_w ? T{1} : T{0};
    } else {
        for (std::size_t j = 0; j < target.new_width; ++j) scale[j] = T{1} / static_cast<T>(count[source[j]]);
    }

    auto out = remap_units<T>(model, params, grown, li, source, scale);

    if (noise_scale > 0.0 && target.new_width > old_w) {
        std::normal_distribution<double> noise(0.0, noise_scale);
        const auto& L = grown.layer(li);
        auto W = out.segment(static_cast<std::size_t>(L.weight_segment));
        if (L.desc.kind == LayerKind::Dense) {
            for (std::size_t i = 0; i < L.desc.in; ++i)
                for (std::size_t j = old_w; j < target.new_width; ++j)
                    W[i * target.new_width + j] += static_cast<T>(noise(rng));
        } else {
            const std::size_t fsz = L.desc.in * 9;
            for (std::size_t j = old_w; j < target.new_width; ++j)
                for (std::size_t k = 0; k < fsz; ++k) W[j * fsz + k] += static_cast<T>(noise(rng));
        }
    }
    return {std::move(grown), std::move(out)};
}

}  // namespace

template <class T>
Expanded<T> widen(const Model& model, const BasicParameterVector<T>& params, const ExpansionPlan& plan) {
    if (plan.mode != ExpansionPlan::Mode::Width) throw InvalidArgument("widen needs a width-mode plan");
    if (plan.targets.empty()) throw InvalidArgument("expansion plan has no targets");
    if (!(plan.noise_scale >= 0.0)) throw InvalidArgument("noise_scale must be non-negative");
    std::mt19937_64 rng(plan.duplication_seed);
    Expanded<T> cur{model, params};
    for (const auto& t : plan.targets)
        cur = widen_one<T>(cur.model, cur.params, t, rng, plan.noise_scale, plan.split);
    return cur;
}

std::size_t relu_after(const Model& model, std::size_t ordinal) {
    const std::size_t li = model.param_layer(ordinal).index;
    if (li + 1 >= model.layers().size() || model.layer(li + 1).desc.kind != LayerKind::ReLU)
        throw InvalidArgument("layer " + std::to_string(li) + " is not followed by a ReLU");
    return li + 1;
}

template <class T>
Expanded<T> deepen(const Model& model, const BasicParameterVector<T>& params, std::size_t position) {
    const auto& layers = model.layers();
    if (position >= layers.size() || layers[position].desc.kind != LayerKind::ReLU)
        throw InvalidArgument("depth insertion point " + std::to_string(position) +
                              " must be a ReLU (identity preservation needs non-negative inputs)");
    std::optional<std::size_t> prev;
    for (std::size_t i = 0; i < position; ++i)
        if (layers[i].desc.parameterized()) prev = i;
    auto next = model.next_param_layer(position);
    if (!prev || !next || layers[*prev].desc.kind != LayerKind::Conv2D || layers[*next].desc.kind != LayerKind::Conv2D)
        throw InvalidArgument("depth insertion point " + std::to_string(position) + " is not between two conv layers");
    for (std::size_t i = *prev + 1; i < *next; ++i)
        if (i != position && layers[i].desc.kind != LayerKind::ReLU && layers[i].desc.kind != LayerKind::MaxPool)
            throw InvalidArgument("unexpected layer between insertion neighbours");
    const std::size_t channels = layers[position].out_shape[0];
    if (layers[*prev].desc.out != layers[*next].desc.out)
        throw ShapeError("layer " + std::to_string(position),
                         "channel mismatch at insertion point: " + std::to_string(layers[*prev].desc.out) + " vs " +
                             std::to_string(layers[*next].desc.out));

    ModelSpec spec = model.spec();
    auto at = spec.layers.begin() + static_cast<std::ptrdiff_t>(position + 1);
    at = spec.layers.insert(at, LayerDesc::conv(channels, channels));
    spec.layers.insert(at + 1, LayerDesc::relu());
    Model grown = compile(std::move(spec));

    BasicParameterVector<T> out(grown.layout());
    const std::size_t inserted = position + 1;
    // Segments before the insertion keep their index; later ones shift by two.
    const auto& ins = grown.layer(inserted);
    const std::size_t first_new = static_cast<std::size_t>(ins.weight_segment);
    for (std::size_t s = 0; s < params.num_segments(); ++s) {
        auto a = params.segment(s);
        auto b = out.segment(s < first_new ? s : s + 2);
        std::copy(a.begin(), a.end(), b.begin());
    }
    auto W = out.segment(first_new);
    for (std::size_t c = 0; c < channels; ++c) W[(c * channels + c) * 9 + 4] = T{1};
    return {std::move(grown), std::move(out)};
}

template Expanded<float> widen<float>(const Model&, const BasicParameterVector<float>&, const ExpansionPlan&);
template Expanded<double> widen<double>(const Model&, const BasicParameterVector<double>&, const ExpansionPlan&);
template Expanded<float> deepen<float>(const Model&, const BasicParameterVector<float>&, std::size_t);
template Expanded<double> deepen<double>(const Model&, const BasicParameterVector<double>&, std::size_t);

}  // namespace mfx
