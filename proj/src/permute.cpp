#include "mfx/permute.hpp"

#include <algorithm>
#include <bit>
#include <sstream>

#include "mfx/unit_map.hpp"

namespace mfx {

bool is_bijection(std::span<const std::uint32_t> mapping) {
    std::vector<bool> hit(mapping.size(), false);
    for (auto v : mapping) {
        if (v >= mapping.size() || hit[v]) return false;
        hit[v] = true;
    }
    return true;
}

bool is_identity(std::span<const std::uint32_t> mapping) {
    for (std::size_t i = 0; i < mapping.size(); ++i)
        if (mapping[i] != i) return false;
    return true;
}

Permutation identity_permutation(const LayerHandle& layer) {
    Permutation p{layer, std::vector<std::uint32_t>(layer.width), {}};
    for (std::size_t i = 0; i < layer.width; ++i) p.mapping[i] = static_cast<std::uint32_t>(i);
    return p;
}

Permutation inverse(const Permutation& perm) {
    Permutation inv{perm.layer, std::vector<std::uint32_t>(perm.mapping.size()), {}};
    for (std::size_t j = 0; j < perm.mapping.size(); ++j) inv.mapping[perm.mapping[j]] = static_cast<std::uint32_t>(j);
    inv.provenance.assign(perm.provenance.rbegin(), perm.provenance.rend());
    return inv;
}

std::string serialize_permutation(const Permutation& perm) {
    std::ostringstream os;
    os << "layer=" << perm.layer.index << ";width=" << perm.layer.width << ";mapping=";
    for (std::size_t i = 0; i < perm.mapping.size(); ++i) os << (i ? "," : "") << perm.mapping[i];
    return os.str();
}

Permutation deserialize_permutation(std::string_view text, const Model& model) {
    std::size_t layer = 0, width = 0;
    std::vector<std::uint32_t> mapping;
    std::istringstream is{std::string(text)};
    std::string field;
    bool have_layer = false, have_map = false;
    while (std::getline(is, field, ';')) {
        auto eq = field.find('=');
        if (eq == std::string::npos) throw InvalidArgument("bad permutation field '" + field + "'");
        const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
        if (key == "layer") {
            layer = std::stoull(value);
            have_layer = true;
        } else if (key == "width") {
            width = std::stoull(value);
        } else if (key == "mapping") {
            std::istringstream vs(value);
            std::string tok;
            while (std::getline(vs, tok, ',')) mapping.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
            have_map = true;
        } else {
            throw InvalidArgument("unknown permutation field '" + key + "'");
        }
    }
    if (!have_layer || !have_map) throw InvalidArgument("permutation needs layer and mapping fields");
    Permutation p{model.handle(layer), std::move(mapping), {}};
    if (width && width != p.layer.width) throw ShapeError("permutation", "width does not match model layer");
    if (p.mapping.size() != p.layer.width || !is_bijection(p.mapping))
        throw InvalidArgument("permutation mapping is not a bijection on the layer's units");
    return p;
}

std::size_t transpositions_for_width(std::size_t width) {
    return width <= 1 ? 0 : static_cast<std::size_t>(std::bit_width(width - 1));
}

std::size_t MappingHash::operator()(const std::vector<std::uint32_t>& m) const noexcept {
    return static_cast<std::size_t>(fingerprint_bytes(m.data(), m.size() * sizeof(std::uint32_t)));
}

Permutation PermutationSampler::sample(const LayerHandle& layer) {
    const std::size_t l = layer.width;
    if (l < 4) throw InvalidArgument("permutation sampling needs a layer width of at least 4, got " + std::to_string(l));
    const std::size_t k = transpositions_for_width(l);
    std::uniform_int_distribution<std::uint32_t> first(0, static_cast<std::uint32_t>(l - 1));
    std::uniform_int_distribution<std::uint32_t> other(0, static_cast<std::uint32_t>(l - 2));
    for (std::size_t attempt = 0; attempt < max_attempts_; ++attempt) {
        Permutation p = identity_permutation(layer);
        p.provenance.reserve(k);
        for (std::size_t t = 0; t < k; ++t) {
            const std::uint32_t a = first(rng_);
            std::uint32_t b = other(rng_);
            if (b >= a) ++b;  // distinct partner, uniform over the rest
            std::swap(p.mapping[a], p.mapping[b]);
            p.provenance.emplace_back(a, b);
        }
        if (is_identity(p.mapping)) continue;
        if (!seen_.insert(p.mapping).second) continue;
        return p;
    }
    throw Error("permutation sampler exhausted after " + std::to_string(max_attempts_) + " attempts at width " +
                std::to_string(l) + " (" + std::to_string(seen_.size()) + " distinct samples drawn)");
}

template <class T>
BasicParameterVector<T> apply(const Model& model, const BasicParameterVector<T>& params, const Permutation& perm) {
    const std::size_t li = perm.layer.index;
    if (li >= model.layers().size() || !model.layer(li).desc.parameterized())
        throw InvalidArgument("permutation layer " + std::to_string(li) + " is not a dense or conv layer");
    const std::size_t width = model.layer(li).desc.out;
    if (perm.mapping.size() != width)
        throw ShapeError("layer " + std::to_string(li), "permutation of size " + std::to_string(perm.mapping.size()) +
                                                            " for width " + std::to_string(width));
    if (!is_bijection(perm.mapping)) throw InvalidArgument("permutation mapping is not a bijection");
    std::vector<std::size_t> source(perm.mapping.begin(), perm.mapping.end());
    std::vector<T> ones(width, T{1});
    return remap_units<T>(model, params, model, li, source, ones);
}

template BasicParameterVector<float> apply<float>(const Model&, const BasicParameterVector<float>&, const Permutation&);
template BasicParameterVector<double> apply<double>(const Model&, const BasicParameterVector<double>&,
                                                    const Permutation&);

}  // namespace mfx
