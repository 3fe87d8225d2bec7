#include "mfx/model.hpp"

#include <cmath>
#include <random>
#include <regex>
#include <sstream>

namespace mfx {

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2D: return "conv";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::ReLU: return "relu";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

namespace {

std::string describe(const LayerDesc& d, std::size_t index) {
    std::ostringstream os;
    os << "layer " << index << " " << to_string(d.kind);
    if (d.parameterized()) os << "(" << d.in << "," << d.out << ")";
    if (d.kind == LayerKind::MaxPool) os << "(" << d.pool << ")";
    return os.str();
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != ' ' && c != '\t') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::size_t parse_size(const std::string& s, std::string_view what) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw InvalidArgument("expected a non-negative integer for " + std::string(what) + ", got '" + s + "'");
    return static_cast<std::size_t>(std::stoull(s));
}

Shape parse_shape(const std::string& s) {
    Shape shape;
    for (const auto& part : split(s, 'x')) shape.push_back(parse_size(part, "shape"));
    return shape;
}

}  // namespace

ModelSpec parse_architecture(std::string_view arch, Shape input_shape, std::size_t num_classes) {
    if (input_shape.size() != 1 && input_shape.size() != 3)
        throw InvalidArgument("input shape must be (features) or (channels, height, width)");
    ModelSpec spec;
    spec.input_shape = std::move(input_shape);
    spec.num_classes = num_classes;

    static const std::regex token_re(R"(^([A-Za-z]+)_?[0-9]*\(([0-9]+)\)$)");
    bool image = spec.input_shape.size() == 3;
    for (const auto& tok : split(arch, '-')) {
        if (tok.empty()) throw InvalidArgument("empty layer token in architecture '" + std::string(arch) + "'");
        std::smatch m;
        if (!std::regex_match(tok, m, token_re)) {
            if (tok == "Flatten" || tok == "flatten") {
                spec.layers.push_back(LayerDesc::flatten());
                image = false;
                continue;
            }
            throw InvalidArgument("unrecognised layer token '" + tok + "'");
        }
        const std::string kind = m[1].str();
        const std::size_t arg = parse_size(m[2].str(), tok);
        if (kind == "C") {
            spec.layers.push_back(LayerDesc::conv(arg));
            spec.layers.push_back(LayerDesc::relu());
        } else if (kind == "F") {
            if (image) {
                spec.layers.push_back(LayerDesc::flatten());
                image = false;
            }
            spec.layers.push_back(LayerDesc::dense(arg));
            spec.layers.push_back(LayerDesc::relu());
        } else if (kind == "MaxPool" || kind == "P") {
            spec.layers.push_back(LayerDesc::maxpool(arg));
        } else {
            throw InvalidArgument("unrecognised layer kind '" + kind + "' in token '" + tok + "'");
        }
    }
    if (image) spec.layers.push_back(LayerDesc::flatten());
    spec.layers.push_back(LayerDesc::dense(num_classes));
    // Resolve inferred input sizes so the spec is self-describing.
    return compile(std::move(spec)).spec();
}

std::string serialize_spec(const ModelSpec& spec) {
    std::ostringstream os;
    os << "input=";
    for (std::size_t i = 0; i < spec.input_shape.size(); ++i) os << (i ? "x" : "") << spec.input_shape[i];
    os << ";classes=" << spec.num_classes << ";layers=";
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& d = spec.layers[i];
        if (i) os << ",";
        os << to_string(d.kind);
        if (d.parameterized()) os << "(" << d.in << ":" << d.out << ")";
        if (d.kind == LayerKind::MaxPool) os << "(" << d.pool << ")";
    }
    return os.str();
}

ModelSpec deserialize_spec(std::string_view text) {
    ModelSpec spec;
    bool have_input = false, have_classes = false, have_layers = false;
    for (const auto& field : split(text, ';')) {
        auto eq = field.find('=');
        if (eq == std::string::npos) throw InvalidArgument("model spec field without '=': '" + field + "'");
        std::string key = field.substr(0, eq), value = field.substr(eq + 1);
        if (key == "input") {
            spec.input_shape = parse_shape(value);
            have_input = true;
        } else if (key == "classes") {
            spec.num_classes = parse_size(value, "classes");
            have_classes = true;
        } else if (key == "layers") {
            static const std::regex layer_re(R"(^([a-z]+)(?:\(([0-9]+)(?::([0-9]+))?\))?$)");
            for (const auto& tok : split(value, ',')) {
                std::smatch m;
                if (!std::regex_match(tok, m, layer_re)) throw InvalidArgument("bad layer entry '" + tok + "'");
                const std::string kind = m[1].str();
                if (kind == "dense" || kind == "conv") {
                    if (!m[3].matched) throw InvalidArgument("layer '" + tok + "' needs (in:out)");
                    std::size_t in = parse_size(m[2].str(), tok), out = parse_size(m[3].str(), tok);
                    spec.layers.push_back(kind == "dense" ? LayerDesc::dense(out, in) : LayerDesc::conv(out, in));
                } else if (kind == "maxpool") {
                    spec.layers.push_back(LayerDesc::maxpool(m[2].matched ? parse_size(m[2].str(), tok) : 2));
                } else if (kind == "relu") {
                    spec.layers.push_back(LayerDesc::relu());
                } else if (kind == "flatten") {
                    spec.layers.push_back(LayerDesc::flatten());
                } else {
                    throw InvalidArgument("unknown layer kind '" + kind + "'");
                }
            }
            have_layers = true;
        } else {
            throw InvalidArgument("unknown model spec field '" + key + "'");
        }
    }
    if (!have_input || !have_classes || !have_layers)
        throw InvalidArgument("model spec needs input, classes and layers fields");
    return spec;
}

LayerHandle Model::handle(std::size_t layer_index) const {
    const auto& l = layers_.at(layer_index);
    if (!l.desc.parameterized())
        throw InvalidArgument("layer " + std::to_string(layer_index) + " (" + std::string(to_string(l.desc.kind)) +
                              ") has no parameters");
    return {layer_index, l.desc.kind, l.desc.out};
}

LayerHandle Model::param_layer(std::size_t ordinal) const {
    if (ordinal >= param_layers_.size())
        throw InvalidArgument("model has only " + std::to_string(param_layers_.size()) + " parameterized layers");
    return handle(param_layers_[ordinal]);
}

std::optional<std::size_t> Model::next_param_layer(std::size_t layer_index) const {
    for (std::size_t idx : param_layers_)
        if (idx > layer_index) return idx;
    return std::nullopt;
}

Model compile(ModelSpec spec) {
    if (spec.input_shape.size() != 1 && spec.input_shape.size() != 3)
        throw ShapeError("input", "input shape must have rank 1 or 3, got " + shape_to_string(spec.input_shape));
    for (auto d : spec.input_shape)
        if (d == 0) throw ShapeError("input", "zero-sized input dimension");
    if (spec.num_classes < 1) throw ShapeError("input", "num_classes must be positive");
    if (spec.layers.empty()) throw ShapeError("input", "model has no layers");

    Model model;
    auto layout = std::make_shared<ParamLayout>();
    Shape cur = spec.input_shape;
    std::string prev_name = "input " + shape_to_string(cur);

    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        LayerDesc& d = spec.layers[i];
        ResolvedLayer rl;
        rl.in_shape = cur;
        auto fail = [&](const std::string& why) {
            throw ShapeError(describe(d, i), "incompatible with " + prev_name + ": " + why);
        };
        switch (d.kind) {
            case LayerKind::Dense: {
                if (cur.size() != 1) fail("dense layer needs a flat input (insert a flatten)");
                if (d.in == 0) d.in = cur[0];
                if (d.in != cur[0]) fail("expects " + std::to_string(d.in) + " inputs, got " + std::to_string(cur[0]));
                if (d.out == 0) fail("zero units");
                rl.weight_segment = static_cast<int>(layout->num_segments());
                layout->add("layer" + std::to_string(i) + ".dense.weight", {d.in, d.out});
                rl.bias_segment = static_cast<int>(layout->num_segments());
                layout->add("layer" + std::to_string(i) + ".dense.bias", {d.out});
                cur = {d.out};
                model.param_layers_.push_back(i);
                break;
            }
            case LayerKind::Conv2D: {
                if (cur.size() != 3) fail("conv layer needs a (channels, height, width) input");
                if (d.in == 0) d.in = cur[0];
                if (d.in != cur[0])
                    fail("expects " + std::to_string(d.in) + " channels, got " + std::to_string(cur[0]));
                if (d.out == 0) fail("zero channels");
                rl.weight_segment = static_cast<int>(layout->num_segments());
                layout->add("layer" + std::to_string(i) + ".conv.weight", {d.out, d.in, 3, 3});
                rl.bias_segment = static_cast<int>(layout->num_segments());
                layout->add("layer" + std::to_string(i) + ".conv.bias", {d.out});
                cur = {d.out, cur[1], cur[2]};
                model.param_layers_.push_back(i);
                break;
            }
            case LayerKind::MaxPool: {
                if (cur.size() != 3) fail("max-pool needs a (channels, height, width) input");
                if (d.pool < 1) fail("pool window must be positive");
                if (cur[1] < d.pool || cur[2] < d.pool) fail("spatial size smaller than pool window");
                cur = {cur[0], cur[1] / d.pool, cur[2] / d.pool};
                break;
            }
            case LayerKind::ReLU: break;
            case LayerKind::Flatten: cur = {shape_size(cur)}; break;
        }
        rl.desc = d;
        rl.out_shape = cur;
        model.layers_.push_back(rl);
        prev_name = describe(d, i);
    }
    const auto& last = spec.layers.back();
    if (last.kind != LayerKind::Dense)
        throw ShapeError(describe(last, spec.layers.size() - 1), "final layer must be a dense classifier");
    if (cur.size() != 1 || cur[0] != spec.num_classes)
        throw ShapeError(describe(last, spec.layers.size() - 1),
                         "classifier emits " + shape_to_string(cur) + " but model has " +
                             std::to_string(spec.num_classes) + " classes");
    model.spec_ = std::move(spec);
    model.layout_ = std::move(layout);
    return model;
}

std::size_t fan_in(const ResolvedLayer& layer) {
    switch (layer.desc.kind) {
        case LayerKind::Dense: return layer.desc.in;
        case LayerKind::Conv2D: return layer.desc.in * 9;
        default: return 0;
    }
}

template <class T>
BasicParameterVector<T> init_parameters(const Model& model, std::uint64_t seed) {
    BasicParameterVector<T> params(model.layout());
    std::mt19937_64 rng(seed);
    for (std::size_t idx : model.param_layers()) {
        const auto& layer = model.layer(idx);
        const double fi = static_cast<double>(fan_in(layer));
        std::uniform_real_distribution<double> wdist(-std::sqrt(6.0 / fi), std::sqrt(6.0 / fi));
        for (auto& w : params.segment(static_cast<std::size_t>(layer.weight_segment))) w = static_cast<T>(wdist(rng));
        std::uniform_real_distribution<double> bdist(-1.0 / std::sqrt(fi), 1.0 / std::sqrt(fi));
        for (auto& b : params.segment(static_cast<std::size_t>(layer.bias_segment))) b = static_cast<T>(bdist(rng));
    }
    return params;
}

template BasicParameterVector<float> init_parameters<float>(const Model&, std::uint64_t);
template BasicParameterVector<double> init_parameters<double>(const Model&, std::uint64_t);

std::pair<Model, ParameterVector> build(const ModelSpec& spec, std::uint64_t init_seed) {
    Model model = compile(spec);
    auto params = init_parameters<float>(model, init_seed);
    return {std::move(model), std::move(params)};
}

}  // namespace mfx
