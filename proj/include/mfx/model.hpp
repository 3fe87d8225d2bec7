#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mfx/parameters.hpp"
#include "mfx/tensor.hpp"

namespace mfx {

enum class LayerKind { Dense, Conv2D, MaxPool, ReLU, Flatten };

std::string_view to_string(LayerKind kind);

// One entry of a model description. For Dense, `in`/`out` are feature counts;
// for Conv2D they are channel counts (3x3 kernel, same padding, stride 1).
// `in == 0` means "infer from the previous layer".
struct LayerDesc {
    LayerKind kind = LayerKind::ReLU;
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t pool = 2;

    static LayerDesc dense(std::size_t out, std::size_t in = 0) { return {LayerKind::Dense, in, out, 0}; }
    static LayerDesc conv(std::size_t out, std::size_t in = 0) { return {LayerKind::Conv2D, in, out, 0}; }
    static LayerDesc maxpool(std::size_t window = 2) { return {LayerKind::MaxPool, 0, 0, window}; }
    static LayerDesc relu() { return {LayerKind::ReLU, 0, 0, 0}; }
    static LayerDesc flatten() { return {LayerKind::Flatten, 0, 0, 0}; }

    bool parameterized() const { return kind == LayerKind::Dense || kind == LayerKind::Conv2D; }

    friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

struct ModelSpec {
    Shape input_shape;  // (features) or (channels, height, width)
    std::size_t num_classes = 0;
    std::vector<LayerDesc> layers;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Expands a compact architecture string such as "C1(8)-C2(32)-MaxPool(2)-F1(256)"
// into a full layer list: every C/F gets a trailing ReLU, a Flatten is inserted
// before the first F on image inputs, and a Dense(num_classes) classifier is
// appended.
ModelSpec parse_architecture(std::string_view arch, Shape input_shape, std::size_t num_classes);

// Lossless text form used in checkpoints and logs, e.g.
// "input=3x8x8;classes=10;layers=conv(3,8),relu,maxpool(2),flatten,dense(512,10)".
std::string serialize_spec(const ModelSpec& spec);
ModelSpec deserialize_spec(std::string_view text);

struct LayerHandle {
    std::size_t index = 0;  // position in ModelSpec::layers
    LayerKind kind = LayerKind::Dense;
    std::size_t width = 0;  // units (Dense) or channels (Conv2D)

    friend bool operator==(const LayerHandle&, const LayerHandle&) = default;
};

struct ResolvedLayer {
    LayerDesc desc;
    Shape in_shape;   // per example
    Shape out_shape;  // per example
    int weight_segment = -1;
    int bias_segment = -1;
};

// A validated ModelSpec with per-layer shapes and the parameter layout.
class Model {
public:
    const ModelSpec& spec() const noexcept { return spec_; }
    const std::vector<ResolvedLayer>& layers() const noexcept { return layers_; }
    const ResolvedLayer& layer(std::size_t i) const { return layers_.at(i); }
    const std::shared_ptr<const ParamLayout>& layout() const noexcept { return layout_; }
    const Shape& input_shape() const noexcept { return spec_.input_shape; }
    std::size_t input_size() const { return shape_size(spec_.input_shape); }
    std::size_t num_classes() const noexcept { return spec_.num_classes; }
    std::size_t num_parameters() const { return layout_->total_size(); }

    // Indices of Dense/Conv2D layers in order.
    const std::vector<std::size_t>& param_layers() const noexcept { return param_layers_; }

    LayerHandle handle(std::size_t layer_index) const;
    // Handle of the `ordinal`-th parameterized layer (0 = first).
    LayerHandle param_layer(std::size_t ordinal) const;
    // Next parameterized layer after `layer_index`, if any.
    std::optional<std::size_t> next_param_layer(std::size_t layer_index) const;

    friend Model compile(ModelSpec spec);

private:
    ModelSpec spec_;
    std::vector<ResolvedLayer> layers_;
    std::vector<std::size_t> param_layers_;
    std::shared_ptr<const ParamLayout> layout_;
};

// Validates shapes and resolves the parameter layout. Throws ShapeError
// naming the first incompatible pair of layers.
Model compile(ModelSpec spec);

// Kaiming-uniform weights (bound sqrt(6 / fan_in)) and PyTorch-style biases
// (bound 1 / sqrt(fan_in)), deterministic in `seed`.
template <class T>
BasicParameterVector<T> init_parameters(const Model& model, std::uint64_t seed);

std::pair<Model, ParameterVector> build(const ModelSpec& spec, std::uint64_t init_seed);

std::size_t fan_in(const ResolvedLayer& layer);

}  // namespace mfx
