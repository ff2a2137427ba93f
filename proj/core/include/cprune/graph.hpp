#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cprune/ops.hpp"
#include "cprune/rng.hpp"
#include "cprune/tensor.hpp"

namespace cprune {

enum class LayerKind { Conv, Dense, ReLU, MaxPool, AvgPool, Flatten, ResidualAdd };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// Static description of one layer. Geometry fields apply per kind:
///   Conv:    kernel, stride, padding, in_channels (M), out_channels (N)
///   Dense:   in_channels (input features), out_channels (units)
///   Pools:   kernel (window), stride; Valid geometry only
///   ReLU / Flatten / ResidualAdd: no geometry
struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::ReLU;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    Padding padding = Padding::Valid;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
};

struct LayerParams {
    Tensor weights;  // Conv: (d, d, M, N); Dense: (K, U)
    Tensor bias;     // (N) / (U)

    bool operator==(const LayerParams&) const = default;
};

/// A small CNN: layers in topological order with explicit predecessor lists.
/// A layer with no predecessors reads the model input; exactly one such layer
/// may exist, and exactly one layer's output is consumed by nobody (the
/// logits). ResidualAdd joins exactly two branches of identical shape.
struct ModelGraph {
    std::vector<std::size_t> input_shape;    // (H, W, M)
    std::vector<LayerSpec> layers;
    std::vector<std::vector<int>> preds;     // indices into layers; preds[i][k] < i
    std::map<std::string, LayerParams> params;

    int layer_index(const std::string& name) const;
    const LayerSpec& layer(const std::string& name) const;

    /// Appends a layer wired to the named predecessors (empty = model input).
    void add_layer(LayerSpec spec, const std::vector<std::string>& pred_names = {});
};

/// Checks every structural invariant (unique names, single input/output,
/// DAG order, channel agreement, residual branch shapes). Throws ShapeError
/// or DomainError naming the offending layer.
void validate_model(const ModelGraph& model);

/// Output shape of every layer, index-aligned with model.layers.
std::vector<std::vector<std::size_t>> infer_shapes(const ModelGraph& model);

struct ForwardResult {
    Tensor logits;
    std::vector<Tensor> activations;  // per-layer outputs; filled when recording
};

/// Runs the graph on one sample. With record=true every layer's output is
/// retained (post-activation, as needed by activation statistics).
ForwardResult forward(const ModelGraph& model, const Tensor& input, bool record = false);

struct BackwardResult {
    double loss = 0.0;
    std::map<std::string, LayerParams> grads;  // same keys/shapes as model.params
};

/// Cross-entropy loss at the logits plus gradients for every parameterised
/// layer, by backpropagation through the graph.
BackwardResult backward(const ModelGraph& model, const Tensor& input, int label);

struct LayerCost {
    std::string name;
    std::uint64_t params = 0;
    std::uint64_t macs = 0;  // multiply-accumulates for one input sample
};

struct CostReport {
    std::vector<LayerCost> per_layer;
    std::uint64_t total_params = 0;
    std::uint64_t total_macs = 0;
};

/// Parameter and MAC counts. Conv: params = d*d*M*N + N, MACs = H'*W'*d*d*M*N.
/// Dense: params = K*U + U, MACs = K*U. Other kinds cost zero.
CostReport count_costs(const ModelGraph& model);

/// Fills params with fan-in-scaled Gaussian weights (std = sqrt(2 / fan_in))
/// and zero biases, drawing layers in topological order.
void init_params(ModelGraph& model, Rng& rng);

/// Conv layers in topological order; the unit of pruning.
std::vector<std::string> prunable_layers(const ModelGraph& model);

/// Groups of conv layers whose output channel spaces are tied together by a
/// ResidualAdd join (they must be pruned with identical index sets). Only
/// groups with more than one member are returned.
std::vector<std::vector<std::string>> residual_groups(const ModelGraph& model);

}  // namespace cprune
