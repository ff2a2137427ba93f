#include "cprune/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cprune/errors.hpp"

namespace cprune {

const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Dense: return "dense";
        case LayerKind::ReLU: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::AvgPool: return "avgpool";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::ResidualAdd: return "residual_add";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
    if (name == "conv") return LayerKind::Conv;
    if (name == "dense") return LayerKind::Dense;
    if (name == "relu") return LayerKind::ReLU;
    if (name == "maxpool") return LayerKind::MaxPool;
    if (name == "avgpool") return LayerKind::AvgPool;
    if (name == "flatten") return LayerKind::Flatten;
    if (name == "residual_add") return LayerKind::ResidualAdd;
    throw DomainError("unknown layer kind '" + name + "'");
}

int ModelGraph::layer_index(const std::string& name) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

const LayerSpec& ModelGraph::layer(const std::string& name) const {
    const int idx = layer_index(name);
    if (idx < 0) throw DomainError("no layer named '" + name + "'");
    return layers[static_cast<std::size_t>(idx)];
}

void ModelGraph::add_layer(LayerSpec spec, const std::vector<std::string>& pred_names) {
    std::vector<int> p;
    for (const std::string& pred : pred_names) {
        const int idx = layer_index(pred);
        if (idx < 0) {
            throw DomainError("layer '" + spec.name + "': unknown predecessor '" + pred + "'");
        }
        p.push_back(idx);
    }
    layers.push_back(std::move(spec));
    preds.push_back(std::move(p));
}

namespace {

std::size_t expected_pred_count(LayerKind kind) {
    return kind == LayerKind::ResidualAdd ? 2 : 1;
}

int terminal_layer(const ModelGraph& model) {
    std::vector<bool> consumed(model.layers.size(), false);
    for (const auto& plist : model.preds) {
        for (int p : plist) consumed[static_cast<std::size_t>(p)] = true;
    }
    int terminal = -1;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (!consumed[i]) {
            if (terminal >= 0) {
                throw DomainError("graph has multiple outputs: '" +
                                  model.layers[static_cast<std::size_t>(terminal)].name +
                                  "' and '" + model.layers[i].name + "'");
            }
            terminal = static_cast<int>(i);
        }
    }
    if (terminal < 0) throw DomainError("graph has no output layer");
    return terminal;
}

}  // namespace

std::vector<std::vector<std::size_t>> infer_shapes(const ModelGraph& model) {
    std::vector<std::vector<std::size_t>> shapes(model.layers.size());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        const std::vector<std::size_t>& in_shape =
            model.preds[i].empty() ? model.input_shape
                                   : shapes[static_cast<std::size_t>(model.preds[i][0])];
        switch (spec.kind) {
            case LayerKind::Conv: {
                if (in_shape.size() != 3) {
                    throw ShapeError("layer '" + spec.name + "': conv input must be rank 3, got " +
                                     shape_str(in_shape));
                }
                if (in_shape[2] != spec.in_channels) {
                    throw ShapeError("layer '" + spec.name + "': expects " +
                                     std::to_string(spec.in_channels) + " input channels, got " +
                                     std::to_string(in_shape[2]));
                }
                const ConvGeometry g =
                    conv_geometry(in_shape[0], in_shape[1], spec.kernel, spec.stride, spec.padding);
                shapes[i] = {g.out_h, g.out_w, spec.out_channels};
                break;
            }
            case LayerKind::Dense: {
                if (in_shape.size() != 1) {
                    throw ShapeError("layer '" + spec.name +
                                     "': dense input must be rank 1, got " + shape_str(in_shape));
                }
                if (in_shape[0] != spec.in_channels) {
                    throw ShapeError("layer '" + spec.name + "': expects " +
                                     std::to_string(spec.in_channels) + " input features, got " +
                                     std::to_string(in_shape[0]));
                }
                shapes[i] = {spec.out_channels};
                break;
            }
            case LayerKind::ReLU:
                shapes[i] = in_shape;
                break;
            case LayerKind::MaxPool:
            case LayerKind::AvgPool: {
                if (in_shape.size() != 3) {
                    throw ShapeError("layer '" + spec.name + "': pool input must be rank 3, got " +
                                     shape_str(in_shape));
                }
                if (spec.padding != Padding::Valid) {
                    throw DomainError("layer '" + spec.name + "': pooling supports Valid padding only");
                }
                if (in_shape[0] < spec.kernel || in_shape[1] < spec.kernel) {
                    throw ShapeError("layer '" + spec.name + "': pool window " +
                                     std::to_string(spec.kernel) + " exceeds input " +
                                     shape_str(in_shape));
                }
                shapes[i] = {(in_shape[0] - spec.kernel) / spec.stride + 1,
                             (in_shape[1] - spec.kernel) / spec.stride + 1, in_shape[2]};
                break;
            }
            case LayerKind::Flatten:
                shapes[i] = {shape_product(in_shape)};
                break;
            case LayerKind::ResidualAdd: {
                const auto& a = shapes[static_cast<std::size_t>(model.preds[i][0])];
                const auto& b = shapes[static_cast<std::size_t>(model.preds[i][1])];
                if (a != b) {
                    throw ShapeError("layer '" + spec.name + "': residual branches disagree, " +
                                     shape_str(a) + " vs " + shape_str(b));
                }
                shapes[i] = a;
                break;
            }
        }
    }
    return shapes;
}

void validate_model(const ModelGraph& model) {
    if (model.layers.size() != model.preds.size()) {
        throw DomainError("graph: layers and predecessor lists differ in length");
    }
    if (model.layers.empty()) throw DomainError("graph has no layers");
    if (model.input_shape.empty()) throw DomainError("graph has no input shape");

    std::set<std::string> names;
    std::size_t input_layers = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        if (spec.name.empty()) throw DomainError("layer " + std::to_string(i) + " has no name");
        if (!names.insert(spec.name).second) {
            throw DomainError("duplicate layer name '" + spec.name + "'");
        }
        for (int p : model.preds[i]) {
            if (p < 0 || static_cast<std::size_t>(p) >= i) {
                throw DomainError("layer '" + spec.name +
                                  "': predecessor index out of topological order");
            }
        }
        if (model.preds[i].empty()) {
            ++input_layers;
        } else if (model.preds[i].size() != expected_pred_count(spec.kind)) {
            throw DomainError("layer '" + spec.name + "': expected " +
                              std::to_string(expected_pred_count(spec.kind)) +
                              " predecessor(s), got " + std::to_string(model.preds[i].size()));
        }
        switch (spec.kind) {
            case LayerKind::Conv:
                if (spec.kernel < 1 || spec.stride < 1 || spec.in_channels < 1 ||
                    spec.out_channels < 1) {
                    throw DomainError("layer '" + spec.name + "': invalid conv geometry");
                }
                break;
            case LayerKind::Dense:
                if (spec.in_channels < 1 || spec.out_channels < 1) {
                    throw DomainError("layer '" + spec.name + "': invalid dense geometry");
                }
                break;
            case LayerKind::MaxPool:
            case LayerKind::AvgPool:
                if (spec.kernel < 1 || spec.stride < 1) {
                    throw DomainError("layer '" + spec.name + "': invalid pool geometry");
                }
                break;
            case LayerKind::ResidualAdd:
                for (int p : model.preds[i]) {
                    if (model.layers[static_cast<std::size_t>(p)].kind != LayerKind::Conv) {
                        throw DomainError("layer '" + spec.name +
                                          "': residual branches must end in conv layers");
                    }
                }
                break;
            default:
                break;
        }
    }
    if (input_layers != 1) {
        throw DomainError("graph must have exactly one input layer, found " +
                          std::to_string(input_layers));
    }
    terminal_layer(model);

    // Shape inference performs the channel-agreement and residual-branch checks.
    infer_shapes(model);

    for (const auto& spec : model.layers) {
        if (spec.kind != LayerKind::Conv && spec.kind != LayerKind::Dense) continue;
        const auto it = model.params.find(spec.name);
        if (it == model.params.end()) {
            throw DomainError("layer '" + spec.name + "': missing parameters");
        }
        const std::vector<std::size_t> expect_w =
            spec.kind == LayerKind::Conv
                ? std::vector<std::size_t>{spec.kernel, spec.kernel, spec.in_channels,
                                           spec.out_channels}
                : std::vector<std::size_t>{spec.in_channels, spec.out_channels};
        if (it->second.weights.shape() != expect_w) {
            throw ShapeError("layer '" + spec.name + "': weights shape " +
                             shape_str(it->second.weights.shape()) + ", expected " +
                             shape_str(expect_w));
        }
        if (it->second.bias.shape() != std::vector<std::size_t>{spec.out_channels}) {
            throw ShapeError("layer '" + spec.name + "': bias shape " +
                             shape_str(it->second.bias.shape()) + ", expected (" +
                             std::to_string(spec.out_channels) + ")");
        }
    }
    for (const auto& [name, unused] : model.params) {
        (void)unused;
        if (model.layer_index(name) < 0) {
            throw DomainError("parameters for unknown layer '" + name + "'");
        }
    }
}

namespace {

Tensor apply_layer(const ModelGraph& model, std::size_t i, const Tensor& in,
                   const Tensor* second_in) {
    const LayerSpec& spec = model.layers[i];
    switch (spec.kind) {
        case LayerKind::Conv: {
            const LayerParams& p = model.params.at(spec.name);
            return conv2d_forward(in, p.weights, p.bias, spec.stride, spec.padding);
        }
        case LayerKind::Dense: {
            const LayerParams& p = model.params.at(spec.name);
            return dense_forward(in, p.weights, p.bias);
        }
        case LayerKind::ReLU:
            return relu_forward(in);
        case LayerKind::MaxPool:
            return maxpool_forward(in, spec.kernel, spec.stride);
        case LayerKind::AvgPool:
            return avgpool_forward(in, spec.kernel, spec.stride);
        case LayerKind::Flatten:
            return in.reshaped({in.size()});
        case LayerKind::ResidualAdd:
            return add(in, *second_in);
    }
    throw DomainError("layer '" + spec.name + "': unknown kind");
}

std::vector<Tensor> run_layers(const ModelGraph& model, const Tensor& input) {
    if (input.shape() != model.input_shape) {
        throw ShapeError("model input shape " + shape_str(input.shape()) +
                         " does not match declared " + shape_str(model.input_shape));
    }
    std::vector<Tensor> outs(model.layers.size());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const Tensor& in =
            model.preds[i].empty() ? input : outs[static_cast<std::size_t>(model.preds[i][0])];
        const Tensor* second =
            model.preds[i].size() > 1 ? &outs[static_cast<std::size_t>(model.preds[i][1])] : nullptr;
        try {
            outs[i] = apply_layer(model, i, in, second);
        } catch (const ShapeError& e) {
            throw ShapeError("layer '" + model.layers[i].name + "': " + e.what());
        }
    }
    return outs;
}

}  // namespace

ForwardResult forward(const ModelGraph& model, const Tensor& input, bool record) {
    std::vector<Tensor> outs = run_layers(model, input);
    const int terminal = terminal_layer(model);
    ForwardResult result;
    result.logits = outs[static_cast<std::size_t>(terminal)];
    if (result.logits.rank() != 1) {
        throw ShapeError("model output must be rank 1 logits, got " +
                         shape_str(result.logits.shape()));
    }
    if (record) result.activations = std::move(outs);
    return result;
}

BackwardResult backward(const ModelGraph& model, const Tensor& input, int label) {
    std::vector<Tensor> outs = run_layers(model, input);
    const int terminal = terminal_layer(model);
    const Tensor& logits = outs[static_cast<std::size_t>(terminal)];
    if (logits.rank() != 1) {
        throw ShapeError("model output must be rank 1 logits, got " + shape_str(logits.shape()));
    }

    auto [loss, logits_grad] = softmax_cross_entropy(logits, label);

    std::vector<Tensor> out_grads(model.layers.size());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        out_grads[i] = Tensor(outs[i].shape());
    }
    out_grads[static_cast<std::size_t>(terminal)] = std::move(logits_grad);

    BackwardResult result;
    result.loss = loss;

    for (std::size_t ri = model.layers.size(); ri-- > 0;) {
        const LayerSpec& spec = model.layers[ri];
        const Tensor& gout = out_grads[ri];
        const Tensor& in =
            model.preds[ri].empty() ? input : outs[static_cast<std::size_t>(model.preds[ri][0])];
        Tensor gin;
        switch (spec.kind) {
            case LayerKind::Conv: {
                const LayerParams& p = model.params.at(spec.name);
                ConvGrads<double> g = conv2d_backward(in, p.weights, gout, spec.stride, spec.padding);
                result.grads[spec.name] = LayerParams{std::move(g.filters), std::move(g.bias)};
                gin = std::move(g.input);
                break;
            }
            case LayerKind::Dense: {
                const LayerParams& p = model.params.at(spec.name);
                DenseGrads<double> g = dense_backward(in, p.weights, gout);
                result.grads[spec.name] = LayerParams{std::move(g.weights), std::move(g.bias)};
                gin = std::move(g.input);
                break;
            }
            case LayerKind::ReLU:
                gin = relu_backward(in, gout);
                break;
            case LayerKind::MaxPool:
                gin = maxpool_backward(in, gout, spec.kernel, spec.stride);
                break;
            case LayerKind::AvgPool:
                gin = avgpool_backward(in, gout, spec.kernel, spec.stride);
                break;
            case LayerKind::Flatten:
                gin = gout.reshaped(in.shape());
                break;
            case LayerKind::ResidualAdd:
                // Addition: the gradient flows unchanged to both branches.
                add_inplace(out_grads[static_cast<std::size_t>(model.preds[ri][0])], gout);
                add_inplace(out_grads[static_cast<std::size_t>(model.preds[ri][1])], gout);
                continue;
        }
        if (!model.preds[ri].empty()) {
            add_inplace(out_grads[static_cast<std::size_t>(model.preds[ri][0])], gin);
        }
    }
    return result;
}

CostReport count_costs(const ModelGraph& model) {
    CostReport report;
    if (model.layers.empty()) return report;
    const auto shapes = infer_shapes(model);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        LayerCost cost;
        cost.name = spec.name;
        if (spec.kind == LayerKind::Conv) {
            const auto& out = shapes[i];
            const std::uint64_t kernel_area =
                static_cast<std::uint64_t>(spec.kernel) * spec.kernel;
            cost.params = kernel_area * spec.in_channels * spec.out_channels + spec.out_channels;
            cost.macs = static_cast<std::uint64_t>(out[0]) * out[1] * kernel_area *
                        spec.in_channels * spec.out_channels;
        } else if (spec.kind == LayerKind::Dense) {
            cost.params =
                static_cast<std::uint64_t>(spec.in_channels) * spec.out_channels + spec.out_channels;
            cost.macs = static_cast<std::uint64_t>(spec.in_channels) * spec.out_channels;
        }
        report.total_params += cost.params;
        report.total_macs += cost.macs;
        report.per_layer.push_back(std::move(cost));
    }
    return report;
}

void init_params(ModelGraph& model, Rng& rng) {
    for (const LayerSpec& spec : model.layers) {
        if (spec.kind != LayerKind::Conv && spec.kind != LayerKind::Dense) continue;
        const std::size_t fan_in = spec.kind == LayerKind::Conv
                                       ? spec.kernel * spec.kernel * spec.in_channels
                                       : spec.in_channels;
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        LayerParams p;
        p.weights = spec.kind == LayerKind::Conv
                        ? Tensor({spec.kernel, spec.kernel, spec.in_channels, spec.out_channels})
                        : Tensor({spec.in_channels, spec.out_channels});
        for (std::size_t i = 0; i < p.weights.size(); ++i) {
            p.weights[i] = stddev * rng.normal();
        }
        p.bias = Tensor({spec.out_channels});
        model.params[spec.name] = std::move(p);
    }
}

std::vector<std::string> prunable_layers(const ModelGraph& model) {
    const int terminal = terminal_layer(model);
    std::vector<std::string> result;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (model.layers[i].kind != LayerKind::Conv) continue;
        if (static_cast<int>(i) == terminal) continue;  // output layer is never pruned
        result.push_back(model.layers[i].name);
    }
    return result;
}

std::vector<std::vector<std::string>> residual_groups(const ModelGraph& model) {
    // Union-find over layer indices, joining the two producers of every
    // ResidualAdd.
    std::vector<int> parent(model.layers.size());
    for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
    std::function<int(int)> find = [&](int x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            x = parent[static_cast<std::size_t>(x)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
        }
        return x;
    };
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (model.layers[i].kind != LayerKind::ResidualAdd) continue;
        const int a = find(model.preds[i][0]);
        const int b = find(model.preds[i][1]);
        if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }
    std::map<int, std::vector<std::string>> buckets;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (model.layers[i].kind != LayerKind::Conv) continue;
        buckets[find(static_cast<int>(i))].push_back(model.layers[i].name);
    }
    std::vector<std::vector<std::string>> groups;
    for (auto& [root, names] : buckets) {
        (void)root;
        if (names.size() > 1) groups.push_back(std::move(names));
    }
    return groups;
}

}  // namespace cprune
