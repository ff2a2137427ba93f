#include "cprune/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cprune/errors.hpp"

namespace cprune {

const char* to_string(Padding p) {
    return p == Padding::Valid ? "valid" : "same";
}

ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel,
                           std::size_t stride, Padding padding) {
    if (kernel == 0 || stride == 0) {
        throw DomainError("conv geometry: kernel and stride must be positive");
    }
    ConvGeometry g;
    if (padding == Padding::Valid) {
        if (in_h < kernel || in_w < kernel) {
            throw ShapeError("conv geometry: kernel " + std::to_string(kernel) +
                             " exceeds input extent " + std::to_string(in_h) + "x" +
                             std::to_string(in_w));
        }
        g.out_h = (in_h - kernel) / stride + 1;
        g.out_w = (in_w - kernel) / stride + 1;
        g.pad_top = 0;
        g.pad_left = 0;
    } else {
        g.out_h = (in_h + stride - 1) / stride;
        g.out_w = (in_w + stride - 1) / stride;
        const long pad_h =
            std::max<long>(0, static_cast<long>((g.out_h - 1) * stride + kernel) -
                                  static_cast<long>(in_h));
        const long pad_w =
            std::max<long>(0, static_cast<long>((g.out_w - 1) * stride + kernel) -
                                  static_cast<long>(in_w));
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    }
    return g;
}

namespace {

template <typename T>
void check_conv_shapes(const TensorT<T>& input, const TensorT<T>& filters,
                       const TensorT<T>* bias) {
    if (input.rank() != 3) {
        throw ShapeError("conv2d: input must be rank 3 (H, W, M), got " +
                         shape_str(input.shape()));
    }
    if (filters.rank() != 4) {
        throw ShapeError("conv2d: filters must be rank 4 (d, d, M, N), got " +
                         shape_str(filters.shape()));
    }
    if (filters.dim(0) != filters.dim(1)) {
        throw ShapeError("conv2d: non-square kernel " + shape_str(filters.shape()));
    }
    if (filters.dim(2) != input.dim(2)) {
        throw ShapeError("conv2d: input channels " + std::to_string(input.dim(2)) +
                         " do not match filter channels " + std::to_string(filters.dim(2)));
    }
    if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != filters.dim(3))) {
        throw ShapeError("conv2d: bias must be rank 1 of length " +
                         std::to_string(filters.dim(3)) + ", got " + shape_str(bias->shape()));
    }
}

}  // namespace

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& filters,
                          const TensorT<T>& bias, std::size_t stride, Padding padding) {
    check_conv_shapes(input, filters, &bias);
    check_finite(input, "conv2d_forward input");
    check_finite(filters, "conv2d_forward filters");
    check_finite(bias, "conv2d_forward bias");

    const std::size_t in_h = input.dim(0), in_w = input.dim(1), channels = input.dim(2);
    const std::size_t kernel = filters.dim(0), n_filters = filters.dim(3);
    const ConvGeometry g = conv_geometry(in_h, in_w, kernel, stride, padding);

    TensorT<T> out({g.out_h, g.out_w, n_filters});
    const T* in = input.data();
    const T* flt = filters.data();
    T* dst = out.data();

    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            T* acc = dst + (oh * g.out_w + ow) * n_filters;
            for (std::size_t n = 0; n < n_filters; ++n) acc[n] = bias[n];
            const long base_h = static_cast<long>(oh * stride) - g.pad_top;
            const long base_w = static_cast<long>(ow * stride) - g.pad_left;
            for (std::size_t kh = 0; kh < kernel; ++kh) {
                const long ih = base_h + static_cast<long>(kh);
                if (ih < 0 || ih >= static_cast<long>(in_h)) continue;
                for (std::size_t kw = 0; kw < kernel; ++kw) {
                    const long iw = base_w + static_cast<long>(kw);
                    if (iw < 0 || iw >= static_cast<long>(in_w)) continue;
                    const T* in_px = in + (static_cast<std::size_t>(ih) * in_w +
                                           static_cast<std::size_t>(iw)) *
                                              channels;
                    const T* f_px = flt + (kh * kernel + kw) * channels * n_filters;
                    for (std::size_t m = 0; m < channels; ++m) {
                        const T v = in_px[m];
                        const T* f_row = f_px + m * n_filters;
                        for (std::size_t n = 0; n < n_filters; ++n) acc[n] += v * f_row[n];
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> conv2d_oracle(const TensorT<T>& input, const TensorT<T>& filters,
                         const TensorT<T>& bias, std::size_t stride, Padding padding) {
    check_conv_shapes(input, filters, &bias);
    check_finite(input, "conv2d_oracle input");
    check_finite(filters, "conv2d_oracle filters");
    check_finite(bias, "conv2d_oracle bias");

    const std::size_t in_h = input.dim(0), in_w = input.dim(1), channels = input.dim(2);
    const std::size_t kernel = filters.dim(0), n_filters = filters.dim(3);
    const ConvGeometry g = conv_geometry(in_h, in_w, kernel, stride, padding);

    TensorT<T> out({g.out_h, g.out_w, n_filters});
    // Output channel j = bias[j] + sum over channels m of the 2-D correlation
    // of input channel m with kernel slice (.,.,m,j). Padded positions read 0.
    for (std::size_t j = 0; j < n_filters; ++j) {
        for (std::size_t m = 0; m < channels; ++m) {
            for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                    T acc = 0;
                    for (std::size_t kh = 0; kh < kernel; ++kh) {
                        for (std::size_t kw = 0; kw < kernel; ++kw) {
                            const long ih =
                                static_cast<long>(oh * stride + kh) - g.pad_top;
                            const long iw =
                                static_cast<long>(ow * stride + kw) - g.pad_left;
                            T pixel = 0;
                            if (ih >= 0 && ih < static_cast<long>(in_h) && iw >= 0 &&
                                iw < static_cast<long>(in_w)) {
                                pixel = input.at({static_cast<std::size_t>(ih),
                                                  static_cast<std::size_t>(iw), m});
                            }
                            acc += pixel * filters.at({kh, kw, m, j});
                        }
                    }
                    out.at({oh, ow, j}) += acc;
                }
            }
        }
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                out.at({oh, ow, j}) += bias[j];
            }
        }
    }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& filters,
                             const TensorT<T>& grad_output, std::size_t stride,
                             Padding padding) {
    check_conv_shapes(input, filters, nullptr);
    check_finite(input, "conv2d_backward input");
    check_finite(filters, "conv2d_backward filters");
    check_finite(grad_output, "conv2d_backward grad_output");

    const std::size_t in_h = input.dim(0), in_w = input.dim(1), channels = input.dim(2);
    const std::size_t kernel = filters.dim(0), n_filters = filters.dim(3);
    const ConvGeometry g = conv_geometry(in_h, in_w, kernel, stride, padding);

    if (grad_output.rank() != 3 || grad_output.dim(0) != g.out_h ||
        grad_output.dim(1) != g.out_w || grad_output.dim(2) != n_filters) {
        throw ShapeError("conv2d_backward: grad_output shape " +
                         shape_str(grad_output.shape()) + " does not match output (" +
                         std::to_string(g.out_h) + ", " + std::to_string(g.out_w) + ", " +
                         std::to_string(n_filters) + ")");
    }

    ConvGrads<T> grads{TensorT<T>(input.shape()), TensorT<T>(filters.shape()),
                       TensorT<T>({n_filters})};
    const T* in = input.data();
    const T* flt = filters.data();
    const T* gout = grad_output.data();
    T* gin = grads.input.data();
    T* gflt = grads.filters.data();
    T* gbias = grads.bias.data();

    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const T* go_px = gout + (oh * g.out_w + ow) * n_filters;
            for (std::size_t n = 0; n < n_filters; ++n) gbias[n] += go_px[n];
            const long base_h = static_cast<long>(oh * stride) - g.pad_top;
            const long base_w = static_cast<long>(ow * stride) - g.pad_left;
            for (std::size_t kh = 0; kh < kernel; ++kh) {
                const long ih = base_h + static_cast<long>(kh);
                if (ih < 0 || ih >= static_cast<long>(in_h)) continue;
                for (std::size_t kw = 0; kw < kernel; ++kw) {
                    const long iw = base_w + static_cast<long>(kw);
                    if (iw < 0 || iw >= static_cast<long>(in_w)) continue;
                    const std::size_t in_off = (static_cast<std::size_t>(ih) * in_w +
                                                static_cast<std::size_t>(iw)) *
                                               channels;
                    const std::size_t f_off = (kh * kernel + kw) * channels * n_filters;
                    for (std::size_t m = 0; m < channels; ++m) {
                        const T in_v = in[in_off + m];
                        const T* f_row = flt + f_off + m * n_filters;
                        T* gf_row = gflt + f_off + m * n_filters;
                        T acc_in = 0;
                        for (std::size_t n = 0; n < n_filters; ++n) {
                            const T go = go_px[n];
                            gf_row[n] += in_v * go;
                            acc_in += f_row[n] * go;
                        }
                        gin[in_off + m] += acc_in;
                    }
                }
            }
        }
    }
    return grads;
}

template <typename T>
TensorT<T> dense_forward(const TensorT<T>& input, const TensorT<T>& weights,
                         const TensorT<T>& bias) {
    if (input.rank() != 1 || weights.rank() != 2 || bias.rank() != 1) {
        throw ShapeError("dense: expected input (K), weights (K, U), bias (U), got " +
                         shape_str(input.shape()) + ", " + shape_str(weights.shape()) + ", " +
                         shape_str(bias.shape()));
    }
    const std::size_t in_n = input.dim(0), out_n = weights.dim(1);
    if (weights.dim(0) != in_n || bias.dim(0) != out_n) {
        throw ShapeError("dense: weights " + shape_str(weights.shape()) +
                         " incompatible with input " + shape_str(input.shape()) + " / bias " +
                         shape_str(bias.shape()));
    }
    check_finite(input, "dense_forward input");
    check_finite(weights, "dense_forward weights");

    TensorT<T> out({out_n});
    for (std::size_t u = 0; u < out_n; ++u) out[u] = bias[u];
    const T* w = weights.data();
    for (std::size_t k = 0; k < in_n; ++k) {
        const T v = input[k];
        const T* row = w + k * out_n;
        for (std::size_t u = 0; u < out_n; ++u) out[u] += v * row[u];
    }
    return out;
}

template <typename T>
DenseGrads<T> dense_backward(const TensorT<T>& input, const TensorT<T>& weights,
                             const TensorT<T>& grad_output) {
    if (input.rank() != 1 || weights.rank() != 2 || weights.dim(0) != input.dim(0)) {
        throw ShapeError("dense_backward: input " + shape_str(input.shape()) +
                         " incompatible with weights " + shape_str(weights.shape()));
    }
    if (grad_output.rank() != 1 || grad_output.dim(0) != weights.dim(1)) {
        throw ShapeError("dense_backward: grad_output " + shape_str(grad_output.shape()) +
                         " does not match weights " + shape_str(weights.shape()));
    }
    const std::size_t in_n = input.dim(0), out_n = weights.dim(1);
    DenseGrads<T> grads{TensorT<T>({in_n}), TensorT<T>(weights.shape()), grad_output};
    const T* w = weights.data();
    T* gw = grads.weights.data();
    for (std::size_t k = 0; k < in_n; ++k) {
        const T v = input[k];
        const T* w_row = w + k * out_n;
        T* gw_row = gw + k * out_n;
        T acc = 0;
        for (std::size_t u = 0; u < out_n; ++u) {
            const T go = grad_output[u];
            gw_row[u] = v * go;
            acc += w_row[u] * go;
        }
        grads.input[k] = acc;
    }
    return grads;
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& input) {
    TensorT<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        out[i] = input[i] > T(0) ? input[i] : T(0);
    }
    return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& input, const TensorT<T>& grad_output) {
    check_same_shape(input, grad_output, "relu_backward");
    TensorT<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        out[i] = input[i] > T(0) ? grad_output[i] : T(0);
    }
    return out;
}

namespace {

template <typename T>
void check_pool_shapes(const TensorT<T>& input, std::size_t window, std::size_t stride) {
    if (input.rank() != 3) {
        throw ShapeError("pool: input must be rank 3 (H, W, M), got " +
                         shape_str(input.shape()));
    }
    if (window == 0 || stride == 0) {
        throw DomainError("pool: window and stride must be positive");
    }
    if (input.dim(0) < window || input.dim(1) < window) {
        throw ShapeError("pool: window " + std::to_string(window) + " exceeds input " +
                         shape_str(input.shape()));
    }
}

}  // namespace

template <typename T>
TensorT<T> maxpool_forward(const TensorT<T>& input, std::size_t window, std::size_t stride) {
    check_pool_shapes(input, window, stride);
    const std::size_t in_h = input.dim(0), in_w = input.dim(1), channels = input.dim(2);
    const std::size_t out_h = (in_h - window) / stride + 1;
    const std::size_t out_w = (in_w - window) / stride + 1;
    TensorT<T> out({out_h, out_w, channels});
    for (std::size_t oh = 0; oh < out_h; ++oh) {
        for (std::size_t ow = 0; ow < out_w; ++ow) {
            for (std::size_t m = 0; m < channels; ++m) {
                T best = input.at({oh * stride, ow * stride, m});
                for (std::size_t kh = 0; kh < window; ++kh) {
                    for (std::size_t kw = 0; kw < window; ++kw) {
                        const T v = input.at({oh * stride + kh, ow * stride + kw, m});
                        if (v > best) best = v;
                    }
                }
                out.at({oh, ow, m}) = best;
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> maxpool_backward(const TensorT<T>& input, const TensorT<T>& grad_output,
                            std::size_t window, std::size_t stride) {
    check_pool_shapes(input, window, stride);
    const std::size_t in_h = input.dim(0), in_w = input.dim(1), channels = input.dim(2);
    const std::size_t out_h = (in_h - window) / stride + 1;
    const std::size_t out_w = (in_w - window) / stride + 1;
    if (grad_output.shape() != std::vector<std::size_t>{out_h, out_w, channels}) {
        throw ShapeError("maxpool_backward: grad_output shape " +
                         shape_str(grad_output.shape()) + " does not match pooled output");
    }
    TensorT<T> gin(input.shape());
    for (std::size_t oh = 0; oh < out_h; ++oh) {
        for (std::size_t ow = 0; ow < out_w; ++ow) {
            for (std::size_t m = 0; m < channels; ++m) {
                std::size_t best_h = oh * stride, best_w = ow * stride;
                T best = input.at({best_h, best_w, m});
                for (std::size_t kh = 0; kh < window; ++kh) {
                    for (std::size_t kw = 0; kw < window; ++kw) {
                        const std::size_t ih = oh * stride + kh, iw = ow * stride + kw;
                        const T v = input.at({ih, iw, m});
                        if (v > best) {
                            best = v;
                            best_h = ih;
                            best_w = iw;
                        }
                    }
                }
                gin.at({best_h, best_w, m}) += grad_output.at({oh, ow, m});
            }
        }
    }
    return gin;
}

template <typename T>
TensorT<T> avgpool_forward(const TensorT<T>& input, std::size_t window, std::size_t stride) {
    check_pool_shapes(input, window, stride);
    const std::size_t in_h = input.dim(0), in_w = input.dim(1), channels = input.dim(2);
    const std::size_t out_h = (in_h - window) / stride + 1;
    const std::size_t out_w = (in_w - window) / stride + 1;
    const T inv = T(1) / static_cast<T>(window * window);
    TensorT<T> out({out_h, out_w, channels});
    for (std::size_t oh = 0; oh < out_h; ++oh) {
        for (std::size_t ow = 0; ow < out_w; ++ow) {
            for (std::size_t m = 0; m < channels; ++m) {
                T acc = 0;
                for (std::size_t kh = 0; kh < window; ++kh) {
                    for (std::size_t kw = 0; kw < window; ++kw) {
                        acc += input.at({oh * stride + kh, ow * stride + kw, m});
                    }
                }
                out.at({oh, ow, m}) = acc * inv;
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> avgpool_backward(const TensorT<T>& input, const TensorT<T>& grad_output,
                            std::size_t window, std::size_t stride) {
    check_pool_shapes(input, window, stride);
    const std::size_t in_h = input.dim(0), in_w = input.dim(1), channels = input.dim(2);
    const std::size_t out_h = (in_h - window) / stride + 1;
    const std::size_t out_w = (in_w - window) / stride + 1;
    if (grad_output.shape() != std::vector<std::size_t>{out_h, out_w, channels}) {
        throw ShapeError("avgpool_backward: grad_output shape " +
                         shape_str(grad_output.shape()) + " does not match pooled output");
    }
    const T inv = T(1) / static_cast<T>(window * window);
    TensorT<T> gin(input.shape());
    for (std::size_t oh = 0; oh < out_h; ++oh) {
        for (std::size_t ow = 0; ow < out_w; ++ow) {
            for (std::size_t m = 0; m < channels; ++m) {
                const T g = grad_output.at({oh, ow, m}) * inv;
                for (std::size_t kh = 0; kh < window; ++kh) {
                    for (std::size_t kw = 0; kw < window; ++kw) {
                        gin.at({oh * stride + kh, ow * stride + kw, m}) += g;
                    }
                }
            }
        }
    }
    return gin;
}

template <typename T>
std::pair<T, TensorT<T>> softmax_cross_entropy(const TensorT<T>& logits, int label) {
    if (logits.rank() != 1 || logits.size() == 0) {
        throw ShapeError("softmax_cross_entropy: logits must be non-empty rank 1, got " +
                         shape_str(logits.shape()));
    }
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
        throw DomainError("softmax_cross_entropy: label " + std::to_string(label) +
                          " out of range for " + std::to_string(logits.size()) + " classes");
    }
    check_finite(logits, "softmax_cross_entropy logits");

    T max_logit = logits[0];
    for (std::size_t i = 1; i < logits.size(); ++i) max_logit = std::max(max_logit, logits[i]);
    T sum_exp = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        sum_exp += std::exp(logits[i] - max_logit);
    }
    const T log_sum_exp = max_logit + std::log(sum_exp);
    const T loss = log_sum_exp - logits[static_cast<std::size_t>(label)];

    TensorT<T> grad(logits.shape());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        grad[i] = std::exp(logits[i] - log_sum_exp);
    }
    grad[static_cast<std::size_t>(label)] -= T(1);
    return {loss, std::move(grad)};
}

double grad_check(const std::function<double(const Tensor&)>& f, const Tensor& analytic_grad,
                  const Tensor& point, double step) {
    if (step == 0.0 || !std::isfinite(step)) {
        throw DomainError("grad_check: step must be a nonzero finite value");
    }
    check_same_shape(analytic_grad, point, "grad_check");

    Tensor probe = point;
    double worst = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + step;
        const double f_plus = f(probe);
        probe[i] = saved - step;
        const double f_minus = f(probe);
        probe[i] = saved;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
            throw NumericError("grad_check: f produced a non-finite value");
        }
        const double fd = (f_plus - f_minus) / (2.0 * step);
        const double denom = std::max(1.0, std::abs(analytic_grad[i]));
        worst = std::max(worst, std::abs(analytic_grad[i] - fd) / denom);
    }
    return worst;
}

// The graph, trainer and pruner operate on double tensors; float is provided
// for the arithmetic primitives with relaxed tolerances.
#define CPRUNE_INSTANTIATE_OPS(T)                                                          \
    template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&,            \
                                          const TensorT<T>&, std::size_t, Padding);        \
    template TensorT<T> conv2d_oracle<T>(const TensorT<T>&, const TensorT<T>&,             \
                                         const TensorT<T>&, std::size_t, Padding);         \
    template ConvGrads<T> conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,         \
                                             const TensorT<T>&, std::size_t, Padding);     \
    template TensorT<T> dense_forward<T>(const TensorT<T>&, const TensorT<T>&,             \
                                         const TensorT<T>&);                               \
    template DenseGrads<T> dense_backward<T>(const TensorT<T>&, const TensorT<T>&,         \
                                             const TensorT<T>&);                           \
    template TensorT<T> relu_forward<T>(const TensorT<T>&);                                \
    template TensorT<T> relu_backward<T>(const TensorT<T>&, const TensorT<T>&);            \
    template TensorT<T> maxpool_forward<T>(const TensorT<T>&, std::size_t, std::size_t);   \
    template TensorT<T> maxpool_backward<T>(const TensorT<T>&, const TensorT<T>&,          \
                                            std::size_t, std::size_t);                     \
    template TensorT<T> avgpool_forward<T>(const TensorT<T>&, std::size_t, std::size_t);   \
    template TensorT<T> avgpool_backward<T>(const TensorT<T>&, const TensorT<T>&,          \
                                            std::size_t, std::size_t);                     \
    template std::pair<T, TensorT<T>> softmax_cross_entropy<T>(const TensorT<T>&, int);

CPRUNE_INSTANTIATE_OPS(double)
CPRUNE_INSTANTIATE_OPS(float)

#undef CPRUNE_INSTANTIATE_OPS

}  // namespace cprune
