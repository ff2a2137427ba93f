#pragma once

#include <cstddef>
#include <functional>
#include <utility>

#include "cprune/tensor.hpp"

namespace cprune {

enum class Padding { Valid, Same };

const char* to_string(Padding p);

/// Spatial geometry of a convolution / pooling window sweep.
struct ConvGeometry {
    std::size_t out_h = 0;
    std::size_t out_w = 0;
    long pad_top = 0;
    long pad_left = 0;
};

/// Output dims for a kernel of size k swept with the given stride.
/// Valid: out = floor((in - k) / stride) + 1, requires in >= k.
/// Same:  out = ceil(in / stride), zero padding split top/left-light.
ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel,
                           std::size_t stride, Padding padding);

/// 2-D multi-channel cross-correlation.
///   input   (H, W, M)
///   filters (d, d, M, N)
///   bias    (N)
///   output  (H', W', N)
/// Output channel j is the sum over input channels of 2-D correlations of
/// channel m with kernel slice (.,.,m,j), plus bias[j]. No nonlinearity.
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& filters,
                          const TensorT<T>& bias, std::size_t stride, Padding padding);

/// Reference convolution: a literal transcription of the per-output-channel
/// channel-sum definition as six nested loops, with no reordering. Serves as
/// the independent ground truth for conv2d_forward.
template <typename T>
TensorT<T> conv2d_oracle(const TensorT<T>& input, const TensorT<T>& filters,
                         const TensorT<T>& bias, std::size_t stride, Padding padding);

template <typename T>
struct ConvGrads {
    TensorT<T> input;
    TensorT<T> filters;
    TensorT<T> bias;
};

/// Gradients of conv2d_forward with respect to input, filters and bias, given
/// the gradient of a scalar loss with respect to the output.
template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& filters,
                             const TensorT<T>& grad_output, std::size_t stride,
                             Padding padding);

/// Fully connected layer: out[u] = bias[u] + sum_k input[k] * weights[k, u].
///   input   (K)
///   weights (K, U)
///   bias    (U)
template <typename T>
TensorT<T> dense_forward(const TensorT<T>& input, const TensorT<T>& weights,
                         const TensorT<T>& bias);

template <typename T>
struct DenseGrads {
    TensorT<T> input;
    TensorT<T> weights;
    TensorT<T> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const TensorT<T>& input, const TensorT<T>& weights,
                             const TensorT<T>& grad_output);

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& input);

/// Gradient convention at exactly zero: passes nothing through.
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& input, const TensorT<T>& grad_output);

/// Per-channel max pooling over (window x window) patches, Valid geometry.
/// input (H, W, M) -> (H', W', M).
template <typename T>
TensorT<T> maxpool_forward(const TensorT<T>& input, std::size_t window, std::size_t stride);

/// Routes each output gradient to the first maximum of its window in row-major
/// scan order (the deterministic tie rule).
template <typename T>
TensorT<T> maxpool_backward(const TensorT<T>& input, const TensorT<T>& grad_output,
                            std::size_t window, std::size_t stride);

template <typename T>
TensorT<T> avgpool_forward(const TensorT<T>& input, std::size_t window, std::size_t stride);

template <typename T>
TensorT<T> avgpool_backward(const TensorT<T>& input, const TensorT<T>& grad_output,
                            std::size_t window, std::size_t stride);

/// Numerically stable softmax + cross-entropy on a rank-1 logits tensor.
/// Returns the loss and its gradient with respect to the logits.
template <typename T>
std::pair<T, TensorT<T>> softmax_cross_entropy(const TensorT<T>& logits, int label);

/// Central-difference gradient check.
/// Evaluates f at point +/- step along every coordinate and returns
///   max_i |analytic_i - fd_i| / max(1, |analytic_i|).
/// step must be nonzero; non-finite f values raise NumericError.
double grad_check(const std::function<double(const Tensor&)>& f, const Tensor& analytic_grad,
                  const Tensor& point, double step);

}  // namespace cprune
