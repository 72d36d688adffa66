#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "udet/rng.hpp"
#include "udet/tensor.hpp"

namespace udet {

enum class Mode { train, infer };
enum class Padding { same, valid };
enum class ActivationKind { mish, relu, sigmoid, softplus, identity };

const char* to_string(ActivationKind kind);

struct Conv2DSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  Padding padding = Padding::same;
  bool bias = true;

  std::size_t param_count() const {
    return kernel_h * kernel_w * in_channels * out_channels + (bias ? out_channels : 0);
  }
  /// Weight layout (out, in, kh, kw).
  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
  /// Transposed-conv weight layout (in, out, kh, kw).
  Shape transposed_weight_shape() const { return {in_channels, out_channels, kernel_h, kernel_w}; }
};

struct BatchNormSpec {
  std::size_t channels = 1;
  double epsilon = 1e-3;
  double momentum = 0.99;

  /// gamma, beta, running mean, running variance.
  std::size_t param_count() const { return 4 * channels; }
};

/// Learned and running state of one batch-norm layer.
template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

// Overflow-safe scalar forms shared by ops, tests and the numerics checks.
inline double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double mish_value(double x) { return x * std::tanh(softplus_value(x)); }
inline double mish_derivative(double x) {
  const double t = std::tanh(softplus_value(x));
  return t + x * (1.0 - t * t) * sigmoid_value(x);
}

namespace ops {

template <typename T> Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor);
/// Sum of all elements as a (1,1,1,1) scalar.
template <typename T> Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);

/// Cross-correlation with "same"/"valid" padding. `bias` may be undefined.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Conv2DSpec& spec,
                 const Tensor<T>& weight, const Tensor<T>& bias);

/// Transposed convolution, no padding: output size (H-1)*stride + kernel.
/// Equals the input-gradient of conv2d with the same (in, out, kh, kw) weights.
template <typename T>
Tensor<T> transposed_conv2d(Tape<T>& tape, const Tensor<T>& x, const Conv2DSpec& spec,
                            const Tensor<T>& weight, const Tensor<T>& bias);

/// One 3x3 same-padded filter per channel, weight shape (C, 1, 3, 3), no bias.
template <typename T>
Tensor<T> depthwise_conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight);

/// 2x2 window, stride 2. Gradient goes to the first row-major maximum.
template <typename T> Tensor<T> maxpool2d(Tape<T>& tape, const Tensor<T>& x);

template <typename T> Tensor<T> upsample2x_nearest(Tape<T>& tape, const Tensor<T>& x);

/// Train mode normalises with batch statistics and updates the running
/// statistics in place; infer mode reads the running statistics only.
template <typename T>
Tensor<T> batchnorm2d(Tape<T>& tape, const Tensor<T>& x, const BatchNormSpec& spec,
                      BatchNormState<T>& state, Mode mode);

/// Inverted dropout.
template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double rate, Mode mode, Rng& rng);

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> slice_channels(Tape<T>& tape, const Tensor<T>& x, std::size_t begin, std::size_t count);

template <typename T> Tensor<T> mish(Tape<T>& tape, const Tensor<T>& x);
template <typename T> Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x);
template <typename T> Tensor<T> softplus(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> activation(Tape<T>& tape, const Tensor<T>& x, ActivationKind kind);

/// Fast normalised fusion: sum_i relu(w_i) / (eps + sum_j relu(w_j)) * inputs[i].
/// `weights` holds one scalar per input.
template <typename T>
Tensor<T> fuse(Tape<T>& tape, const Tensor<T>& weights, std::span<const Tensor<T>> inputs,
               double eps = 1e-4);

}  // namespace ops

/// Output spatial size and leading pad of a strided window.
struct WindowGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};
WindowGeometry window_geometry(std::size_t in, std::size_t kernel, std::size_t stride,
                               Padding padding);

}  // namespace udet
