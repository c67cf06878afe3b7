#pragma once

#include <utility>

#include "fednnu/tensor.hpp"

namespace fednnu {

// Bitwise equality of dims and values (distinguishes -0.0 and NaN payloads).
bool bit_equal(const Tensor& a, const Tensor& b);

// 3x3 cross-correlation with zero padding 1 and stride 1.
// input [N,C,H,W], kernel [F,C,3,3], bias [F] -> [N,F,H,W].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

struct Conv2dGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out);

// 2x2 max pooling, stride 2. Ties resolve to the first element in row-major
// order within the window.
Tensor downsample2x(const Tensor& input);
Tensor downsample2x_backward(const Tensor& input, const Tensor& grad_out);

// Nearest-neighbour 2x replication.
Tensor upsample2x(const Tensor& input);
Tensor upsample2x_backward(const Tensor& grad_out);

inline constexpr double kLeakySlope = 0.01;

Tensor leaky_relu(const Tensor& input);
Tensor leaky_relu_backward(const Tensor& input, const Tensor& grad_out);

// Channel concatenation of two [N,*,H,W] tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Splits a gradient of concat_channels back into its two halves.
std::pair<Tensor, Tensor> split_channels(const Tensor& grad, std::size_t channels_a);

}  // namespace fednnu
