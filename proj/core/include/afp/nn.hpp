#pragma once

#include <span>
#include <vector>

#include "afp/tensor.hpp"

namespace afp::nn {

// Square 2-D convolution geometry. For a regular convolution the weight
// tensor is (out_channels, in_channels, kernel, kernel); for a transposed
// convolution it is (in_channels, out_channels, kernel, kernel).
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  bool transposed = false;

  // Output spatial extent for an input extent; throws if the result is < 1.
  int output_size(int in) const;
  Shape weight_shape() const;
  void validate() const;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  std::vector<T> bias;
};

// Cross-correlation: out[o][y][x] = b[o] + sum w[o][i][ky][kx] *
// in[i][y*s - p + ky*d][x*s - p + kx*d].
template <typename T>
BasicTensor<T> conv_forward(const BasicTensor<T>& input,
                            const BasicTensor<T>& weights,
                            std::span<const T> bias, const ConvSpec& spec);

// Gradients of sum(grad_out * conv_forward(...)). When `need_input` is false
// the input gradient is left empty.
template <typename T>
ConvGrads<T> conv_backward(const BasicTensor<T>& input,
                           const BasicTensor<T>& weights, const ConvSpec& spec,
                           const BasicTensor<T>& grad_out,
                           bool need_input = true);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x);

// Subgradient 0 at x == 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x,
                             const BasicTensor<T>& grad_out);

template <typename T>
void relu_inplace(BasicTensor<T>& x);

// grad *= (activation > 0); `activation` may be the ReLU input or output.
template <typename T>
void relu_mask_inplace(const BasicTensor<T>& activation, BasicTensor<T>& grad);

template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& x, int parts);

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts);

template <typename T>
BasicTensor<T> add_elementwise(const BasicTensor<T>& a,
                               const BasicTensor<T>& b);

template <typename T>
void add_inplace(BasicTensor<T>& acc, const BasicTensor<T>& x);

}  // namespace afp::nn
