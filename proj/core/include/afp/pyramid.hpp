#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "afp/nn.hpp"
#include "afp/tensor.hpp"

namespace afp {

// Network layout. The backbone is a stem of stride-2 3x3 convolutions that
// brings the input down to half of strides[0], followed by one block per
// level: block_depth x [3x3 conv, ReLU], then [3x3 conv stride 2, ReLU].
struct PyramidConfig {
  int input_size = 128;
  std::vector<int> strides{4, 8, 16, 32, 64, 128};
  std::vector<int> channels{48, 48, 48, 48, 48, 48};
  int stem_channels = 16;
  int block_depth = 0;
  int head_channels = 16;
  int num_classes = 1;
  bool fpn_enabled = true;
  bool cem_enabled = true;

  int num_levels() const { return static_cast<int>(strides.size()); }
  int level_size(int level) const { return input_size / strides.at(level); }
  // Number of stride-2 stem convolutions (log2(strides[0]) - 1).
  int stem_depth() const;
  void validate() const;
};

template <typename T>
struct FeaturePyramid {
  std::vector<BasicTensor<T>> levels;
};

template <typename T>
struct HeadOutputs {
  std::vector<BasicTensor<T>> cls;  // (n, num_classes, H_l, W_l)
  std::vector<BasicTensor<T>> reg;  // (n, 4, H_l, W_l)
};

// Ordered, named parameter tensors. Order is the construction order of the
// model and defines checkpoint layout.
template <typename T>
class ParamSet {
 public:
  std::size_t add(std::string name, Shape shape);

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  BasicTensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const BasicTensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
  std::vector<BasicTensor<T>>& tensors() { return tensors_; }
  const std::vector<BasicTensor<T>>& tensors() const { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }

  // Index of `name`; throws if absent.
  std::size_t find(const std::string& name) const;
  std::size_t num_scalars() const;
  // Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  void fill(T value);

 private:
  std::vector<std::string> names_;
  std::vector<BasicTensor<T>> tensors_;
};

struct ConvLayer {
  nn::ConvSpec spec;
  std::size_t weight = 0;
  std::size_t bias = 0;
  bool relu = false;
  bool is_output = false;  // final head projection
};

// Straight chain of convolutions; activations[0] is the input.
struct ConvChain {
  std::vector<ConvLayer> layers;
};

template <typename T>
struct ChainTrace {
  std::vector<BasicTensor<T>> activations;
};

template <typename T>
class Model {
 public:
  struct Cache {
    ChainTrace<T> stem;
    std::vector<ChainTrace<T>> blocks;
    FeaturePyramid<T> backbone;
    std::vector<BasicTensor<T>> smoothed;  // smooth(S_{i+1}) per level i
    FeaturePyramid<T> fused;
    std::vector<std::vector<ChainTrace<T>>> cem;  // [level][branch]
    FeaturePyramid<T> enhanced;
    std::vector<ChainTrace<T>> cls;
    std::vector<ChainTrace<T>> reg;
  };

  explicit Model(PyramidConfig config);

  const PyramidConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  // Fan-in scaled uniform init; classification bias set to logit(0.01).
  void initialize(std::uint64_t seed);

  FeaturePyramid<T> backbone_forward(const BasicTensor<T>& image,
                                     Cache* cache = nullptr) const;
  // E_i = S_i + up(smooth(S_{i+1})); E_{k-1} = S_{k-1}.
  FeaturePyramid<T> topdown_fuse(const FeaturePyramid<T>& s,
                                 Cache* cache = nullptr) const;
  BasicTensor<T> cem_forward(int level, const BasicTensor<T>& x,
                             Cache* cache = nullptr) const;
  HeadOutputs<T> heads_forward(const FeaturePyramid<T>& features,
                               Cache* cache = nullptr) const;
  HeadOutputs<T> forward(const BasicTensor<T>& image,
                         Cache* cache = nullptr) const;

  // Backward passes accumulate into `grads` (laid out like params()) and
  // return the gradient with respect to the stage input.
  FeaturePyramid<T> heads_backward(const Cache& cache,
                                   const HeadOutputs<T>& grad_out,
                                   ParamSet<T>& grads) const;
  BasicTensor<T> cem_backward(int level, const Cache& cache,
                              const BasicTensor<T>& grad_out,
                              ParamSet<T>& grads) const;
  FeaturePyramid<T> topdown_backward(const Cache& cache,
                                     const FeaturePyramid<T>& grad_out,
                                     ParamSet<T>& grads) const;
  BasicTensor<T> backbone_backward(const Cache& cache,
                                   const FeaturePyramid<T>& grad_out,
                                   ParamSet<T>& grads,
                                   bool need_image_grad = false) const;
  // Full pass from head gradients to parameter gradients.
  void backward(const Cache& cache, const HeadOutputs<T>& grad_out,
                ParamSet<T>& grads) const;

 private:
  ConvLayer make_conv(const std::string& name, nn::ConvSpec spec, bool relu);
  BasicTensor<T> run_chain(const ConvChain& chain, const BasicTensor<T>& x,
                           ChainTrace<T>* trace) const;
  BasicTensor<T> chain_backward(const ConvChain& chain,
                                const ChainTrace<T>& trace,
                                BasicTensor<T> grad, ParamSet<T>& grads,
                                bool need_input) const;
  BasicTensor<T> conv(const ConvLayer& layer, const BasicTensor<T>& x) const;

  PyramidConfig config_;
  ParamSet<T> params_;
  ConvChain stem_;
  std::vector<ConvChain> blocks_;
  std::vector<ConvLayer> smooth_;
  std::vector<ConvLayer> upsample_;
  std::vector<std::vector<ConvChain>> cem_;  // [level][branch]
  ConvChain cls_head_;
  ConvChain reg_head_;
};

// Closed-form parameter count for a config (documented in the README).
std::size_t parameter_count(const PyramidConfig& config);

}  // namespace afp
