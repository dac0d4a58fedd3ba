#include "afp/pyramid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "afp/rng.hpp"

namespace afp {

int PyramidConfig::stem_depth() const {
  return std::countr_zero(static_cast<unsigned>(strides.at(0))) - 1;
}

void PyramidConfig::validate() const {
  check(!strides.empty(), ErrorKind::kInvalidArgument,
        "pyramid config: at least one level is required");
  check(channels.size() == strides.size(), ErrorKind::kInvalidArgument,
        "pyramid config: channels has " + std::to_string(channels.size()) +
            " entries but there are " + std::to_string(strides.size()) +
            " strides");
  check(input_size > 0, ErrorKind::kInvalidArgument,
        "pyramid config: input_size must be positive");
  check(strides[0] >= 2 && std::has_single_bit(static_cast<unsigned>(strides[0])),
        ErrorKind::kInvalidArgument,
        "pyramid config: strides[0] must be a power of two >= 2, got " +
            std::to_string(strides[0]));
  for (std::size_t l = 0; l < strides.size(); ++l) {
    check(strides[l] > 0 && input_size % strides[l] == 0,
          ErrorKind::kInvalidArgument,
          "pyramid config: input_size " + std::to_string(input_size) +
              " is not divisible by stride " + std::to_string(strides[l]));
    if (l > 0) {
      check(strides[l] > strides[l - 1], ErrorKind::kInvalidArgument,
            "pyramid config: strides must be strictly increasing");
      check(strides[l] == 2 * strides[l - 1], ErrorKind::kInvalidArgument,
            "pyramid config: adjacent strides must differ by exactly 2x (" +
                std::to_string(strides[l - 1]) + " -> " +
                std::to_string(strides[l]) + ")");
    }
  }
  for (int c : channels)
    check(c > 0, ErrorKind::kInvalidArgument,
          "pyramid config: channel counts must be positive");
  check(std::all_of(channels.begin(), channels.end(),
                    [&](int c) { return c == channels[0]; }),
        ErrorKind::kInvalidArgument,
        "pyramid config: detection heads are shared across levels, so every "
        "level needs the same channel count");
  if (cem_enabled)
    check(channels[0] % 3 == 0, ErrorKind::kInvalidArgument,
          "pyramid config: CEM needs channels divisible by 3, got " +
              std::to_string(channels[0]));
  check(block_depth >= 0, ErrorKind::kInvalidArgument,
        "pyramid config: block_depth must be non-negative");
  check(stem_channels > 0 && head_channels > 0 && num_classes > 0,
        ErrorKind::kInvalidArgument,
        "pyramid config: stem_channels, head_channels and num_classes must be "
        "positive");
}

std::size_t parameter_count(const PyramidConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels[0];
  const std::size_t c0 = cfg.stem_channels;
  const std::size_t h = cfg.head_channels;
  const std::size_t k = cfg.strides.size();
  const std::size_t m = cfg.stem_depth();
  auto conv = [](std::size_t in, std::size_t out, std::size_t ksz) {
    return in * out * ksz * ksz + out;
  };
  std::size_t total = 0;
  // stem
  if (m > 0) total += conv(3, c0, 3) + (m - 1) * conv(c0, c0, 3);
  const std::size_t block0_in = m > 0 ? c0 : 3;
  const std::size_t d = cfg.block_depth;
  total += d * conv(block0_in, block0_in, 3) + conv(block0_in, c, 3);
  total += (k - 1) * (d * conv(c, c, 3) + conv(c, c, 3));
  if (cfg.fpn_enabled) total += (k - 1) * (conv(c, c, 1) + conv(c, c, 2));
  if (cfg.cem_enabled) total += k * 6 * conv(c / 3, c / 3, 3);
  const std::size_t out_cls = cfg.num_classes;
  total += conv(c, h, 3) + conv(h, h, 3) + conv(h, out_cls, 1);
  total += conv(c, h, 3) + conv(h, h, 3) + conv(h, 4, 1);
  return total;
}

template <typename T>
std::size_t ParamSet<T>::add(std::string name, Shape shape) {
  check(std::find(names_.begin(), names_.end(), name) == names_.end(),
        ErrorKind::kInvalidArgument, "duplicate parameter name " + name);
  names_.push_back(std::move(name));
  tensors_.emplace_back(shape);
  return tensors_.size() - 1;
}

template <typename T>
std::size_t ParamSet<T>::find(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  check(it != names_.end(), ErrorKind::kInvalidArgument,
        "unknown parameter " + name);
  return static_cast<std::size_t>(it - names_.begin());
}

template <typename T>
std::size_t ParamSet<T>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <typename T>
ParamSet<T> ParamSet<T>::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    out.add(names_[i], tensors_[i].shape());
  return out;
}

template <typename T>
void ParamSet<T>::fill(T value) {
  for (auto& t : tensors_) t.fill(value);
}

template <typename T>
ConvLayer Model<T>::make_conv(const std::string& name, nn::ConvSpec spec,
                              bool relu) {
  ConvLayer layer;
  layer.spec = spec;
  layer.relu = relu;
  layer.weight = params_.add(name + ".weight", spec.weight_shape());
  layer.bias = params_.add(name + ".bias", Shape{spec.out_channels, 1, 1, 1});
  return layer;
}

template <typename T>
Model<T>::Model(PyramidConfig config) : config_(std::move(config)) {
  config_.validate();
  const int k = config_.num_levels();
  const int c = config_.channels[0];
  const int c0 = config_.stem_channels;
  const int depth = config_.stem_depth();

  int in = 3;
  for (int i = 0; i < depth; ++i) {
    stem_.layers.push_back(make_conv("stem." + std::to_string(i),
                                     {in, c0, 3, 2, 1, 1, false}, true));
    in = c0;
  }
  for (int l = 0; l < k; ++l) {
    const std::string p = "block" + std::to_string(l);
    ConvChain block;
    for (int j = 0; j < config_.block_depth; ++j)
      block.layers.push_back(make_conv(p + ".conv" + std::to_string(j),
                                       {in, in, 3, 1, 1, 1, false}, true));
    block.layers.push_back(make_conv(p + ".down", {in, config_.channels[l], 3, 2, 1, 1, false},
                                     true));
    blocks_.push_back(std::move(block));
    in = config_.channels[l];
  }
  if (config_.fpn_enabled) {
    for (int l = 0; l + 1 < k; ++l) {
      const std::string p = "fpn" + std::to_string(l);
      const int lower = config_.channels[l];
      const int upper = config_.channels[l + 1];
      smooth_.push_back(make_conv(p + ".smooth", {upper, lower, 1, 1, 0, 1, false}, false));
      upsample_.push_back(make_conv(p + ".up", {lower, lower, 2, 2, 0, 1, true}, false));
    }
  }
  if (config_.cem_enabled) {
    const int part = c / 3;
    for (int l = 0; l < k; ++l) {
      std::vector<ConvChain> branches;
      for (int b = 1; b <= 3; ++b) {
        ConvChain chain;
        for (int j = 0; j < b; ++j) {
          const bool last = j + 1 == b;
          chain.layers.push_back(make_conv(
              "cem" + std::to_string(l) + ".b" + std::to_string(b) + "." +
                  std::to_string(j),
              {part, part, 3, 1, b, b, false}, !last));
        }
        branches.push_back(std::move(chain));
      }
      cem_.push_back(std::move(branches));
    }
  }
  const int h = config_.head_channels;
  cls_head_.layers = {
      make_conv("head.cls.0", {c, h, 3, 1, 1, 1, false}, true),
      make_conv("head.cls.1", {h, h, 3, 1, 1, 1, false}, true),
      make_conv("head.cls.2", {h, config_.num_classes, 1, 1, 0, 1, false}, false)};
  cls_head_.layers.back().is_output = true;
  reg_head_.layers = {
      make_conv("head.reg.0", {c, h, 3, 1, 1, 1, false}, true),
      make_conv("head.reg.1", {h, h, 3, 1, 1, 1, false}, true),
      make_conv("head.reg.2", {h, 4, 1, 1, 0, 1, false}, false)};
  reg_head_.layers.back().is_output = true;
}

template <typename T>
void Model<T>::initialize(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1417));
  auto init = [&](const ConvLayer& layer, double scale) {
    const auto& s = layer.spec;
    double fan_in = static_cast<double>(s.in_channels) * s.kernel * s.kernel;
    if (s.transposed) fan_in /= static_cast<double>(s.stride) * s.stride;
    const double bound = scale * std::sqrt(6.0 / fan_in);
    for (auto& v : params_[layer.weight].data())
      v = static_cast<T>(rng.uniform(-bound, bound));
    params_[layer.bias].fill(T(0));
  };
  auto init_chain = [&](const ConvChain& chain) {
    for (const auto& layer : chain.layers)
      init(layer, layer.is_output ? 0.1 : (layer.relu ? 1.0 : 0.5));
  };
  init_chain(stem_);
  for (const auto& b : blocks_) init_chain(b);
  for (const auto& l : smooth_) init(l, 0.5);
  for (const auto& l : upsample_) init(l, 0.5);
  for (const auto& branches : cem_)
    for (const auto& b : branches) init_chain(b);
  init_chain(cls_head_);
  init_chain(reg_head_);
  const T prior_logit = static_cast<T>(std::log(0.01 / 0.99));
  params_[cls_head_.layers.back().bias].fill(prior_logit);
}

template <typename T>
BasicTensor<T> Model<T>::conv(const ConvLayer& layer,
                              const BasicTensor<T>& x) const {
  auto y = nn::conv_forward<T>(x, params_[layer.weight],
                               params_[layer.bias].data(), layer.spec);
  if (layer.relu) nn::relu_inplace(y);
  return y;
}

template <typename T>
BasicTensor<T> Model<T>::run_chain(const ConvChain& chain,
                                   const BasicTensor<T>& x,
                                   ChainTrace<T>* trace) const {
  if (trace) {
    trace->activations.clear();
    trace->activations.push_back(x);
  }
  BasicTensor<T> cur = x;
  for (const auto& layer : chain.layers) {
    cur = conv(layer, cur);
    if (trace) trace->activations.push_back(cur);
  }
  return cur;
}

template <typename T>
BasicTensor<T> Model<T>::chain_backward(const ConvChain& chain,
                                        const ChainTrace<T>& trace,
                                        BasicTensor<T> grad,
                                        ParamSet<T>& grads,
                                        bool need_input) const {
  check(trace.activations.size() == chain.layers.size() + 1,
        ErrorKind::kInvalidArgument, "backward called without a forward trace");
  for (std::size_t j = chain.layers.size(); j-- > 0;) {
    const ConvLayer& layer = chain.layers[j];
    if (layer.relu) nn::relu_mask_inplace(trace.activations[j + 1], grad);
    const bool want_input = need_input || j > 0;
    auto g = nn::conv_backward<T>(trace.activations[j], params_[layer.weight],
                                  layer.spec, grad, want_input);
    nn::add_inplace(grads[layer.weight], g.weights);
    auto gb = grads[layer.bias].data();
    for (std::size_t o = 0; o < gb.size(); ++o) gb[o] += g.bias[o];
    grad = std::move(g.input);
  }
  return grad;
}

template <typename T>
FeaturePyramid<T> Model<T>::backbone_forward(const BasicTensor<T>& image,
                                             Cache* cache) const {
  check(image.c() == 3, ErrorKind::kShapeMismatch,
        "backbone expects 3 input channels, got " + std::to_string(image.c()));
  check(image.h() == config_.input_size && image.w() == config_.input_size,
        ErrorKind::kShapeMismatch,
        "backbone expects input of size " + std::to_string(config_.input_size) +
            "x" + std::to_string(config_.input_size) + ", got " +
            std::to_string(image.h()) + "x" + std::to_string(image.w()));
  FeaturePyramid<T> out;
  BasicTensor<T> cur = run_chain(stem_, image, cache ? &cache->stem : nullptr);
  if (cache) cache->blocks.assign(blocks_.size(), {});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    cur = run_chain(blocks_[l], cur, cache ? &cache->blocks[l] : nullptr);
    out.levels.push_back(cur);
  }
  if (cache) cache->backbone = out;
  return out;
}

template <typename T>
FeaturePyramid<T> Model<T>::topdown_fuse(const FeaturePyramid<T>& s,
                                         Cache* cache) const {
  check(config_.fpn_enabled, ErrorKind::kInvalidArgument,
        "topdown_fuse called with fpn disabled");
  const std::size_t k = s.levels.size();
  check(k == smooth_.size() + 1, ErrorKind::kShapeMismatch,
        "topdown_fuse: expected " + std::to_string(smooth_.size() + 1) +
            " levels, got " + std::to_string(k));
  for (std::size_t i = 0; i + 1 < k; ++i)
    check(s.levels[i].h() == 2 * s.levels[i + 1].h() &&
              s.levels[i].w() == 2 * s.levels[i + 1].w(),
          ErrorKind::kShapeMismatch,
          "topdown_fuse: level " + std::to_string(i) + " is " +
              std::to_string(s.levels[i].h()) + " but level " +
              std::to_string(i + 1) + " is " + std::to_string(s.levels[i + 1].h()) +
              "; adjacent levels must differ by exactly 2x");
  FeaturePyramid<T> e;
  e.levels.resize(k);
  if (cache) cache->smoothed.assign(k, {});
  for (std::size_t i = 0; i + 1 < k; ++i) {
    BasicTensor<T> sm = conv(smooth_[i], s.levels[i + 1]);
    BasicTensor<T> up = conv(upsample_[i], sm);
    e.levels[i] = nn::add_elementwise(s.levels[i], up);
    if (cache) cache->smoothed[i] = std::move(sm);
  }
  e.levels[k - 1] = s.levels[k - 1];
  return e;
}

template <typename T>
BasicTensor<T> Model<T>::cem_forward(int level, const BasicTensor<T>& x,
                                     Cache* cache) const {
  check(config_.cem_enabled, ErrorKind::kInvalidArgument,
        "cem_forward called with cem disabled");
  check(x.c() % 3 == 0, ErrorKind::kInvalidArgument,
        "cem needs channels divisible by 3, got " + std::to_string(x.c()));
  const auto& branches = cem_.at(level);
  auto parts = nn::split_channels(x, 3);
  std::vector<BasicTensor<T>> outs;
  if (cache) {
    if (cache->cem.size() < cem_.size()) cache->cem.resize(cem_.size());
    cache->cem[level].assign(3, {});
  }
  for (int b = 0; b < 3; ++b)
    outs.push_back(run_chain(branches[b], parts[b],
                             cache ? &cache->cem[level][b] : nullptr));
  return nn::concat_channels<T>(outs);
}

template <typename T>
HeadOutputs<T> Model<T>::heads_forward(const FeaturePyramid<T>& features,
                                       Cache* cache) const {
  HeadOutputs<T> out;
  const std::size_t k = features.levels.size();
  if (cache) {
    cache->cls.assign(k, {});
    cache->reg.assign(k, {});
  }
  for (std::size_t l = 0; l < k; ++l) {
    out.cls.push_back(run_chain(cls_head_, features.levels[l],
                                cache ? &cache->cls[l] : nullptr));
    out.reg.push_back(run_chain(reg_head_, features.levels[l],
                                cache ? &cache->reg[l] : nullptr));
  }
  return out;
}

template <typename T>
HeadOutputs<T> Model<T>::forward(const BasicTensor<T>& image,
                                 Cache* cache) const {
  FeaturePyramid<T> feats = backbone_forward(image, cache);
  if (config_.fpn_enabled) feats = topdown_fuse(feats, cache);
  if (config_.cem_enabled) {
    for (int l = 0; l < config_.num_levels(); ++l)
      feats.levels[l] = cem_forward(l, feats.levels[l], cache);
  }
  return heads_forward(feats, cache);
}

template <typename T>
FeaturePyramid<T> Model<T>::heads_backward(const Cache& cache,
                                           const HeadOutputs<T>& grad_out,
                                           ParamSet<T>& grads) const {
  FeaturePyramid<T> g;
  for (std::size_t l = 0; l < grad_out.cls.size(); ++l) {
    BasicTensor<T> gc =
        chain_backward(cls_head_, cache.cls.at(l), grad_out.cls[l], grads, true);
    BasicTensor<T> gr =
        chain_backward(reg_head_, cache.reg.at(l), grad_out.reg[l], grads, true);
    nn::add_inplace(gc, gr);
    g.levels.push_back(std::move(gc));
  }
  return g;
}

template <typename T>
BasicTensor<T> Model<T>::cem_backward(int level, const Cache& cache,
                                      const BasicTensor<T>& grad_out,
                                      ParamSet<T>& grads) const {
  auto parts = nn::split_channels(grad_out, 3);
  std::vector<BasicTensor<T>> gin;
  for (int b = 0; b < 3; ++b)
    gin.push_back(chain_backward(cem_[level][b], cache.cem.at(level).at(b),
                                 std::move(parts[b]), grads, true));
  return nn::concat_channels<T>(gin);
}

template <typename T>
FeaturePyramid<T> Model<T>::topdown_backward(const Cache& cache,
                                             const FeaturePyramid<T>& grad_out,
                                             ParamSet<T>& grads) const {
  const std::size_t k = grad_out.levels.size();
  FeaturePyramid<T> g;
  g.levels = grad_out.levels;  // identity path S_i -> E_i
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const ConvLayer& up = upsample_[i];
    auto gu = nn::conv_backward<T>(cache.smoothed.at(i), params_[up.weight],
                                   up.spec, grad_out.levels[i], true);
    nn::add_inplace(grads[up.weight], gu.weights);
    auto gub = grads[up.bias].data();
    for (std::size_t o = 0; o < gub.size(); ++o) gub[o] += gu.bias[o];

    const ConvLayer& sm = smooth_[i];
    auto gs = nn::conv_backward<T>(cache.backbone.levels.at(i + 1),
                                   params_[sm.weight], sm.spec, gu.input, true);
    nn::add_inplace(grads[sm.weight], gs.weights);
    auto gsb = grads[sm.bias].data();
    for (std::size_t o = 0; o < gsb.size(); ++o) gsb[o] += gs.bias[o];
    nn::add_inplace(g.levels[i + 1], gs.input);
  }
  return g;
}

template <typename T>
BasicTensor<T> Model<T>::backbone_backward(const Cache& cache,
                                           const FeaturePyramid<T>& grad_out,
                                           ParamSet<T>& grads,
                                           bool need_image_grad) const {
  const std::size_t k = blocks_.size();
  BasicTensor<T> carry;
  for (std::size_t l = k; l-- > 0;) {
    BasicTensor<T> g = grad_out.levels.at(l);
    if (!carry.empty()) nn::add_inplace(g, carry);
    const bool need = l > 0 || !stem_.layers.empty() || need_image_grad;
    carry = chain_backward(blocks_[l], cache.blocks.at(l), std::move(g), grads,
                           need);
  }
  if (stem_.layers.empty()) return carry;
  return chain_backward(stem_, cache.stem, std::move(carry), grads,
                        need_image_grad);
}

template <typename T>
void Model<T>::backward(const Cache& cache, const HeadOutputs<T>& grad_out,
                        ParamSet<T>& grads) const {
  FeaturePyramid<T> g = heads_backward(cache, grad_out, grads);
  if (config_.cem_enabled)
    for (int l = 0; l < config_.num_levels(); ++l)
      g.levels[l] = cem_backward(l, cache, g.levels[l], grads);
  if (config_.fpn_enabled) g = topdown_backward(cache, g, grads);
  backbone_backward(cache, g, grads, false);
}

template class ParamSet<float>;
template class ParamSet<double>;
template class Model<float>;
template class Model<double>;

}  // namespace afp
