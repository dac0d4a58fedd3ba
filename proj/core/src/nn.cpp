#include "afp/nn.hpp"

#include <cmath>
#include <string>

#include "gemm.hpp"

namespace afp {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + ", " + std::to_string(s.c) + ", " +
         std::to_string(s.h) + ", " + std::to_string(s.w) + ")";
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "shape_mismatch";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kParse: return "parse_error";
    case ErrorKind::kIo: return "io_error";
    case ErrorKind::kFormat: return "format_error";
    case ErrorKind::kNonFinite: return "non_finite";
  }
  return "unknown";
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

template bool all_finite(const BasicTensor<float>&);
template bool all_finite(const BasicTensor<double>&);

namespace nn {
namespace {

// Geometry of a regular (non-transposed) convolution over one plane.
struct Geometry {
  int in_h, in_w, out_h, out_w, kernel, stride, padding, dilation;
};

int regular_output(int in, int kernel, int stride, int padding, int dilation) {
  const int span = in + 2 * padding - dilation * (kernel - 1) - 1;
  if (span < 0) return 0;
  return span / stride + 1;
}

// Output columns [lo, hi) whose input column ox * stride + x_off is in range.
inline void valid_range(const Geometry& g, int x_off, int& lo, int& hi) {
  lo = x_off >= 0 ? 0 : (-x_off + g.stride - 1) / g.stride;
  const int last = g.in_w - 1 - x_off;
  hi = last < 0 ? 0 : std::min(g.out_w, last / g.stride + 1);
  lo = std::min(lo, hi);
}

// col[(c * K + ky) * K + kx][oy * out_w + ox], rows `ld` apart.
template <typename T>
void im2col(const T* in, int channels, const Geometry& g, T* col,
            std::size_t ld) {
  for (int c = 0; c < channels; ++c) {
    const T* src = in + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* dst = col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel +
                                                kx) *
                           ld;
        const int x_off = kx * g.dilation - g.padding;
        int lo, hi;
        valid_range(g, x_off, lo, hi);
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky * g.dilation;
          T* row = dst + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(row, row + g.out_w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * g.in_w + x_off;
          std::fill(row, row + lo, T(0));
          if (g.stride == 1) {
            std::copy(srow + lo, srow + hi, row + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) row[ox] = srow[ox * g.stride];
          }
          std::fill(row + hi, row + g.out_w, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the (zeroed) image.
template <typename T>
void col2im(const T* col, int channels, const Geometry& g, T* out,
            std::size_t ld) {
  std::fill(out, out + static_cast<std::size_t>(channels) * g.in_h * g.in_w,
            T(0));
  for (int c = 0; c < channels; ++c) {
    T* dst = out + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* src = col + static_cast<std::size_t>(
                                 (c * g.kernel + ky) * g.kernel + kx) *
                                 ld;
        const int x_off = kx * g.dilation - g.padding;
        int lo, hi;
        valid_range(g, x_off, lo, hi);
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky * g.dilation;
          if (iy < 0 || iy >= g.in_h) continue;
          const T* row = src + static_cast<std::size_t>(oy) * g.out_w;
          T* drow = dst + static_cast<std::size_t>(iy) * g.in_w + x_off;
          if (g.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) drow[ox] += row[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) drow[ox * g.stride] += row[ox];
          }
        }
      }
    }
  }
}

// Samples per GEMM: small planes are batched along the column dimension so
// every multiply sees at least ~kMinColumns columns.
constexpr std::size_t kMinColumns = 1024;

int chunk_size(int n, std::size_t plane) {
  const std::size_t want = (kMinColumns + plane - 1) / plane;
  return static_cast<int>(std::min<std::size_t>(n, std::max<std::size_t>(1, want)));
}

// Samples [s0, s1) of an (n, c, p) tensor as a (c, (s1 - s0) * p) matrix.
template <typename T>
void gather(const BasicTensor<T>& t, int s0, int s1, T* m) {
  const std::size_t p = t.shape().plane();
  const std::size_t ld = (s1 - s0) * p;
  for (int s = s0; s < s1; ++s)
    for (int ch = 0; ch < t.c(); ++ch)
      std::copy_n(t.plane(s, ch), p, m + ch * ld + (s - s0) * p);
}

template <typename T>
void scatter(const T* m, int s0, int s1, BasicTensor<T>& t) {
  const std::size_t p = t.shape().plane();
  const std::size_t ld = (s1 - s0) * p;
  for (int s = s0; s < s1; ++s)
    for (int ch = 0; ch < t.c(); ++ch)
      std::copy_n(m + ch * ld + (s - s0) * p, p, t.plane(s, ch));
}

void check_spec_input(const ConvSpec& spec, const Shape& in,
                      const Shape& weights, std::size_t bias_len) {
  spec.validate();
  if (in.c != spec.in_channels)
    fail(ErrorKind::kShapeMismatch,
         "conv input channels: expected " + std::to_string(spec.in_channels) +
             ", got " + std::to_string(in.c));
  if (in.h != in.w)
    fail(ErrorKind::kShapeMismatch,
         "conv input must be square, got height " + std::to_string(in.h) +
             " and width " + std::to_string(in.w));
  if (weights != spec.weight_shape())
    fail(ErrorKind::kShapeMismatch,
         "conv weights: expected " + to_string(spec.weight_shape()) +
             ", got " + to_string(weights));
  if (bias_len != 0 && bias_len != static_cast<std::size_t>(spec.out_channels))
    fail(ErrorKind::kShapeMismatch,
         "conv bias length: expected " + std::to_string(spec.out_channels) +
             ", got " + std::to_string(bias_len));
}

// Geometry of the regular convolution whose data-gradient is `spec` when
// `spec` is transposed; for regular specs it is the spec itself.
Geometry geometry(const ConvSpec& spec, int in_size) {
  const int out = spec.output_size(in_size);
  if (spec.transposed)
    return {out, out, in_size, in_size, spec.kernel,
            spec.stride, spec.padding, spec.dilation};
  return {in_size, in_size, out, out, spec.kernel,
          spec.stride, spec.padding, spec.dilation};
}

}  // namespace

int ConvSpec::output_size(int in) const {
  validate();
  check(in >= 1, ErrorKind::kInvalidArgument,
        "conv input size must be positive, got " + std::to_string(in));
  const int out =
      transposed ? (in - 1) * stride - 2 * padding + dilation * (kernel - 1) + 1
                 : regular_output(in, kernel, stride, padding, dilation);
  check(out >= 1, ErrorKind::kInvalidArgument,
        "conv output size " + std::to_string(out) + " is not positive for input " +
            std::to_string(in));
  return out;
}

Shape ConvSpec::weight_shape() const {
  if (transposed) return {in_channels, out_channels, kernel, kernel};
  return {out_channels, in_channels, kernel, kernel};
}

void ConvSpec::validate() const {
  check(in_channels > 0 && out_channels > 0, ErrorKind::kInvalidArgument,
        "conv channels must be positive");
  check(kernel > 0, ErrorKind::kInvalidArgument, "conv kernel must be positive");
  check(stride > 0, ErrorKind::kInvalidArgument, "conv stride must be positive");
  check(padding >= 0, ErrorKind::kInvalidArgument,
        "conv padding must be non-negative");
  check(dilation > 0, ErrorKind::kInvalidArgument,
        "conv dilation must be positive");
}

template <typename T>
BasicTensor<T> conv_forward(const BasicTensor<T>& input,
                            const BasicTensor<T>& weights,
                            std::span<const T> bias, const ConvSpec& spec) {
  check_spec_input(spec, input.shape(), weights.shape(), bias.size());
  const Geometry g = geometry(spec, input.h());
  const int out_size = spec.output_size(input.h());
  BasicTensor<T> out(Shape{input.n(), spec.out_channels, out_size, out_size});
  const int ksq = spec.kernel * spec.kernel;

  const int n = input.n();
  const std::size_t pdim = static_cast<std::size_t>(g.out_h) * g.out_w;
  const int chunk = chunk_size(n, pdim);
  if (!spec.transposed) {
    const int kdim = spec.in_channels * ksq;
    const bool pointwise = spec.kernel == 1 && spec.stride == 1 &&
                           spec.padding == 0;
    std::vector<T> col(kdim * chunk * pdim);
    std::vector<T> res(chunk > 1 ? spec.out_channels * chunk * pdim : 0);
    for (int s0 = 0; s0 < n; s0 += chunk) {
      const int s1 = std::min(n, s0 + chunk);
      const std::size_t cols = (s1 - s0) * pdim;
      const T* src = col.data();
      if (pointwise && s1 - s0 == 1) {
        src = input.plane(s0, 0);
      } else if (pointwise) {
        gather(input, s0, s1, col.data());
      } else {
        for (int s = s0; s < s1; ++s)
          im2col(input.plane(s, 0), spec.in_channels, g,
                 col.data() + (s - s0) * pdim, cols);
      }
      T* dst = s1 - s0 == 1 ? out.plane(s0, 0) : res.data();
      detail::gemm(spec.out_channels, static_cast<int>(cols), kdim,
                   weights.data().data(), src, dst, false);
      if (s1 - s0 > 1) scatter(res.data(), s0, s1, out);
    }
  } else {
    // Transposed: out = col2im(W^T x) over the geometry of the matching
    // regular convolution (out -> in).
    const int kdim = spec.out_channels * ksq;
    std::vector<T> x(chunk > 1 ? spec.in_channels * chunk * pdim : 0);
    std::vector<T> col(kdim * chunk * pdim);
    for (int s0 = 0; s0 < n; s0 += chunk) {
      const int s1 = std::min(n, s0 + chunk);
      const std::size_t cols = (s1 - s0) * pdim;
      const T* src = input.plane(s0, 0);
      if (s1 - s0 > 1) {
        gather(input, s0, s1, x.data());
        src = x.data();
      }
      detail::gemm(kdim, static_cast<int>(cols), spec.in_channels,
                   weights.data().data(), src, col.data(), false, true, false);
      for (int s = s0; s < s1; ++s)
        col2im(col.data() + (s - s0) * pdim, spec.out_channels, g,
               out.plane(s, 0), cols);
    }
  }

  if (!bias.empty()) {
    const std::size_t plane = out.shape().plane();
    for (int s = 0; s < out.n(); ++s)
      for (int o = 0; o < spec.out_channels; ++o) {
        T* p = out.plane(s, o);
        const T b = bias[o];
        for (std::size_t i = 0; i < plane; ++i) p[i] += b;
      }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv_backward(const BasicTensor<T>& input,
                           const BasicTensor<T>& weights, const ConvSpec& spec,
                           const BasicTensor<T>& grad_out, bool need_input) {
  check_spec_input(spec, input.shape(), weights.shape(), 0);
  const int out_size = spec.output_size(input.h());
  const Shape expected{input.n(), spec.out_channels, out_size, out_size};
  if (grad_out.shape() != expected)
    fail(ErrorKind::kShapeMismatch, "conv grad_out: expected " +
                                        to_string(expected) + ", got " +
                                        to_string(grad_out.shape()));

  const Geometry g = geometry(spec, input.h());
  const int ksq = spec.kernel * spec.kernel;
  ConvGrads<T> grads;
  grads.weights = BasicTensor<T>(weights.shape());
  grads.bias.assign(spec.out_channels, T(0));
  if (need_input) grads.input = BasicTensor<T>(input.shape());

  const std::size_t out_plane = grad_out.shape().plane();
  for (int s = 0; s < grad_out.n(); ++s)
    for (int o = 0; o < spec.out_channels; ++o) {
      const T* p = grad_out.plane(s, o);
      T acc = 0;
      for (std::size_t i = 0; i < out_plane; ++i) acc += p[i];
      grads.bias[o] += acc;
    }

  const int n = input.n();
  const std::size_t pdim = static_cast<std::size_t>(g.out_h) * g.out_w;
  const int chunk = chunk_size(n, pdim);
  // Stride-1 data gradient is a full correlation with the flipped kernel.
  const int full_pad = spec.dilation * (spec.kernel - 1) - spec.padding;
  const bool direct_input = need_input && !spec.transposed && spec.stride == 1 &&
                            full_pad >= 0;
  if (direct_input) {
    BasicTensor<T> flipped(Shape{spec.in_channels, spec.out_channels,
                                 spec.kernel, spec.kernel});
    const int k = spec.kernel;
    for (int o = 0; o < spec.out_channels; ++o)
      for (int i = 0; i < spec.in_channels; ++i)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            flipped.at(i, o, k - 1 - ky, k - 1 - kx) = weights.at(o, i, ky, kx);
    const ConvSpec full{spec.out_channels, spec.in_channels, k, 1, full_pad,
                        spec.dilation, false};
    grads.input = conv_forward<T>(grad_out, flipped, {}, full);
    need_input = false;
  }
  if (!spec.transposed) {
    const int kdim = spec.in_channels * ksq;
    std::vector<T> col(kdim * chunk * pdim);
    std::vector<T> gout(chunk > 1 ? spec.out_channels * chunk * pdim : 0);
    for (int s0 = 0; s0 < n; s0 += chunk) {
      const int s1 = std::min(n, s0 + chunk);
      const std::size_t cols = (s1 - s0) * pdim;
      const T* go = grad_out.plane(s0, 0);
      if (s1 - s0 > 1) {
        gather(grad_out, s0, s1, gout.data());
        go = gout.data();
      }
      for (int s = s0; s < s1; ++s)
        im2col(input.plane(s, 0), spec.in_channels, g,
               col.data() + (s - s0) * pdim, cols);
      detail::gemm(spec.out_channels, kdim, static_cast<int>(cols), go,
                   col.data(), grads.weights.data().data(), true, false, true);
      if (need_input) {
        detail::gemm(kdim, static_cast<int>(cols), spec.out_channels,
                     weights.data().data(), go, col.data(), false, true, false);
        for (int s = s0; s < s1; ++s)
          col2im(col.data() + (s - s0) * pdim, spec.in_channels, g,
                 grads.input.plane(s, 0), cols);
      }
    }
  } else {
    const int kdim = spec.out_channels * ksq;
    std::vector<T> col(kdim * chunk * pdim);
    std::vector<T> x(chunk > 1 ? spec.in_channels * chunk * pdim : 0);
    std::vector<T> gin(chunk > 1 && need_input ? spec.in_channels * chunk * pdim : 0);
    for (int s0 = 0; s0 < n; s0 += chunk) {
      const int s1 = std::min(n, s0 + chunk);
      const std::size_t cols = (s1 - s0) * pdim;
      // grad_out lives on the larger plane (g.in_*); gather it into columns.
      for (int s = s0; s < s1; ++s)
        im2col(grad_out.plane(s, 0), spec.out_channels, g,
               col.data() + (s - s0) * pdim, cols);
      if (need_input) {
        T* dst = s1 - s0 == 1 ? grads.input.plane(s0, 0) : gin.data();
        detail::gemm(spec.in_channels, static_cast<int>(cols), kdim,
                     weights.data().data(), col.data(), dst, false);
        if (s1 - s0 > 1) scatter(gin.data(), s0, s1, grads.input);
      }
      const T* src = input.plane(s0, 0);
      if (s1 - s0 > 1) {
        gather(input, s0, s1, x.data());
        src = x.data();
      }
      detail::gemm(spec.in_channels, kdim, static_cast<int>(cols), src,
                   col.data(), grads.weights.data().data(), true, false, true);
    }
  }
  return grads;
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  relu_inplace(y);
  return y;
}

template <typename T>
void relu_inplace(BasicTensor<T>& x) {
  for (T& v : x.data()) v = v > T(0) ? v : T(0);
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x,
                             const BasicTensor<T>& grad_out) {
  BasicTensor<T> g = grad_out;
  relu_mask_inplace(x, g);
  return g;
}

template <typename T>
void relu_mask_inplace(const BasicTensor<T>& activation, BasicTensor<T>& grad) {
  if (activation.shape() != grad.shape())
    fail(ErrorKind::kShapeMismatch,
         "relu backward: activation " + to_string(activation.shape()) +
             " vs grad " + to_string(grad.shape()));
  auto a = activation.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(a[i] > T(0))) g[i] = T(0);
}

template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& x, int parts) {
  check(parts > 0, ErrorKind::kInvalidArgument,
        "split parts must be positive, got " + std::to_string(parts));
  check(x.c() % parts == 0, ErrorKind::kInvalidArgument,
        "cannot split " + std::to_string(x.c()) + " channels into " +
            std::to_string(parts) + " equal parts");
  const int chunk = x.c() / parts;
  const std::size_t plane = x.shape().plane();
  std::vector<BasicTensor<T>> out;
  out.reserve(parts);
  for (int p = 0; p < parts; ++p) {
    BasicTensor<T> part(Shape{x.n(), chunk, x.h(), x.w()});
    for (int s = 0; s < x.n(); ++s) {
      const T* src = x.plane(s, p * chunk);
      std::copy(src, src + chunk * plane, part.plane(s, 0));
    }
    out.push_back(std::move(part));
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts) {
  check(!parts.empty(), ErrorKind::kInvalidArgument,
        "concat needs at least one tensor");
  const Shape first = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    check(p.n() == first.n && p.h() == first.h && p.w() == first.w,
          ErrorKind::kShapeMismatch,
          "concat: " + to_string(p.shape()) + " incompatible with " +
              to_string(first));
    channels += p.c();
  }
  BasicTensor<T> out(Shape{first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  for (int s = 0; s < first.n; ++s) {
    int offset = 0;
    for (const auto& p : parts) {
      const T* src = p.plane(s, 0);
      std::copy(src, src + p.c() * plane, out.plane(s, offset));
      offset += p.c();
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> add_elementwise(const BasicTensor<T>& a,
                               const BasicTensor<T>& b) {
  BasicTensor<T> out = a;
  add_inplace(out, b);
  return out;
}

template <typename T>
void add_inplace(BasicTensor<T>& acc, const BasicTensor<T>& x) {
  check(acc.shape() == x.shape(), ErrorKind::kShapeMismatch,
        "add: " + to_string(acc.shape()) + " vs " + to_string(x.shape()));
  auto a = acc.data();
  auto b = x.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

#define AFP_INSTANTIATE_NN(T)                                                  \
  template BasicTensor<T> conv_forward(const BasicTensor<T>&,                  \
                                       const BasicTensor<T>&,                  \
                                       std::span<const T>, const ConvSpec&);   \
  template ConvGrads<T> conv_backward(const BasicTensor<T>&,                   \
                                      const BasicTensor<T>&, const ConvSpec&,  \
                                      const BasicTensor<T>&, bool);            \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                 \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&);                \
  template void relu_inplace(BasicTensor<T>&);                                 \
  template void relu_mask_inplace(const BasicTensor<T>&, BasicTensor<T>&);     \
  template std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>&,   \
                                                      int);                    \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>>);    \
  template BasicTensor<T> add_elementwise(const BasicTensor<T>&,               \
                                          const BasicTensor<T>&);              \
  template void add_inplace(BasicTensor<T>&, const BasicTensor<T>&);

AFP_INSTANTIATE_NN(float)
AFP_INSTANTIATE_NN(double)

#undef AFP_INSTANTIATE_NN

}  // namespace nn
}  // namespace afp
