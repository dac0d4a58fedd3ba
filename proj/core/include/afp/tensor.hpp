#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "afp/error.hpp"

namespace afp {

// Shape of a dense (batch, channel, height, width) array.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

// Dense row-major (n, c, h, w) tensor with value semantics.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0))
      : shape_(validated(shape)), data_(shape.numel(), fill) {}
  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(validated(shape)), data_(std::move(data)) {
    check(data_.size() == shape_.numel(), ErrorKind::kShapeMismatch,
          "tensor data length " + std::to_string(data_.size()) +
              " does not match shape " + to_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int in, int ic, int ih, int iw) const {
    return ((static_cast<std::size_t>(in) * shape_.c + ic) * shape_.h + ih) *
               shape_.w +
           iw;
  }
  T& at(int in, int ic, int ih, int iw) { return data_[index(in, ic, ih, iw)]; }
  const T& at(int in, int ic, int ih, int iw) const {
    return data_[index(in, ic, ih, iw)];
  }

  // Pointer to the start of sample `in`, channel `ic`.
  T* plane(int in, int ic) { return data_.data() + index(in, ic, 0, 0); }
  const T* plane(int in, int ic) const {
    return data_.data() + index(in, ic, 0, 0);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  static Shape validated(Shape s) {
    check(s.n >= 0 && s.c >= 0 && s.h >= 0 && s.w >= 0,
          ErrorKind::kInvalidArgument,
          "negative tensor dimension in " + to_string(s));
    return s;
  }

  Shape shape_{};
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

// True when every element is finite.
template <typename T>
bool all_finite(const BasicTensor<T>& t);

}  // namespace afp
