#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace afp::detail {

#if defined(__AVX512F__)
inline constexpr int kVecBytes = 64;
#else
inline constexpr int kVecBytes = 32;
#endif

template <typename T>
using Vec [[gnu::vector_size(kVecBytes)]] = T;

// Register tile: kMr rows by two vectors of T.
template <typename T>
struct GemmTile {
  static constexpr int kLanes = kVecBytes / static_cast<int>(sizeof(T));
  static constexpr int kMr = 8;
  static constexpr int kNr = 2 * kLanes;
  static constexpr int kKc = 256;
};

template <typename T>
inline Vec<T> load_vec(const T* p) {
  Vec<T> v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <typename T>
inline void gemm_micro(int kc, const T* __restrict ap, const T* __restrict bp,
                       T* __restrict c, int ldc, int rows, int cols) {
  constexpr int kMr = GemmTile<T>::kMr;
  constexpr int kNr = GemmTile<T>::kNr;
  constexpr int kLanes = GemmTile<T>::kLanes;
  Vec<T> acc[kMr][2];
  for (int r = 0; r < kMr; ++r) acc[r][0] = acc[r][1] = Vec<T>{};
  for (int p = 0; p < kc; ++p) {
    const Vec<T> b0 = load_vec(bp + static_cast<std::size_t>(p) * kNr);
    const Vec<T> b1 = load_vec(bp + static_cast<std::size_t>(p) * kNr + kLanes);
    const T* a = ap + static_cast<std::size_t>(p) * kMr;
#pragma GCC unroll 8
    for (int r = 0; r < kMr; ++r) {
      acc[r][0] += a[r] * b0;
      acc[r][1] += a[r] * b1;
    }
  }
  alignas(64) T tile[kMr][kNr];
  for (int r = 0; r < kMr; ++r) {
    std::memcpy(&tile[r][0], &acc[r][0], sizeof(Vec<T>));
    std::memcpy(&tile[r][kLanes], &acc[r][1], sizeof(Vec<T>));
  }
  for (int r = 0; r < rows; ++r) {
    T* crow = c + static_cast<std::size_t>(r) * ldc;
    for (int j = 0; j < cols; ++j) crow[j] += tile[r][j];
  }
}

// C(m x n) (+)= op(A)(m x k) * op(B)(k x n), row-major. With trans_a the
// buffer holds A^T (k x m); with trans_b it holds B^T (n x k).
// Summation order depends only on (m, n, k), so results are reproducible.
template <typename T>
void gemm(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate,
          bool trans_a = false, bool trans_b = false) {
  constexpr int kMr = GemmTile<T>::kMr;
  constexpr int kNr = GemmTile<T>::kNr;
  constexpr int kKc = GemmTile<T>::kKc;
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, T(0));
  if (m == 0 || n == 0 || k == 0) return;

  const int m_panels = (m + kMr - 1) / kMr;
  const int n_panels = (n + kNr - 1) / kNr;
  thread_local std::vector<T> apack;
  thread_local std::vector<T> bpack;

  for (int k0 = 0; k0 < k; k0 += kKc) {
    const int kc = std::min(kKc, k - k0);
    apack.assign(static_cast<std::size_t>(m_panels) * kc * kMr, T(0));
    for (int ip = 0; ip < m_panels; ++ip) {
      T* dst = apack.data() + static_cast<std::size_t>(ip) * kc * kMr;
      const int rows = std::min(kMr, m - ip * kMr);
      if (trans_a) {
        for (int p = 0; p < kc; ++p) {
          const T* src = a + static_cast<std::size_t>(k0 + p) * m + ip * kMr;
          for (int r = 0; r < rows; ++r) dst[p * kMr + r] = src[r];
        }
      } else {
        for (int r = 0; r < rows; ++r) {
          const T* src = a + static_cast<std::size_t>(ip * kMr + r) * k + k0;
          for (int p = 0; p < kc; ++p) dst[p * kMr + r] = src[p];
        }
      }
    }
    bpack.resize(static_cast<std::size_t>(kc) * kNr);
    for (int jp = 0; jp < n_panels; ++jp) {
      const int j0 = jp * kNr;
      const int cols = std::min(kNr, n - j0);
      if (cols < kNr) std::fill(bpack.begin(), bpack.end(), T(0));
      if (trans_b) {
        for (int j = 0; j < cols; ++j) {
          const T* src = b + static_cast<std::size_t>(j0 + j) * k + k0;
          for (int p = 0; p < kc; ++p)
            bpack[static_cast<std::size_t>(p) * kNr + j] = src[p];
        }
      } else {
        for (int p = 0; p < kc; ++p) {
          const T* src = b + static_cast<std::size_t>(k0 + p) * n + j0;
          std::copy(src, src + cols,
                    bpack.data() + static_cast<std::size_t>(p) * kNr);
        }
      }
      for (int ip = 0; ip < m_panels; ++ip) {
        const int rows = std::min(kMr, m - ip * kMr);
        gemm_micro<T>(kc,
                      apack.data() + static_cast<std::size_t>(ip) * kc * kMr,
                      bpack.data(),
                      c + static_cast<std::size_t>(ip * kMr) * n + j0, n, rows,
                      cols);
      }
    }
  }
}

// dst(cols x rows) = src(rows x cols)^T
template <typename T>
void transpose(int rows, int cols, const T* src, T* dst) {
  constexpr int kBlock = 32;
  for (int r0 = 0; r0 < rows; r0 += kBlock) {
    for (int c0 = 0; c0 < cols; c0 += kBlock) {
      const int r1 = std::min(rows, r0 + kBlock);
      const int c1 = std::min(cols, c0 + kBlock);
      for (int r = r0; r < r1; ++r)
        for (int cc = c0; cc < c1; ++cc)
          dst[static_cast<std::size_t>(cc) * rows + r] =
              src[static_cast<std::size_t>(r) * cols + cc];
    }
  }
}

}  // namespace afp::detail
