#pragma once

// Dense loops behind the graph ops. Row-major throughout; all routines
// accumulate into the output (C += ...).

#include <cstddef>

namespace txir::kernels {

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B,
             T* __restrict C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = A[i * K + k];
      if (a == T{0}) continue;
      const T* b = B + k * N;
#pragma omp simd
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B,
             T* __restrict C) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T s{0};
#pragma omp simd reduction(+ : s)
      for (std::size_t k = 0; k < K; ++k) s += a[k] * b[k];
      C[i * N + j] += s;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B,
             T* __restrict C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T a = A[k * M + i];
      if (a == T{0}) continue;
      T* c = C + i * N;
#pragma omp simd
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;
};

// col[(c*k + ky)*k + kx, oy*out_w + ox] = x[c, oy*s + ky - p, ox*s + kx - p] (zero outside)
template <typename T>
void im2col(const ConvGeometry& g, const T* __restrict x, T* __restrict col) {
  const std::size_t P = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* xc = x + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[ox] = T{0};
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters col back into x (accumulating).
template <typename T>
void col2im(const ConvGeometry& g, const T* __restrict col, T* __restrict x) {
  const std::size_t P = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* xc = x + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          T* dst = xc + static_cast<std::size_t>(iy) * g.width;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Valid output column range [lo, hi) for a stride-1 tap offset d = k - pad.
inline void tap_range(long d, std::size_t size, std::size_t& lo, std::size_t& hi) {
  const long n = static_cast<long>(size);
  const long l = d < 0 ? -d : 0;
  const long h = d > 0 ? n - d : n;
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(h > l ? h : l);
}

}  // namespace txir::kernels
