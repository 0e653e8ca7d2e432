#include "fptt/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fptt::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

// B is n×k; returns its k×n transpose so the row kernel streams contiguously.
template <typename T>
std::vector<T> transpose_copy(const T* b, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = b[r * cols + c];
  return out;
}

// One output row: c_i = Σ_p a(i,p) · b_p, with b row-major k×n.
template <typename T>
inline void gemm_row(const GemmArgs& g, std::size_t i, const T* a, const T* b, T* c) {
  T* ci = c + i * g.n;
  if (!g.accumulate) std::fill(ci, ci + g.n, T(0));
  for (std::size_t p = 0; p < g.k; ++p) {
    const T aip = g.trans_a ? a[p * g.m + i] : a[i * g.k + p];
    const T* bp = b + p * g.n;
    for (std::size_t j = 0; j < g.n; ++j) ci[j] += aip * bp[j];
  }
}

}  // namespace

namespace serial {

template <typename T>
void gemm(const GemmArgs& g, const T* a, const T* b, T* c) {
  std::vector<T> bt;
  if (g.trans_b) {
    bt = transpose_copy(b, g.n, g.k);
    b = bt.data();
  }
  for (std::size_t i = 0; i < g.m; ++i) gemm_row(g, i, a, b, c);
}

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* cols) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t row = 0; row < channels * kernel * kernel; ++row) {
    const std::size_t ch = row / (kernel * kernel);
    const std::size_t ky = (row / kernel) % kernel;
    const std::size_t kx = row % kernel;
    T* dst = cols + row * plane;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                            ix < static_cast<std::ptrdiff_t>(w);
        dst[oy * out_w + ox] = inside ? x[(ch * h + iy) * w + ix] : T(0);
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* x) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t kk = 0; kk < kernel * kernel; ++kk) {
      const std::size_t ky = kk / kernel, kx = kk % kernel;
      const T* src = cols + (ch * kernel * kernel + kk) * plane;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          x[(ch * h + iy) * w + ix] += src[oy * out_w + ox];
        }
      }
    }
  }
}

}  // namespace serial

namespace parallel {

template <typename T>
void gemm(const GemmArgs& g, const T* a, const T* b, T* c) {
  std::vector<T> bt;
  if (g.trans_b) {
    bt = transpose_copy(b, g.n, g.k);
    b = bt.data();
  }
  const auto m = static_cast<std::ptrdiff_t>(g.m);
  [[maybe_unused]] const bool big = g.m * g.n * g.k >= kParallelThreshold && g.m > 1;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < m; ++i) gemm_row(g, static_cast<std::size_t>(i), a, b, c);
}

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* cols) {
  const auto rows = static_cast<std::ptrdiff_t>(channels * kernel * kernel);
  const std::size_t plane = out_h * out_w;
  [[maybe_unused]] const bool big = rows * plane >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const auto r = static_cast<std::size_t>(row);
    const std::size_t ch = r / (kernel * kernel);
    const std::size_t kk = r % (kernel * kernel);
    const std::size_t ky = kk / kernel, kx = kk % kernel;
    T* dst = cols + r * plane;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                            ix < static_cast<std::ptrdiff_t>(w);
        dst[oy * out_w + ox] = inside ? x[(ch * h + iy) * w + ix] : T(0);
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* x) {
  // Channels write disjoint planes of x, so they can proceed independently.
  const auto nch = static_cast<std::ptrdiff_t>(channels);
  [[maybe_unused]] const bool big = channels * kernel * kernel * out_h * out_w >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t ch = 0; ch < nch; ++ch) {
    const auto c = static_cast<std::size_t>(ch);
    serial::col2im(cols + c * kernel * kernel * out_h * out_w, 1, h, w, kernel, stride, pad, out_h, out_w,
                   x + c * h * w);
  }
}

}  // namespace parallel

#define FPTT_INSTANTIATE(T)                                                                              \
  template void serial::gemm<T>(const GemmArgs&, const T*, const T*, T*);                                \
  template void parallel::gemm<T>(const GemmArgs&, const T*, const T*, T*);                              \
  template void serial::im2col<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t,          \
                                  std::size_t, std::size_t, std::size_t, std::size_t, T*);               \
  template void parallel::im2col<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t,        \
                                    std::size_t, std::size_t, std::size_t, std::size_t, T*);             \
  template void serial::col2im<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t,          \
                                  std::size_t, std::size_t, std::size_t, std::size_t, T*);               \
  template void parallel::col2im<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t,        \
                                    std::size_t, std::size_t, std::size_t, std::size_t, T*);

FPTT_INSTANTIATE(float)
FPTT_INSTANTIATE(double)

#undef FPTT_INSTANTIATE

}  // namespace fptt::kernels
