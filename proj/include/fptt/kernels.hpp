#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

// Dense inner loops behind the differentiable ops. Every kernel exists in a
// serial form, kept as the reference the tests compare against, and an
// OpenMP form that partitions output rows across threads. Each output element
// is accumulated in the same order in both, so results are bitwise equal.

namespace fptt::kernels {

struct GemmArgs {
  bool trans_a = false;  // A stored k×m instead of m×k
  bool trans_b = false;  // B stored n×k instead of k×n
  std::size_t m = 0, n = 0, k = 0;
  bool accumulate = false;  // C += op(A)·op(B) instead of C = ...
};

// Below this many multiply-accumulates the parallel variants run serially.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

namespace serial {

template <typename T>
void gemm(const GemmArgs& g, const T* a, const T* b, T* c);

// Unpacks a C×H×W image into a (C·k·k)×(Ho·Wo) column matrix.
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* cols);

// Adjoint of im2col: scatters columns back, accumulating into x.
template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* x);

}  // namespace serial

namespace parallel {

template <typename T>
void gemm(const GemmArgs& g, const T* a, const T* b, T* c);

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* cols);

template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* x);

}  // namespace parallel

// Entry points used by the ops; route to the parallel variants.
template <typename T>
inline void gemm(const GemmArgs& g, const T* a, const T* b, T* c) {
  parallel::gemm(g, a, b, c);
}

int max_threads();

}  // namespace fptt::kernels
