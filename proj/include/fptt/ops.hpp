#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fptt/tensor.hpp"

// Differentiable operations. Each op records itself on the thread's active
// tape when at least one input requires a gradient; otherwise it is a plain
// forward computation.

namespace fptt {

// Elementwise a + b. `b` may also match a trailing suffix of a's shape, in which
// case it is broadcast over the leading extents (bias rows, positional tables).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// Softmax along `axis` (negative counts from the back), max-shifted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1);

// Normalizes each slice along the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);  // tanh approximation
template <typename T>
Tensor<T> silu(const Tensor<T>& x);
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
template <typename T>
Tensor<T> mean_abs_error(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mean_squared_error(const Tensor<T>& a, const Tensor<T>& b);

// Cross-correlation of a C_in×H×W image with a C_out×C_in×k×k kernel.
// `bias` (C_out) may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding);
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor);

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> ids);

// Mean over rows of -log softmax(logits)[target].
template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, std::span<const int> targets);

template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& x);
// Forward value of `quantized`, gradient routed unchanged to `latents`.
template <typename T>
Tensor<T> straight_through(const Tensor<T>& latents, const Tensor<T>& quantized);

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

// Multi-head scaled dot-product attention on already-projected q (n_q×d),
// k and v (n_k×d). With `causal`, query i sees keys 0..i only.
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                               bool causal);

// Multiply-accumulate instrumentation for attention score computation
// (Q·Kᵀ). Per-thread.
struct AttentionCounters {
  std::uint64_t score_macs = 0;
  std::uint64_t calls = 0;
};
AttentionCounters& attention_counters();
void reset_attention_counters();

// Forward NaN/Inf detection. Defaults to on in debug builds only.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

}  // namespace fptt
