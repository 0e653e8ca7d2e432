#include "fptt/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>

#include "fptt/kernels.hpp"

namespace fptt {

namespace {

std::atomic<bool> g_finite_checks{debug_checks_enabled()};

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Tape<T>::active()) return false;
  for (const auto* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename T>
Tensor<T> make_output(Shape shape, bool track) {
  Tensor<T> out(std::move(shape));
  out.set_requires_grad(track);
  return out;
}

template <typename T>
void check_finite(const Tensor<T>& out, const char* op) {
  if (!g_finite_checks.load(std::memory_order_relaxed)) return;
  for (T v : out.data())
    if (!std::isfinite(v)) throw ContractError(std::string("non-finite value produced by ") + op);
}

template <typename T>
void record(std::initializer_list<const Tensor<T>*> inputs, const Tensor<T>& out,
            typename Tape<T>::BackwardFn fn) {
  std::vector<typename Tape<T>::Node> nodes;
  for (const auto* t : inputs)
    if (t->defined()) nodes.push_back(t->storage_ptr());
  Tape<T>::active()->record(std::move(nodes), out.storage_ptr(), std::move(fn));
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

template <typename T>
constexpr T kSqrt2OverPi = T(0.7978845608028654);

}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

AttentionCounters& attention_counters() {
  thread_local AttentionCounters counters;
  return counters;
}

void reset_attention_counters() { attention_counters() = {}; }

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool broadcast = a.shape() != b.shape();
  require(!broadcast || is_suffix(a.shape(), b.shape()),
          "add: shape " + shape_str(b.shape()) + " does not broadcast to " + shape_str(a.shape()));
  const bool track = tracking({&a, &b});
  auto out = make_output<T>(a.shape(), track);
  const std::size_t n = a.numel(), nb = b.numel();
  auto o = out.data();
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < n; ++i) o[i] = ad[i] + bd[i % nb];
  check_finite(out, "add");
  if (track) {
    auto *A = a.storage(), *B = b.storage(), *O = out.storage();
    record<T>({&a, &b}, out, [A, B, O, n, nb] {
      const T* g = O->grad.data();
      if (A->requires_grad) {
        T* ga = grad_buffer(A);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (B->requires_grad) {
        T* gb = grad_buffer(B);
        for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const bool track = tracking({&a, &b});
  auto out = make_output<T>(a.shape(), track);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  check_finite(out, "sub");
  if (track) {
    auto *A = a.storage(), *B = b.storage(), *O = out.storage();
    record<T>({&a, &b}, out, [A, B, O, n] {
      const T* g = O->grad.data();
      if (A->requires_grad) {
        T* ga = grad_buffer(A);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (B->requires_grad) {
        T* gb = grad_buffer(B);
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const bool track = tracking({&a, &b});
  auto out = make_output<T>(a.shape(), track);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  check_finite(out, "mul");
  if (track) {
    auto *A = a.storage(), *B = b.storage(), *O = out.storage();
    record<T>({&a, &b}, out, [A, B, O, n] {
      const T* g = O->grad.data();
      if (A->requires_grad) {
        T* ga = grad_buffer(A);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * B->data[i];
      }
      if (B->requires_grad) {
        T* gb = grad_buffer(B);
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * A->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  const bool track = tracking({&a});
  auto out = make_output<T>(a.shape(), track);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * factor;
  check_finite(out, "scale");
  if (track) {
    auto *A = a.storage(), *O = out.storage();
    record<T>({&a}, out, [A, O, n, factor] {
      const T* g = O->grad.data();
      T* ga = grad_buffer(A);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be matrices");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const bool track = tracking({&a, &b});
  auto out = make_output<T>({m, n}, track);
  kernels::gemm<T>({false, false, m, n, k, false}, a.data().data(), b.data().data(), out.data().data());
  check_finite(out, "matmul");
  if (track) {
    auto *A = a.storage(), *B = b.storage(), *O = out.storage();
    record<T>({&a, &b}, out, [A, B, O, m, n, k] {
      const T* g = O->grad.data();
      if (A->requires_grad)  // dA += dC · Bᵀ
        kernels::gemm<T>({false, true, m, k, n, true}, g, B->data.data(), grad_buffer(A));
      if (B->requires_grad)  // dB += Aᵀ · dC
        kernels::gemm<T>({true, false, k, n, m, true}, A->data.data(), g, grad_buffer(B));
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require(a.rank() == 2, "transpose: operand must be a matrix");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const bool track = tracking({&a});
  auto out = make_output<T>({c, r}, track);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  if (track) {
    auto *A = a.storage(), *O = out.storage();
    record<T>({&a}, out, [A, O, r, c] {
      const T* g = O->grad.data();
      T* ga = grad_buffer(A);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  const bool track = tracking({&a});
  auto out = make_output<T>(std::move(shape), track);
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  if (track) {
    auto *A = a.storage(), *O = out.storage();
    record<T>({&a}, out, [A, O] {
      T* ga = grad_buffer(A);
      for (std::size_t i = 0; i < O->grad.size(); ++i) ga[i] += O->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and activations

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "softmax: axis out of range");
  const auto ax = static_cast<std::size_t>(axis);
  const std::size_t n = x.dim(ax);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= x.dim(i);
  for (std::size_t i = ax + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const bool track = tracking({&x});
  auto out = make_output<T>(x.shape(), track);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      T z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  check_finite(out, "softmax");
  if (track) {
    auto *X = x.storage(), *O = out.storage();
    record<T>({&x}, out, [X, O, outer, inner, n] {
      const T* g = O->grad.data();
      const T* y = O->data.data();
      T* gx = grad_buffer(X);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t d = x.shape().back();
  require(gamma.numel() == d && beta.numel() == d, "layer_norm: gamma/beta width must equal last extent");
  const std::size_t rows = x.numel() / d;
  const bool track = tracking({&x, &gamma, &beta});
  auto out = make_output<T>(x.shape(), track);
  std::vector<T> xhat(x.numel()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    T mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= T(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= T(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (xr[i] - mu) * rstd[r];
      out[r * d + i] = xhat[r * d + i] * gamma[i] + beta[i];
    }
  }
  check_finite(out, "layer_norm");
  if (track) {
    auto *X = x.storage(), *G = gamma.storage(), *B = beta.storage(), *O = out.storage();
    record<T>({&x, &gamma, &beta}, out, [X, G, B, O, rows, d, xhat = std::move(xhat), rstd = std::move(rstd)] {
      const T* g = O->grad.data();
      if (G->requires_grad || B->requires_grad) {
        T* gg = G->requires_grad ? grad_buffer(G) : nullptr;
        T* gb = B->requires_grad ? grad_buffer(B) : nullptr;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < d; ++i) {
            if (gg) gg[i] += g[r * d + i] * xhat[r * d + i];
            if (gb) gb[i] += g[r * d + i];
          }
      }
      if (X->requires_grad) {
        T* gx = grad_buffer(X);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh = 0, mean_dh_xh = 0;
          for (std::size_t i = 0; i < d; ++i) {
            const T dh = g[r * d + i] * G->data[i];
            mean_dh += dh;
            mean_dh_xh += dh * xhat[r * d + i];
          }
          mean_dh /= T(d);
          mean_dh_xh /= T(d);
          for (std::size_t i = 0; i < d; ++i) {
            const T dh = g[r * d + i] * G->data[i];
            gx[r * d + i] += rstd[r] * (dh - mean_dh - xhat[r * d + i] * mean_dh_xh);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const bool track = tracking({&x});
  auto out = make_output<T>(x.shape(), track);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(kSqrt2OverPi<T> * (v + T(0.044715) * v * v * v)));
  }
  check_finite(out, "gelu");
  if (track) {
    auto *X = x.storage(), *O = out.storage();
    record<T>({&x}, out, [X, O, n] {
      const T* g = O->grad.data();
      T* gx = grad_buffer(X);
      for (std::size_t i = 0; i < n; ++i) {
        const T v = X->data[i];
        const T u = kSqrt2OverPi<T> * (v + T(0.044715) * v * v * v);
        const T th = std::tanh(u);
        const T du = kSqrt2OverPi<T> * (T(1) + T(3) * T(0.044715) * v * v);
        gx[i] += g[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  const bool track = tracking({&x});
  auto out = make_output<T>(x.shape(), track);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] / (T(1) + std::exp(-x[i]));
  check_finite(out, "silu");
  if (track) {
    auto *X = x.storage(), *O = out.storage();
    record<T>({&x}, out, [X, O, n] {
      const T* g = O->grad.data();
      T* gx = grad_buffer(X);
      for (std::size_t i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-X->data[i]));
        gx[i] += g[i] * s * (T(1) + X->data[i] * (T(1) - s));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  const bool track = tracking({&x});
  auto out = make_output<T>(x.shape(), track);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = std::clamp(x[i], lo, hi);
  if (track) {
    auto *X = x.storage(), *O = out.storage();
    record<T>({&x}, out, [X, O, n, lo, hi] {
      const T* g = O->grad.data();
      T* gx = grad_buffer(X);
      for (std::size_t i = 0; i < n; ++i)
        if (X->data[i] > lo && X->data[i] < hi) gx[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  const bool track = tracking({&x});
  auto out = make_output<T>({1}, track);
  out[0] = std::accumulate(x.data().begin(), x.data().end(), T(0));
  check_finite(out, "sum");
  if (track) {
    auto *X = x.storage(), *O = out.storage();
    record<T>({&x}, out, [X, O] {
      const T g = O->grad[0];
      T* gx = grad_buffer(X);
      for (std::size_t i = 0; i < X->data.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> mean_abs_error(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.numel() == b.numel(), "mean_abs_error: size mismatch");
  const bool track = tracking({&a, &b});
  auto out = make_output<T>({1}, track);
  const std::size_t n = a.numel();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(a[i] - b[i]);
  out[0] = acc / T(n);
  check_finite(out, "mean_abs_error");
  if (track) {
    auto *A = a.storage(), *B = b.storage(), *O = out.storage();
    record<T>({&a, &b}, out, [A, B, O, n] {
      const T g = O->grad[0] / T(n);
      T* ga = A->requires_grad ? grad_buffer(A) : nullptr;
      T* gb = B->requires_grad ? grad_buffer(B) : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const T diff = A->data[i] - B->data[i];
        const T s = diff > 0 ? T(1) : (diff < 0 ? T(-1) : T(0));
        if (ga) ga[i] += g * s;
        if (gb) gb[i] -= g * s;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_squared_error(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.numel() == b.numel(), "mean_squared_error: size mismatch");
  const bool track = tracking({&a, &b});
  auto out = make_output<T>({1}, track);
  const std::size_t n = a.numel();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  out[0] = acc / T(n);
  check_finite(out, "mean_squared_error");
  if (track) {
    auto *A = a.storage(), *B = b.storage(), *O = out.storage();
    record<T>({&a, &b}, out, [A, B, O, n] {
      const T g = T(2) * O->grad[0] / T(n);
      T* ga = A->requires_grad ? grad_buffer(A) : nullptr;
      T* gb = B->requires_grad ? grad_buffer(B) : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const T diff = A->data[i] - B->data[i];
        if (ga) ga[i] += g * diff;
        if (gb) gb[i] -= g * diff;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, std::span<const int> targets) {
  require(logits.rank() == 2, "cross_entropy_logits: logits must be n x V");
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  require(targets.size() == n, "cross_entropy_logits: one target per row required");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      throw IndexError("cross_entropy_logits: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(vocab) + ")");
  const bool track = tracking({&logits});
  auto out = make_output<T>({1}, track);
  std::vector<T> probs(n * vocab);
  T loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = logits.data().data() + r * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T z = 0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    const T logz = std::log(z) + mx;
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] = std::exp(row[j] - logz);
    loss += logz - row[targets[r]];
  }
  out[0] = loss / T(n);
  check_finite(out, "cross_entropy_logits");
  if (track) {
    auto *L = logits.storage(), *O = out.storage();
    std::vector<int> tg(targets.begin(), targets.end());
    record<T>({&logits}, out, [L, O, n, vocab, probs = std::move(probs), tg = std::move(tg)] {
      const T g = O->grad[0] / T(n);
      T* gl = grad_buffer(L);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < vocab; ++j)
          gl[r * vocab + j] += g * (probs[r * vocab + j] - (static_cast<int>(j) == tg[r] ? T(1) : T(0)));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  require(x.rank() == 3, "conv2d: input must be C x H x W");
  require(kernel.rank() == 4, "conv2d: kernel must be C_out x C_in x k x k");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kernel.dim(0), ks = kernel.dim(2);
  require(kernel.dim(1) == cin, "conv2d: kernel input channels do not match image");
  require(kernel.dim(3) == ks && ks % 2 == 1, "conv2d: kernel must be square with odd size");
  require(stride >= 1, "conv2d: stride must be positive");
  require(h + 2 * padding >= ks && w + 2 * padding >= ks, "conv2d: kernel larger than padded input");
  require(!bias.defined() || bias.numel() == cout, "conv2d: bias length must equal output channels");
  const std::size_t oh = (h + 2 * padding - ks) / stride + 1, ow = (w + 2 * padding - ks) / stride + 1;
  const std::size_t patch = cin * ks * ks, plane = oh * ow;

  const bool track = tracking({&x, &kernel, &bias});
  auto out = make_output<T>({cout, oh, ow}, track);
  auto cols = std::make_shared<std::vector<T>>(patch * plane);
  kernels::parallel::im2col(x.data().data(), cin, h, w, ks, stride, padding, oh, ow, cols->data());
  kernels::gemm<T>({false, false, cout, plane, patch, false}, kernel.data().data(), cols->data(),
                   out.data().data());
  if (bias.defined())
    for (std::size_t c = 0; c < cout; ++c)
      for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] += bias[c];
  check_finite(out, "conv2d");
  if (track) {
    auto *X = x.storage(), *K = kernel.storage(), *B = bias.defined() ? bias.storage() : nullptr;
    auto* O = out.storage();
    record<T>({&x, &kernel, &bias}, out, [=] {
      const T* g = O->grad.data();
      if (K->requires_grad)
        kernels::gemm<T>({false, true, cout, patch, plane, true}, g, cols->data(), grad_buffer(K));
      if (B && B->requires_grad) {
        T* gb = grad_buffer(B);
        for (std::size_t c = 0; c < cout; ++c)
          for (std::size_t p = 0; p < plane; ++p) gb[c] += g[c * plane + p];
      }
      if (X->requires_grad) {
        std::vector<T> dcols(patch * plane);
        kernels::gemm<T>({true, false, patch, plane, cout, false}, K->data.data(), g, dcols.data());
        kernels::parallel::col2im(dcols.data(), cin, h, w, ks, stride, padding, oh, ow, grad_buffer(X));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
  require(x.rank() == 3, "upsample_nearest: input must be C x H x W");
  require(factor >= 1, "upsample_nearest: factor must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), oh = h * factor, ow = w * factor;
  const bool track = tracking({&x});
  auto out = make_output<T>({c, oh, ow}, track);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        out[(ch * oh + y) * ow + xx] = x[(ch * h + y / factor) * w + xx / factor];
  if (track) {
    auto *X = x.storage(), *O = out.storage();
    record<T>({&x}, out, [=] {
      const T* g = O->grad.data();
      T* gx = grad_buffer(X);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx)
            gx[(ch * h + y / factor) * w + xx / factor] += g[(ch * oh + y) * ow + xx];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Indexing and plumbing

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> ids) {
  require(table.rank() == 2, "embedding_lookup: table must be V x d");
  require(!ids.empty(), "embedding_lookup: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside [0, " + std::to_string(vocab) +
                       ")");
  const bool track = tracking({&table});
  auto out = make_output<T>({ids.size(), d}, track);
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[r]) * d, d, out.data().data() + r * d);
  if (track) {
    auto *Tb = table.storage(), *O = out.storage();
    std::vector<int> idv(ids.begin(), ids.end());
    record<T>({&table}, out, [Tb, O, d, idv = std::move(idv)] {
      const T* g = O->grad.data();
      T* gt = grad_buffer(Tb);
      for (std::size_t r = 0; r < idv.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(idv[r]) * d + j] += g[r * d + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return x.detach();
}

template <typename T>
Tensor<T> straight_through(const Tensor<T>& latents, const Tensor<T>& quantized) {
  require(latents.shape() == quantized.shape(), "straight_through: shape mismatch");
  const bool track = tracking({&latents});
  auto out = make_output<T>(quantized.shape(), track);
  std::copy(quantized.data().begin(), quantized.data().end(), out.data().begin());
  if (track) {
    auto *Lt = latents.storage(), *O = out.storage();
    record<T>({&latents}, out, [Lt, O] {
      T* gl = grad_buffer(Lt);
      for (std::size_t i = 0; i < O->grad.size(); ++i) gl[i] += O->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  const std::size_t cols = parts[0].dim(1);
  std::size_t rows = 0;
  bool track = false;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.dim(1) == cols, "concat_rows: column counts differ");
    rows += p.dim(0);
    track = track || tracking({&p});
  }
  auto out = make_output<T>({rows, cols}, track);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.numel();
  }
  if (track) {
    std::vector<typename Tape<T>::Node> nodes;
    for (const auto& p : parts) nodes.push_back(p.storage_ptr());
    auto* O = out.storage();
    std::vector<TensorStorage<T>*> raw;
    for (const auto& p : parts) raw.push_back(p.storage());
    Tape<T>::active()->record(std::move(nodes), out.storage_ptr(), [O, raw = std::move(raw)] {
      std::size_t off = 0;
      for (auto* p : raw) {
        if (p->requires_grad) {
          T* gp = grad_buffer(p);
          for (std::size_t i = 0; i < p->data.size(); ++i) gp[i] += O->grad[off + i];
        }
        off += p->data.size();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require(x.rank() == 2 && begin < end && end <= x.dim(0), "slice_rows: invalid row range");
  const std::size_t cols = x.dim(1);
  const bool track = tracking({&x});
  auto out = make_output<T>({end - begin, cols}, track);
  std::copy_n(x.data().data() + begin * cols, (end - begin) * cols, out.data().data());
  if (track) {
    auto *X = x.storage(), *O = out.storage();
    record<T>({&x}, out, [X, O, begin, cols] {
      T* gx = grad_buffer(X) + begin * cols;
      for (std::size_t i = 0; i < O->grad.size(); ++i) gx[i] += O->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention

template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                               bool causal) {
  require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention: q, k, v must be matrices");
  const std::size_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1);
  require(k.dim(1) == d && v.dim(1) == d && v.dim(0) == nk, "attention: q/k/v widths or key counts differ");
  require(heads >= 1 && d % heads == 0, "attention: width must be divisible by head count");
  if (causal && nq != nk) throw ContractError("attention: causal masking requires n_q == n_k");
  const std::size_t dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(dh));

  auto& counters = attention_counters();
  counters.score_macs += static_cast<std::uint64_t>(nq) * nk * d;
  counters.calls += 1;

  const bool track = tracking({&q, &k, &v});
  auto out = make_output<T>({nq, d}, track);
  std::vector<T> probs(heads * nq * nk);
  const T* Q = q.data().data();
  const T* K = k.data().data();
  const T* V = v.data().data();
  T* Out = out.data().data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < nq; ++i) {
      T* p = probs.data() + (h * nq + i) * nk;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < nk; ++j) {
        T s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += Q[i * d + c0 + c] * K[j * d + c0 + c];
        s *= inv_sqrt;
        if (causal && j > i) s = -std::numeric_limits<T>::infinity();
        p[j] = s;
        mx = std::max(mx, s);
      }
      T z = 0;
      for (std::size_t j = 0; j < nk; ++j) {
        p[j] = (causal && j > i) ? T(0) : std::exp(p[j] - mx);
        z += p[j];
      }
      for (std::size_t j = 0; j < nk; ++j) p[j] /= z;
      T* o = Out + i * d + c0;
      for (std::size_t j = 0; j < nk; ++j) {
        if (causal && j > i) break;
        const T pj = p[j];
        for (std::size_t c = 0; c < dh; ++c) o[c] += pj * V[j * d + c0 + c];
      }
    }
  }
  check_finite(out, "scaled_dot_attention");
  if (track) {
    auto *Qs = q.storage(), *Ks = k.storage(), *Vs = v.storage(), *O = out.storage();
    record<T>({&q, &k, &v}, out, [=, probs = std::move(probs)] {
      const T* g = O->grad.data();
      T* gq = Qs->requires_grad ? grad_buffer(Qs) : nullptr;
      T* gk = Ks->requires_grad ? grad_buffer(Ks) : nullptr;
      T* gv = Vs->requires_grad ? grad_buffer(Vs) : nullptr;
      const T* Qd = Qs->data.data();
      const T* Kd = Ks->data.data();
      const T* Vd = Vs->data.data();
      std::vector<T> dp(nk);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        for (std::size_t i = 0; i < nq; ++i) {
          const T* p = probs.data() + (h * nq + i) * nk;
          const T* go = g + i * d + c0;
          T dot = 0;
          for (std::size_t j = 0; j < nk; ++j) {
            T s = 0;
            for (std::size_t c = 0; c < dh; ++c) s += go[c] * Vd[j * d + c0 + c];
            dp[j] = s;
            dot += s * p[j];
            if (gv)
              for (std::size_t c = 0; c < dh; ++c) gv[j * d + c0 + c] += p[j] * go[c];
          }
          for (std::size_t j = 0; j < nk; ++j) {
            const T ds = p[j] * (dp[j] - dot) * inv_sqrt;
            if (ds == T(0)) continue;
            if (gq)
              for (std::size_t c = 0; c < dh; ++c) gq[i * d + c0 + c] += ds * Kd[j * d + c0 + c];
            if (gk)
              for (std::size_t c = 0; c < dh; ++c) gk[j * d + c0 + c] += ds * Qd[i * d + c0 + c];
          }
        }
      }
    });
  }
  return out;
}

#define FPTT_INSTANTIATE(T)                                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> scale(const Tensor<T>&, T);                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> transpose(const Tensor<T>&);                                                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                   \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                     \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                \
  template Tensor<T> gelu(const Tensor<T>&);                                                             \
  template Tensor<T> silu(const Tensor<T>&);                                                             \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                              \
  template Tensor<T> mean(const Tensor<T>&);                                                             \
  template Tensor<T> mean_abs_error(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mean_squared_error(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const int>);                           \
  template Tensor<T> cross_entropy_logits(const Tensor<T>&, std::span<const int>);                       \
  template Tensor<T> stop_gradient(const Tensor<T>&);                                                    \
  template Tensor<T> straight_through(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                                            \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                             \
  template Tensor<T> scaled_dot_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, bool);

FPTT_INSTANTIATE(float)
FPTT_INSTANTIATE(double)

#undef FPTT_INSTANTIATE

}  // namespace fptt
