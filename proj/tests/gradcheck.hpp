#pragma once

// Central finite-difference oracle for tape gradients. Test-only: it evaluates
// the loss closure through plain forward passes and never touches backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fptt/ops.hpp"
#include "fptt/rng.hpp"
#include "fptt/tensor.hpp"

namespace fptt::testing {

using LossFn = std::function<Tensor<double>()>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// ‖a − n‖₂ / max(‖a‖₂, ‖n‖₂) per input, maximised over inputs.
inline GradCheckResult gradcheck(std::vector<Tensor<double>> inputs, const LossFn& loss_fn, double step = 1e-3) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = loss_fn();
    backward(loss);
  }
  GradCheckResult result;
  NoGradScope<double> no_grad;
  for (auto& in : inputs) {
    const auto analytic = in.grad();
    std::vector<double> numeric(in.numel());
    for (std::size_t i = 0; i < in.numel(); ++i) {
      const double saved = in[i];
      in[i] = saved + step;
      const double up = loss_fn().item();
      in[i] = saved - step;
      const double down = loss_fn().item();
      in[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
    }
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff) / denom);
    result.checked += in.numel();
  }
  return result;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum so non-scalar outputs give a non-trivial upstream gradient.
inline Tensor<double> weighted_sum(const Tensor<double>& out, const Tensor<double>& weights) {
  return sum(mul(out, weights));
}

}  // namespace fptt::testing

#include <string>

#include "fptt/nn.hpp"

namespace fptt::testing {

struct OpGradReport {
  std::string op;
  std::size_t instances = 0;
  double worst_rel_error = 0.0;
};

// Runs `instances` randomized finite-difference checks for every
// differentiable op in double precision.
inline std::vector<OpGradReport> run_gradient_suite(std::size_t instances, std::uint64_t seed) {
  std::vector<OpGradReport> reports;
  Rng rng(seed);
  auto run = [&](const std::string& name, const std::function<GradCheckResult()>& one) {
    OpGradReport rep{name, 0, 0.0};
    for (std::size_t i = 0; i < instances; ++i) {
      rep.worst_rel_error = std::max(rep.worst_rel_error, one().max_rel_error);
      rep.instances += 1;
    }
    reports.push_back(rep);
  };
  auto dims = [&](int lo, int hi) { return static_cast<std::size_t>(rng.uniform_int(lo, hi)); };

  run("add", [&] {
    Shape s{dims(1, 4), dims(1, 5)};
    auto a = random_tensor(s, rng), b = random_tensor(s, rng), w = random_tensor(s, rng);
    return gradcheck({a, b}, [&] { return weighted_sum(add(a, b), w); });
  });
  run("add_broadcast", [&] {
    const std::size_t n = dims(1, 4), d = dims(1, 5);
    auto a = random_tensor({n, d}, rng), b = random_tensor({d}, rng), w = random_tensor({n, d}, rng);
    return gradcheck({a, b}, [&] { return weighted_sum(add(a, b), w); });
  });
  run("sub", [&] {
    Shape s{dims(1, 4), dims(1, 5)};
    auto a = random_tensor(s, rng), b = random_tensor(s, rng), w = random_tensor(s, rng);
    return gradcheck({a, b}, [&] { return weighted_sum(sub(a, b), w); });
  });
  run("mul", [&] {
    Shape s{dims(1, 4), dims(1, 5)};
    auto a = random_tensor(s, rng), b = random_tensor(s, rng), w = random_tensor(s, rng);
    return gradcheck({a, b}, [&] { return weighted_sum(mul(a, b), w); });
  });
  run("scale", [&] {
    Shape s{dims(1, 4), dims(1, 5)};
    auto a = random_tensor(s, rng), w = random_tensor(s, rng);
    const double f = rng.uniform(-2, 2);
    return gradcheck({a}, [&] { return weighted_sum(scale(a, f), w); });
  });
  run("matmul", [&] {
    const std::size_t m = dims(1, 4), k = dims(1, 5), n = dims(1, 4);
    auto a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng), w = random_tensor({m, n}, rng);
    return gradcheck({a, b}, [&] { return weighted_sum(matmul(a, b), w); });
  });
  run("transpose", [&] {
    const std::size_t m = dims(1, 4), n = dims(1, 5);
    auto a = random_tensor({m, n}, rng), w = random_tensor({n, m}, rng);
    return gradcheck({a}, [&] { return weighted_sum(transpose(a), w); });
  });
  run("reshape", [&] {
    const std::size_t m = dims(1, 4), n = dims(1, 5);
    auto a = random_tensor({m, n}, rng), w = random_tensor({n * m}, rng);
    return gradcheck({a}, [&] { return weighted_sum(reshape(a, {m * n}), w); });
  });
  run("softmax", [&] {
    Shape s{dims(1, 3), dims(2, 5), dims(1, 3)};
    const int axis = static_cast<int>(rng.uniform_int(0, 2));
    auto a = random_tensor(s, rng, -2, 2), w = random_tensor(s, rng);
    return gradcheck({a}, [&] { return weighted_sum(softmax(a, axis), w); });
  });
  run("layer_norm", [&] {
    const std::size_t n = dims(1, 4), d = dims(3, 6);
    auto x = random_tensor({n, d}, rng, -2, 2), g = random_tensor({d}, rng, 0.5, 1.5), b = random_tensor({d}, rng);
    auto w = random_tensor({n, d}, rng);
    return gradcheck({x, g, b}, [&] { return weighted_sum(layer_norm(x, g, b, 1e-5), w); });
  });
  run("gelu", [&] {
    Shape s{dims(1, 4), dims(1, 5)};
    auto a = random_tensor(s, rng, -3, 3), w = random_tensor(s, rng);
    return gradcheck({a}, [&] { return weighted_sum(gelu(a), w); });
  });
  run("silu", [&] {
    Shape s{dims(1, 4), dims(1, 5)};
    auto a = random_tensor(s, rng, -3, 3), w = random_tensor(s, rng);
    return gradcheck({a}, [&] { return weighted_sum(silu(a), w); });
  });
  run("clamp", [&] {
    Shape s{dims(1, 4), dims(1, 5)};
    auto a = random_tensor(s, rng, -2, 2), w = random_tensor(s, rng);
    for (auto& v : a.data())  // keep finite differences off the kinks
      if (std::abs(std::abs(v) - 1.0) < 0.01) v += 0.05;
    return gradcheck({a}, [&] { return weighted_sum(clamp(a, -1.0, 1.0), w); });
  });
  run("sum", [&] {
    auto a = random_tensor({dims(1, 4), dims(1, 5)}, rng);
    return gradcheck({a}, [&] { return scale(sum(a), 0.7); });
  });
  run("mean", [&] {
    auto a = random_tensor({dims(1, 4), dims(1, 5)}, rng);
    return gradcheck({a}, [&] { return scale(mean(a), 1.3); });
  });
  run("mean_abs_error", [&] {
    Shape s{dims(1, 4), dims(1, 5)};
    auto a = random_tensor(s, rng), b = random_tensor(s, rng);
    for (std::size_t i = 0; i < a.numel(); ++i)
      if (std::abs(a[i] - b[i]) < 0.01) a[i] += 0.05;
    return gradcheck({a, b}, [&] { return mean_abs_error(a, b); });
  });
  run("mean_squared_error", [&] {
    Shape s{dims(1, 4), dims(1, 5)};
    auto a = random_tensor(s, rng), b = random_tensor(s, rng);
    return gradcheck({a, b}, [&] { return mean_squared_error(a, b); });
  });
  run("conv2d", [&] {
    const std::size_t cin = dims(1, 3), cout = dims(1, 3), h = dims(3, 6), w = dims(3, 6);
    const std::size_t k = rng.bernoulli(0.5) ? 3 : 1, stride = dims(1, 2), pad = k == 3 ? dims(0, 1) : 0;
    auto x = random_tensor({cin, h, w}, rng), ker = random_tensor({cout, cin, k, k}, rng);
    auto b = random_tensor({cout}, rng);
    const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
    auto wt = random_tensor({cout, oh, ow}, rng);
    return gradcheck({x, ker, b}, [&] { return weighted_sum(conv2d(x, ker, b, stride, pad), wt); });
  });
  run("upsample_nearest", [&] {
    const std::size_t c = dims(1, 3), h = dims(1, 4), w = dims(1, 4);
    auto x = random_tensor({c, h, w}, rng), wt = random_tensor({c, 2 * h, 2 * w}, rng);
    return gradcheck({x}, [&] { return weighted_sum(upsample_nearest(x, 2), wt); });
  });
  run("embedding_lookup", [&] {
    const std::size_t vocab = dims(2, 6), d = dims(1, 4), n = dims(1, 6);
    std::vector<int> ids(n);
    for (auto& id : ids) id = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(vocab) - 1));
    auto table = random_tensor({vocab, d}, rng), wt = random_tensor({n, d}, rng);
    return gradcheck({table}, [&] { return weighted_sum(embedding_lookup<double>(table, ids), wt); });
  });
  run("cross_entropy_logits", [&] {
    const std::size_t n = dims(1, 5), vocab = dims(2, 7);
    std::vector<int> tg(n);
    for (auto& t : tg) t = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(vocab) - 1));
    auto logits = random_tensor({n, vocab}, rng, -3, 3);
    return gradcheck({logits}, [&] { return cross_entropy_logits<double>(logits, tg); });
  });
  run("concat_rows", [&] {
    const std::size_t d = dims(1, 4);
    auto a = random_tensor({dims(1, 3), d}, rng), b = random_tensor({dims(1, 3), d}, rng);
    auto w = random_tensor({a.dim(0) + b.dim(0), d}, rng);
    return gradcheck({a, b}, [&] {
      std::vector<Tensor<double>> parts{a, b};
      return weighted_sum(concat_rows<double>(parts), w);
    });
  });
  run("slice_rows", [&] {
    const std::size_t n = dims(2, 6), d = dims(1, 4);
    const std::size_t b0 = dims(0, static_cast<int>(n) - 1), e0 = dims(static_cast<int>(b0) + 1, static_cast<int>(n));
    auto a = random_tensor({n, d}, rng), w = random_tensor({e0 - b0, d}, rng);
    return gradcheck({a}, [&] { return weighted_sum(slice_rows(a, b0, e0), w); });
  });
  run("scaled_dot_attention", [&] {
    const std::size_t heads = dims(1, 2), d = heads * dims(1, 3);
    const bool causal = rng.bernoulli(0.5);
    const std::size_t nq = dims(1, 4), nk = causal ? nq : dims(1, 4);
    auto q = random_tensor({nq, d}, rng), k = random_tensor({nk, d}, rng), v = random_tensor({nk, d}, rng);
    auto w = random_tensor({nq, d}, rng);
    return gradcheck({q, k, v}, [&] { return weighted_sum(scaled_dot_attention(q, k, v, heads, causal), w); });
  });
  run("mlp_composite", [&] {
    const std::size_t n = dims(1, 4), d = dims(2, 4), hdim = dims(2, 6);
    auto x = random_tensor({n, d}, rng), w1 = random_tensor({d, hdim}, rng), b1 = random_tensor({hdim}, rng);
    auto w2 = random_tensor({hdim, 3}, rng);
    std::vector<int> tg(n);
    for (auto& t : tg) t = static_cast<int>(rng.uniform_int(0, 2));
    return gradcheck({x, w1, b1, w2},
                     [&] { return cross_entropy_logits<double>(matmul(gelu(add(matmul(x, w1), b1)), w2), tg); });
  });
  run("transformer_stack", [&] {
    ParameterSet<double> params;
    StackConfig cfg{8, 2, 1, true, rng.bernoulli(0.5), true, 2};
    TransformerStack<double> stack(cfg, rng, params, "stack");
    for (auto t : params.tensors())  // move off the trivial init point
      for (auto& v : t.data()) v += rng.uniform(-0.3, 0.3);
    const std::size_t n = dims(1, 3);
    auto x = random_tensor({n, 8}, rng, -2, 2), ctx = random_tensor({dims(1, 3), 8}, rng), w = random_tensor({n, 8}, rng);
    auto inputs = params.tensors();
    inputs.push_back(x);
    inputs.push_back(ctx);
    return gradcheck(inputs, [&] { return weighted_sum(stack.forward(x, &ctx), w); });
  });
  return reports;
}

}  // namespace fptt::testing
