#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fptt/ops.hpp"
#include "fptt/rng.hpp"
#include "fptt/tensor.hpp"

// Transformer building blocks shared by the corrector, predictor, decoder,
// decoder-only baseline and classifier.

namespace fptt {

// Named parameter registry. Every trainable tensor of a model is registered
// exactly once; checkpoints and optimizers iterate it in registration order.
template <typename T>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  Tensor<T> add(std::string name, Tensor<T> tensor) {
    if (!names_.insert(name).second) throw ContractError("parameter registered twice: " + name);
    if (!storages_.insert(tensor.storage()).second) throw ContractError("tensor shared between parameters: " + name);
    tensor.set_requires_grad(true);
    entries_.emplace_back(std::move(name), tensor);
    return tensor;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
  }

  // Decoupled weight decay applies to matrices and embedding tables only.
  std::vector<bool> decay_mask() const {
    std::vector<bool> mask;
    for (const auto& e : entries_) mask.push_back(e.second.rank() >= 2);
    return mask;
  }

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.first == name) return &e.second;
    return nullptr;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_set<std::string> names_;
  std::unordered_set<const void*> storages_;
};

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // in × out
  Tensor<T> bias;    // out

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, ParameterSet<T>& params, const std::string& name,
         double stddev = 0.02) {
    weight = params.add(name + ".weight", normal_tensor<T>({in, out}, stddev, rng));
    bias = params.add(name + ".bias", Tensor<T>({out}));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(std::size_t width, ParameterSet<T>& params, const std::string& name) {
    gamma = params.add(name + ".gamma", Tensor<T>({width}, T(1)));
    beta = params.add(name + ".beta", Tensor<T>({width}));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, T(1e-5)); }
};

struct AttentionConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  bool causal = false;
  bool cross = false;

  void validate() const {
    if (n_heads == 0 || d_model % n_heads != 0)
      throw ContractError("attention: d_model " + std::to_string(d_model) + " not divisible by " +
                          std::to_string(n_heads) + " heads");
  }
};

template <typename T>
struct AttentionParams {
  Linear<T> query, key, value, output;

  AttentionParams() = default;
  AttentionParams(std::size_t d, Rng& rng, ParameterSet<T>& params, const std::string& name, double out_std) {
    query = Linear<T>(d, d, rng, params, name + ".q");
    key = Linear<T>(d, d, rng, params, name + ".k");
    value = Linear<T>(d, d, rng, params, name + ".v");
    output = Linear<T>(d, d, rng, params, name + ".o", out_std);
  }
};

// Projects q/k/v, attends per head, concatenates heads and projects out.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const AttentionParams<T>& params, const AttentionConfig& cfg) {
  cfg.validate();
  if (q.dim(1) != cfg.d_model || k.dim(1) != cfg.d_model || v.dim(1) != cfg.d_model)
    throw DimensionError("attention: input width differs from d_model");
  if (cfg.causal && q.dim(0) != k.dim(0)) throw ContractError("attention: causal masking requires n_q == n_k");
  auto attended = scaled_dot_attention(params.query(q), params.key(k), params.value(v), cfg.n_heads, cfg.causal);
  return params.output(attended);
}

// Adds learned position rows 0..n-1 of `table` to x.
template <typename T>
Tensor<T> add_positions(const Tensor<T>& x, const Tensor<T>& table) {
  const std::size_t n = x.dim(0);
  if (n > table.dim(0))
    throw CapacityError("add_positions: sequence of " + std::to_string(n) + " exceeds capacity " +
                        std::to_string(table.dim(0)));
  if (n == table.dim(0)) return add(x, table);
  return add(x, slice_rows(table, 0, n));
}

struct StackConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  bool self_attention = true;
  bool causal = false;
  bool cross_attention = false;
  std::size_t mlp_ratio = 4;
};

template <typename T>
struct TransformerBlock {
  std::optional<LayerNorm<T>> self_norm;
  std::optional<AttentionParams<T>> self_attn;
  std::optional<LayerNorm<T>> cross_norm;
  std::optional<LayerNorm<T>> context_norm;
  std::optional<AttentionParams<T>> cross_attn;
  LayerNorm<T> mlp_norm;
  Linear<T> fc_in, fc_out;
};

// Pre-norm residual stack:
//   x <- x + SelfAttn(LN(x))          (if self_attention)
//   x <- x + CrossAttn(LN(x), LN(ctx))    (if cross_attention)
//   x <- x + MLP(LN(x))               (GELU, hidden 4·d)
// followed by a final layer norm.
template <typename T>
class TransformerStack {
 public:
  TransformerStack() = default;

  TransformerStack(const StackConfig& cfg, Rng& rng, ParameterSet<T>& params, const std::string& name) : cfg_(cfg) {
    attention_config(false).validate();
    if (!cfg.self_attention && !cfg.cross_attention)
      throw ContractError("transformer stack needs self- or cross-attention");
    const double out_std = 0.02 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(cfg.n_layers, 1)));
    const std::size_t d = cfg.d_model, hidden = cfg.mlp_ratio * cfg.d_model;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string p = name + ".layer" + std::to_string(l);
      TransformerBlock<T> b;
      if (cfg.self_attention) {
        b.self_norm.emplace(d, params, p + ".self_norm");
        b.self_attn.emplace(d, rng, params, p + ".self_attn", out_std);
      }
      if (cfg.cross_attention) {
        b.cross_norm.emplace(d, params, p + ".cross_norm");
        b.context_norm.emplace(d, params, p + ".context_norm");
        b.cross_attn.emplace(d, rng, params, p + ".cross_attn", out_std);
      }
      b.mlp_norm = LayerNorm<T>(d, params, p + ".mlp_norm");
      b.fc_in = Linear<T>(d, hidden, rng, params, p + ".fc_in");
      b.fc_out = Linear<T>(hidden, d, rng, params, p + ".fc_out", out_std);
      blocks_.push_back(std::move(b));
    }
    final_norm_ = LayerNorm<T>(d, params, name + ".final_norm");
  }

  const StackConfig& config() const { return cfg_; }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>* context = nullptr) const {
    if (cfg_.cross_attention && (!context || !context->defined()))
      throw ContractError("transformer stack expects a context sequence");
    if (!cfg_.cross_attention && context && context->defined())
      throw ContractError("transformer stack is not configured for cross-attention");
    if (x.rank() != 2 || x.dim(1) != cfg_.d_model) throw DimensionError("transformer stack: input width mismatch");
    Tensor<T> h = x;
    for (const auto& b : blocks_) {
      if (b.self_attn) {
        auto n = (*b.self_norm)(h);
        h = add(h, multi_head_attention(n, n, n, *b.self_attn, attention_config(false)));
      }
      if (b.cross_attn) {
        auto n = (*b.cross_norm)(h);
        auto c = (*b.context_norm)(*context);
        h = add(h, multi_head_attention(n, c, c, *b.cross_attn, attention_config(true)));
      }
      h = add(h, b.fc_out(gelu(b.fc_in(b.mlp_norm(h)))));
    }
    return final_norm_(h);
  }

 private:
  AttentionConfig attention_config(bool cross) const {
    return AttentionConfig{cfg_.d_model, cfg_.n_heads, cross ? false : cfg_.causal, cross};
  }

  StackConfig cfg_;
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> final_norm_;
};

template <typename T>
Tensor<T> transformer_stack_forward(const Tensor<T>& x, const Tensor<T>* context, const TransformerStack<T>& stack) {
  return stack.forward(x, context);
}

}  // namespace fptt
