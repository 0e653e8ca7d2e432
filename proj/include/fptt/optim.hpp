#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fptt/tensor.hpp"

namespace fptt {

enum class OptimizerMode { Adam, AdamW };

struct OptimizerConfig {
  OptimizerMode mode = OptimizerMode::Adam;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Tokenizer optimizer at paper scale: Adam, lr 1e-4.
inline OptimizerConfig paper_tokenizer_optimizer() { return {OptimizerMode::Adam, 1e-4, 0.0, 0.9, 0.999, 1e-8}; }
// Transformer optimizer at paper scale: AdamW, lr 6e-4, decay 0.1, betas (0.9, 0.95).
inline OptimizerConfig paper_transformer_optimizer() { return {OptimizerMode::AdamW, 6e-4, 0.1, 0.9, 0.95, 1e-8}; }

template <typename T>
struct OptimizerState {
  OptimizerConfig config;
  std::uint64_t step_count = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  // Per-parameter weight-decay switch; empty means every parameter decays.
  std::vector<bool> decay;
};

// One Adam / AdamW update with bias correction. Adam folds weight decay into
// the gradient (L2); AdamW applies it directly to the weights (decoupled).
// An empty gradient vector stands for an all-zero gradient.
template <typename T>
void optimizer_step(OptimizerState<T>& state, std::span<Tensor<T>> params, std::span<const std::vector<T>> grads);

// Binds a parameter list to an optimizer state; reads gradients from the
// parameters themselves.
template <typename T>
class Optimizer {
 public:
  Optimizer(std::vector<Tensor<T>> params, OptimizerConfig config, std::vector<bool> decay = {});

  void step();
  void zero_grad();

  const OptimizerState<T>& state() const { return state_; }
  std::vector<Tensor<T>>& params() { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  OptimizerState<T> state_;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace fptt
