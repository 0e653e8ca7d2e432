#include "fptt/optim.hpp"

#include <cmath>

namespace fptt {

template <typename T>
void optimizer_step(OptimizerState<T>& state, std::span<Tensor<T>> params, std::span<const std::vector<T>> grads) {
  if (params.size() != grads.size()) throw DimensionError("optimizer_step: one gradient per parameter required");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!grads[i].empty() && grads[i].size() != params[i].numel())
      throw DimensionError("optimizer_step: gradient " + std::to_string(i) + " does not match parameter shape " +
                           shape_str(params[i].shape()));
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), T(0));
      state.second_moment.emplace_back(p.numel(), T(0));
    }
  }
  if (state.first_moment.size() != params.size())
    throw DimensionError("optimizer_step: parameter list changed since the first step");

  const auto& cfg = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const T lr = static_cast<T>(cfg.learning_rate);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T eps = static_cast<T>(cfg.epsilon);
  const T wd = static_cast<T>(cfg.weight_decay);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    const auto& g = grads[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const bool decays = state.decay.empty() || state.decay[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      T gj = g.empty() ? T(0) : g[j];
      if (decays && wd != T(0)) {
        if (cfg.mode == OptimizerMode::AdamW)
          p[j] -= lr * wd * p[j];
        else
          gj += wd * p[j];
      }
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      const T mhat = m[j] / bc1, vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
Optimizer<T>::Optimizer(std::vector<Tensor<T>> params, OptimizerConfig config, std::vector<bool> decay)
    : params_(std::move(params)) {
  state_.config = config;
  state_.decay = std::move(decay);
}

template <typename T>
void Optimizer<T>::step() {
  std::vector<std::vector<T>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.emplace_back(p.grad_view().begin(), p.grad_view().end());
  optimizer_step<T>(state_, params_, grads);
}

template <typename T>
void Optimizer<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template void optimizer_step(OptimizerState<float>&, std::span<Tensor<float>>, std::span<const std::vector<float>>);
template void optimizer_step(OptimizerState<double>&, std::span<Tensor<double>>,
                             std::span<const std::vector<double>>);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace fptt
