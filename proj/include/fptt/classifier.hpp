#pragma once

#include <cstdint>
#include <functional>
#include <variant>
#include <vector>

#include "fptt/metrics.hpp"
#include "fptt/nn.hpp"
#include "fptt/optim.hpp"
#include "fptt/tokens.hpp"

// Encoder-style success classifier over either a slot representation or the
// tokens of one frame.

namespace fptt {

enum class ClassifierInput { Slots, Tokens };

struct ClassifierConfig {
  ClassifierInput input = ClassifierInput::Slots;
  std::size_t input_rows = 4;    // slots, or tokens per frame
  std::size_t input_width = 64;  // slot width (Slots only)
  std::size_t vocab = 32;        // token vocabulary (Tokens only)
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t layers = 2;
  std::size_t mlp_ratio = 4;

  void validate() const;
};

// Λ_T rows or z_T.
using ClassifierFeatures = std::variant<Tensor<float>, FrameTokens>;

struct LabeledFeatures {
  ClassifierFeatures features;
  physics::Label label = physics::Label::Failure;
};

class Classifier {
 public:
  Classifier(const ClassifierConfig& config, std::uint64_t seed);

  const ClassifierConfig& config() const { return cfg_; }
  ParameterSet<float>& parameters() { return params_; }
  const ParameterSet<float>& parameters() const { return params_; }

  // Logits {failure, success}, shape [2].
  Tensor<float> classify(const ClassifierFeatures& input) const;
  physics::Label predict(const ClassifierFeatures& input) const;

 private:
  Tensor<float> embed(const ClassifierFeatures& input) const;

  ClassifierConfig cfg_;
  ParameterSet<float> params_;
  Linear<float> adapter_;
  Tensor<float> token_embedding_;
  Tensor<float> positions_;  // CLS + input rows
  Tensor<float> cls_;
  TransformerStack<float> stack_;
  Linear<float> head_;
};

struct ClassifierTrainOptions {
  std::size_t steps = 200;
  std::size_t batch_size = 16;
  OptimizerConfig optimizer = paper_transformer_optimizer();
  std::uint64_t seed = 0;
};

// Mean cross-entropy over a batch of labeled inputs.
Tensor<float> classifier_loss(const Classifier& clf, const std::vector<const LabeledFeatures*>& batch);

// Returns the mean training loss over the run.
double train_classifier(Classifier& clf, const std::vector<LabeledFeatures>& data, const ClassifierTrainOptions& opts);

struct ClassifierEvaluation {
  ConfusionCounts counts;
  double loss = 0.0;
};

ClassifierEvaluation evaluate_classifier(const Classifier& clf, const std::vector<LabeledFeatures>& data);

}  // namespace fptt
