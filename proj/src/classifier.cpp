#include "fptt/classifier.hpp"

#include "fptt/errors.hpp"
#include "fptt/ops.hpp"

namespace fptt {

void ClassifierConfig::validate() const {
  if (input_rows == 0) throw ContractError("classifier: empty input");
  if (input == ClassifierInput::Slots && input_width == 0) throw ContractError("classifier: zero slot width");
  if (input == ClassifierInput::Tokens && vocab == 0) throw ContractError("classifier: empty vocabulary");
  AttentionConfig{d_model, n_heads, false, false}.validate();
}

Classifier::Classifier(const ClassifierConfig& config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t d = cfg_.d_model;
  if (cfg_.input == ClassifierInput::Slots)
    adapter_ = Linear<float>(cfg_.input_width, d, rng, params_, "adapter");
  else
    token_embedding_ = params_.add("token_embedding", normal_tensor<float>({cfg_.vocab, d}, 0.02, rng));
  positions_ = params_.add("positions", normal_tensor<float>({cfg_.input_rows + 1, d}, 0.02, rng));
  cls_ = params_.add("cls", normal_tensor<float>({1, d}, 0.02, rng));
  stack_ = TransformerStack<float>(StackConfig{d, cfg_.n_heads, cfg_.layers, true, false, false, cfg_.mlp_ratio}, rng,
                                   params_, "encoder");
  head_ = Linear<float>(d, 2, rng, params_, "head");
}

Tensor<float> Classifier::embed(const ClassifierFeatures& input) const {
  if (const auto* slots = std::get_if<Tensor<float>>(&input)) {
    if (cfg_.input != ClassifierInput::Slots) throw ContractError("classifier: configured for tokens, given slots");
    if (slots->rank() != 2 || slots->dim(0) != cfg_.input_rows || slots->dim(1) != cfg_.input_width)
      throw ContractError("classifier: expected " + std::to_string(cfg_.input_rows) + "x" +
                          std::to_string(cfg_.input_width) + " slots, got " + shape_str(slots->shape()));
    return adapter_(*slots);
  }
  const auto& tokens = std::get<FrameTokens>(input);
  if (cfg_.input != ClassifierInput::Tokens) throw ContractError("classifier: configured for slots, given tokens");
  if (tokens.ids.size() != cfg_.input_rows)
    throw ContractError("classifier: expected " + std::to_string(cfg_.input_rows) + " tokens, got " +
                        std::to_string(tokens.ids.size()));
  check_ids(tokens, cfg_.input_rows, cfg_.vocab, "classifier");
  return embedding_lookup(token_embedding_, std::span<const int>(tokens.ids));
}

Tensor<float> Classifier::classify(const ClassifierFeatures& input) const {
  const Tensor<float> parts[] = {cls_, embed(input)};
  auto x = add(concat_rows<float>(parts), positions_);
  auto h = slice_rows(stack_.forward(x), 0, 1);
  return reshape(head_(h), Shape{2});
}

physics::Label Classifier::predict(const ClassifierFeatures& input) const {
  NoGradScope<float> guard;
  auto logits = classify(input);
  return logits[1] > logits[0] ? physics::Label::Success : physics::Label::Failure;
}

Tensor<float> classifier_loss(const Classifier& clf, const std::vector<const LabeledFeatures*>& batch) {
  if (batch.empty()) throw InputError("classifier_loss: empty batch");
  Tensor<float> total;
  for (const auto* ex : batch) {
    const int target = ex->label == physics::Label::Success ? 1 : 0;
    auto ce = cross_entropy_logits(reshape(clf.classify(ex->features), Shape{1, 2}), std::span<const int>(&target, 1));
    total = total.defined() ? add(total, ce) : ce;
  }
  return scale(total, 1.0f / static_cast<float>(batch.size()));
}

double train_classifier(Classifier& clf, const std::vector<LabeledFeatures>& data, const ClassifierTrainOptions& opts) {
  if (data.empty()) throw InputError("train_classifier: empty dataset");
  if (opts.batch_size == 0) throw InputError("train_classifier: batch size must be positive");
  Optimizer<float> opt(clf.parameters().tensors(), opts.optimizer, clf.parameters().decay_mask());
  Rng rng(derive_seed(opts.seed, 0xC1A5));
  double sum = 0.0;
  for (std::size_t step = 0; step < opts.steps; ++step) {
    std::vector<const LabeledFeatures*> batch;
    for (std::size_t b = 0; b < opts.batch_size; ++b)
      batch.push_back(&data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))]);
    opt.zero_grad();
    Tape<float> tape;
    Tensor<float> loss;
    {
      TapeScope<float> scope(tape);
      loss = classifier_loss(clf, batch);
      tape.backward(loss);
    }
    opt.step();
    sum += loss.item();
  }
  return opts.steps > 0 ? sum / static_cast<double>(opts.steps) : 0.0;
}

ClassifierEvaluation evaluate_classifier(const Classifier& clf, const std::vector<LabeledFeatures>& data) {
  if (data.empty()) throw InputError("evaluate_classifier: empty dataset");
  NoGradScope<float> guard;
  ClassifierEvaluation ev;
  for (const auto& ex : data) {
    auto logits = clf.classify(ex.features);
    const auto predicted = logits[1] > logits[0] ? physics::Label::Success : physics::Label::Failure;
    ev.counts.add(predicted, ex.label);
    const int target = ex.label == physics::Label::Success ? 1 : 0;
    ev.loss += cross_entropy_logits(reshape(logits, Shape{1, 2}), std::span<const int>(&target, 1)).item();
  }
  ev.loss /= static_cast<double>(data.size());
  return ev;
}

}  // namespace fptt
