#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fptt/baseline.hpp"
#include "fptt/classifier.hpp"
#include "fptt/dataset.hpp"
#include "fptt/tokenizer.hpp"
#include "fptt/worldmodel.hpp"

namespace fptt {

// Every tunable of a run. Text form: one `key = value` per line, `#` starts a
// comment.
struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  std::string templates = "drop,ramp,blocked";  // comma-separated task templates
  std::string arch = "fptt";                    // fptt | decoder-only
  std::string data_dir = "data";
  std::string run_dir = "run";

  // Frames and tokenizer.
  std::size_t image_size = 16;
  std::size_t tokenizer_channels = 16;
  std::size_t down_stages = 2;
  std::size_t res_blocks = 3;
  std::size_t attention_blocks = 1;
  std::size_t code_dim = 16;
  std::size_t codebook_size = 32;
  double commitment_beta = 0.25;
  std::size_t tokenizer_steps = 500;
  std::size_t tokenizer_batch = 8;
  double tokenizer_lr = 1e-4;
  std::size_t restart_dead_codes_every = 25;
  std::size_t tokenizer_frames = 100;  // training frames drawn from the train split

  // Transformers.
  std::size_t reported_vocab_size = 0;  // informational; the model vocabulary is codebook_size
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t slots = 4;
  std::size_t corrector_layers = 2;
  std::size_t predictor_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t classifier_layers = 2;
  std::size_t baseline_layers = 2;
  std::size_t mlp_ratio = 4;
  bool corrector_self_attention = false;
  bool learned_init = false;

  // Videos.
  std::size_t given_frames = 5;
  std::size_t min_frames = 7;
  std::size_t max_frames = 12;
  std::size_t dataset_count = 400;

  // Schedule: an epoch is batches_per_epoch updates of batch_size videos, and
  // counts batch_size·batches_per_epoch training steps.
  std::size_t epochs = 50;
  std::size_t batch_size = 5;
  std::size_t batches_per_epoch = 10;
  double wm_lr = 6e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;

  // Classifier, retrained on each world-model checkpoint.
  std::size_t classifier_steps = 150;
  std::size_t classifier_batch = 16;
  double classifier_lr = 6e-4;

  // Sample efficiency.
  double f1_threshold = 0.95;
  std::size_t consecutive_epochs = 4;

  std::size_t steps_per_epoch() const { return batch_size * batches_per_epoch; }

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  void validate() const;

  TokenizerConfig tokenizer() const;
  TokenizerTrainOptions tokenizer_training() const;
  WorldModelConfig worldmodel() const;
  DecoderOnlyConfig decoder_only() const;
  WorldModelTrainOptions sequence_training() const;
  ClassifierConfig classifier(ClassifierInput input) const;
  ClassifierTrainOptions classifier_training() const;
  // Templates with the configured clip lengths.
  std::vector<physics::TaskTemplate> task_templates() const;
  physics::GenerationOptions generation() const;
};

RunConfig desk_preset();
RunConfig paper_preset();
RunConfig preset(const std::string& name);

}  // namespace fptt
