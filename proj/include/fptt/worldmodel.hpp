#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fptt/nn.hpp"
#include "fptt/optim.hpp"
#include "fptt/tokens.hpp"

// Corrector / predictor / decoder triplet over a slot representation.

namespace fptt {

struct WorldModelConfig {
  std::size_t vocab = 32;  // codebook size K; the decoder input adds BOS = K
  std::size_t tokens_per_frame = 16;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t slots = 4;
  std::size_t corrector_layers = 2;
  std::size_t predictor_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t mlp_ratio = 4;
  bool corrector_self_attention = false;  // slot mixing inside the corrector
  bool learned_init = false;              // learned Λ_1 instead of a random draw

  void validate() const;
};

// Λ_t with its timestep t ≥ 1.
struct Representation {
  Tensor<float> slots;  // S × d_model
  std::size_t timestep = 1;
};

// Per-thread call counts of the triplet components.
struct WorldModelCalls {
  std::uint64_t correct = 0;
  std::uint64_t predict = 0;
  std::uint64_t decode = 0;
};
WorldModelCalls& worldmodel_calls();
void reset_worldmodel_calls();

class WorldModel {
 public:
  WorldModel(const WorldModelConfig& config, std::uint64_t seed);

  const WorldModelConfig& config() const { return cfg_; }
  ParameterSet<float>& parameters() { return params_; }
  const ParameterSet<float>& parameters() const { return params_; }

  // Λ_1: i.i.d. N(0, 1)/√d_model from `seed`, or the learned init.
  Representation init_representation(std::uint64_t seed) const;
  // Λ*_t: slots attend to the embedded tokens of frame t.
  Representation correct(const Representation& rep, const FrameTokens& z) const;
  // Λ_{t+1} from Λ*_t alone.
  Representation predict(const Representation& corrected) const;
  // Teacher-forced L × K logits of the frame after `next` given the true ids.
  Tensor<float> decode_frame_logits(const Representation& next, const FrameTokens& teacher) const;
  // Greedy decode of the frame tokens predicted by `next`.
  std::vector<int> decode_greedy(const Representation& next) const;

 private:
  Tensor<float> with_slot_ids(const Tensor<float>& slots) const;

  WorldModelConfig cfg_;
  ParameterSet<float> params_;
  Tensor<float> token_embedding_;  // (K + 1) × d
  Tensor<float> frame_positions_;  // L × d, corrector keys
  Tensor<float> decoder_positions_;
  Tensor<float> slot_embedding_;  // S × d
  Tensor<float> init_slots_;      // learned init only
  TransformerStack<float> corrector_, predictor_, decoder_;
  Linear<float> head_;
};

// Mean next-frame cross-entropy over t = 1..T−1, with Λ_1 drawn from `seed`.
Tensor<float> sequence_loss(const WorldModel& model, const std::vector<FrameTokens>& video, std::uint64_t seed);

// Corrects and predicts on the N given frames, then predicts alone up to Λ_T.
Representation rollout(const WorldModel& model, const std::vector<FrameTokens>& given, std::size_t total_frames,
                       std::uint64_t seed);

// Seed of Λ_1 for video `index` of an evaluation pass.
std::uint64_t rollout_seed(std::uint64_t run_seed, std::size_t index);

struct WorldModelTrainOptions {
  std::size_t epochs = 1;
  std::size_t batches_per_epoch = 10;
  std::size_t batch_size = 8;
  OptimizerConfig optimizer = paper_transformer_optimizer();
  double grad_clip = 1.0;  // global norm; 0 disables
  std::uint64_t seed = 0;
};

struct WorldModelEpoch {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // optimizer steps so far
  double mean_loss = 0.0;
};

struct WorldModelTrainReport {
  std::vector<double> step_losses;
  std::vector<WorldModelEpoch> epochs;
};

// Loss of one video; the seed feeds any randomness (Λ_1).
using VideoLoss = std::function<Tensor<float>(const TokenVideo&, std::uint64_t seed)>;

// Shared loop: batches of videos sampled with replacement, mean loss, clipped
// gradients, one optimizer step per batch. `on_epoch` runs after each epoch.
WorldModelTrainReport train_sequence_model(ParameterSet<float>& params, const std::vector<TokenVideo>& videos,
                                           const WorldModelTrainOptions& opts, const VideoLoss& video_loss,
                                           const std::function<void(const WorldModelEpoch&)>& on_epoch = {});

WorldModelTrainReport train_worldmodel(WorldModel& model, const std::vector<TokenVideo>& videos,
                                       const WorldModelTrainOptions& opts,
                                       const std::function<void(const WorldModelEpoch&)>& on_epoch = {});

// Scales every gradient so their joint L2 norm is at most `max_norm`.
// Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor<float>>& params, double max_norm);

}  // namespace fptt
