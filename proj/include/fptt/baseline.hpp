#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fptt/nn.hpp"
#include "fptt/tokens.hpp"
#include "fptt/worldmodel.hpp"

// Decoder-only next-frame predictor: one causal stack over the tokens of the
// previous frame followed by the (shifted) tokens of the next.

namespace fptt {

struct DecoderOnlyConfig {
  std::size_t vocab = 32;  // BOS = vocab
  std::size_t tokens_per_frame = 16;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t layers = 2;
  std::size_t mlp_ratio = 4;

  std::size_t context() const { return 2 * tokens_per_frame; }
  void validate() const;
};

class DecoderOnly {
 public:
  DecoderOnly(const DecoderOnlyConfig& config, std::uint64_t seed);

  const DecoderOnlyConfig& config() const { return cfg_; }
  ParameterSet<float>& parameters() { return params_; }
  const ParameterSet<float>& parameters() const { return params_; }

  // L × K logits for the frame after `source`, teacher-forced on `teacher`.
  Tensor<float> next_frame_logits(const FrameTokens& source, const FrameTokens& teacher) const;
  // Greedy decode of the frame after `source`.
  std::vector<int> generate_next(const FrameTokens& source) const;

 private:
  DecoderOnlyConfig cfg_;
  ParameterSet<float> params_;
  Tensor<float> token_embedding_;  // (K + 1) × d
  Tensor<float> positions_;        // 2L × d
  TransformerStack<float> stack_;
  Linear<float> head_;
};

// Mean next-frame cross-entropy over consecutive frame pairs.
Tensor<float> sequence_loss(const DecoderOnly& model, const std::vector<FrameTokens>& video);

// Generates frames N+1..T from the last given frame; returns z_T.
FrameTokens autoregressive_rollout(const DecoderOnly& model, const std::vector<FrameTokens>& given,
                                   std::size_t total_frames);

WorldModelTrainReport train_decoder_only(DecoderOnly& model, const std::vector<TokenVideo>& videos,
                                         const WorldModelTrainOptions& opts,
                                         const std::function<void(const WorldModelEpoch&)>& on_epoch = {});

}  // namespace fptt
