#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fptt/nn.hpp"
#include "fptt/optim.hpp"
#include "fptt/tensor.hpp"

// Convolutional VQ-VAE mapping C×H×W frames to a grid of discrete codebook
// indices and back.

namespace fptt {

struct TokenizerConfig {
  std::size_t image_size = 16;     // square frames
  std::size_t channels = 16;       // conv width
  std::size_t down_stages = 2;     // each halves the resolution
  std::size_t res_blocks = 3;      // encoder residual blocks (decoder mirrors)
  std::size_t attention_blocks = 1;
  std::size_t code_dim = 16;
  std::size_t codebook_size = 32;  // K
  double beta = 0.25;              // commitment weight

  std::size_t grid_side() const { return image_size >> down_stages; }
  std::size_t tokens_per_frame() const { return grid_side() * grid_side(); }
  void validate() const;
};

struct LatentGrid {
  Tensor<float> latents;    // L × code_dim before quantization; undefined when built from ids
  std::vector<int> ids;     // L codebook indices
  Tensor<float> quantized;  // L × code_dim codebook rows
};

// Nearest codebook row per latent (Euclidean, lowest index on ties).
template <typename T>
std::vector<int> nearest_codes(const Tensor<T>& latents, const Tensor<T>& codebook);

// MAE(frame, recon) + mse(sg(latents), quantized) + beta·mse(latents, sg(quantized)),
// squared errors averaged over all latent elements.
Tensor<float> vqvae_loss(const Tensor<float>& frame, const Tensor<float>& reconstruction, const Tensor<float>& latents,
                         const Tensor<float>& quantized, double beta);

class Tokenizer {
 public:
  Tokenizer(const TokenizerConfig& config, std::uint64_t seed);

  const TokenizerConfig& config() const { return cfg_; }
  ParameterSet<float>& parameters() { return params_; }
  const ParameterSet<float>& parameters() const { return params_; }
  const Tensor<float>& codebook() const { return codebook_; }

  // 3×H×W frame to L×code_dim latents, grid flattened row-major.
  Tensor<float> encode(const Tensor<float>& frame) const;
  LatentGrid quantize(const Tensor<float>& latents) const;
  LatentGrid grid_from_ids(const std::vector<int>& ids) const;
  // Decoder output before clamping; gradients reach the latents straight
  // through the quantization when the grid carries latents.
  Tensor<float> decode_unclamped(const LatentGrid& grid) const;
  // Reconstruction clamped to [0, 1].
  Tensor<float> decode(const LatentGrid& grid) const;

  // Inference helpers; never record on a tape.
  std::vector<int> tokenize(const Tensor<float>& frame) const;
  Tensor<float> reconstruct(const Tensor<float>& frame) const;

  // Loss of one frame through encode → quantize → decode.
  Tensor<float> frame_loss(const Tensor<float>& frame) const;

  // Overwrites codebook row `index`.
  void set_code(std::size_t index, std::span<const float> value);

  // Stops gradient tracking on every parameter.
  void freeze();
  bool frozen() const { return frozen_; }
  // FNV-1a over all parameter bytes in registration order.
  std::uint64_t fingerprint() const;

 private:
  // x + conv(silu(norm(conv(silu(norm(x)))))), norms over channels per pixel.
  struct ResBlock {
    LayerNorm<float> n1, n2;
    Tensor<float> w1, b1, w2, b2;
  };
  struct AttnBlock {
    LayerNorm<float> norm;
    AttentionParams<float> attn;
  };

  ResBlock make_res(const std::string& name, Rng& rng);
  AttnBlock make_attn(const std::string& name, Rng& rng);
  Tensor<float> conv_param(const std::string& name, std::size_t out, std::size_t in, std::size_t k, double gain,
                           Rng& rng);
  Tensor<float> res_forward(const ResBlock& b, const Tensor<float>& x) const;
  Tensor<float> attn_forward(const AttnBlock& b, const Tensor<float>& x) const;

  TokenizerConfig cfg_;
  ParameterSet<float> params_;
  bool frozen_ = false;

  Tensor<float> enc_in_w_, enc_in_b_;
  std::vector<std::vector<ResBlock>> enc_stage_res_;
  std::vector<Tensor<float>> enc_down_w_, enc_down_b_;
  std::vector<ResBlock> enc_mid_res_;
  std::vector<AttnBlock> enc_attn_;
  LayerNorm<float> enc_out_norm_;
  Tensor<float> enc_out_w_, enc_out_b_;

  Tensor<float> codebook_;

  Tensor<float> dec_in_w_, dec_in_b_;
  std::vector<AttnBlock> dec_attn_;
  std::vector<ResBlock> dec_mid_res_;
  std::vector<Tensor<float>> dec_up_w_, dec_up_b_;
  std::vector<std::vector<ResBlock>> dec_stage_res_;
  LayerNorm<float> dec_out_norm_;
  Tensor<float> dec_out_w_, dec_out_b_;
};

struct TokenizerTrainOptions {
  std::size_t steps = 500;
  std::size_t batch_size = 8;
  std::size_t eval_every = 50;  // 0 disables periodic evaluation
  // Codes unused for this many steps are moved onto encoder outputs; 0 disables.
  std::size_t restart_dead_codes_every = 25;
  OptimizerConfig optimizer = paper_tokenizer_optimizer();
  std::uint64_t seed = 0;
};

struct TokenizerEvalPoint {
  std::size_t step = 0;
  double loss = 0.0;  // mean vqvae loss over the eval frames
  double mae = 0.0;   // mean clamped reconstruction MAE
  std::size_t codes_used = 0;
};

struct TokenizerTrainReport {
  std::vector<double> step_losses;
  std::vector<TokenizerEvalPoint> evals;  // includes step 0 and the final step
  std::size_t code_restarts = 0;
};

TokenizerEvalPoint evaluate_tokenizer(const Tokenizer& tok, const std::vector<Tensor<float>>& frames,
                                      std::size_t step = 0);

// Adam training on frames sampled with replacement; evaluation on `eval_frames`
// (or the training frames when empty).
TokenizerTrainReport train_tokenizer(Tokenizer& tok, const std::vector<Tensor<float>>& frames,
                                     const TokenizerTrainOptions& opts,
                                     const std::vector<Tensor<float>>& eval_frames = {},
                                     const std::function<void(const TokenizerEvalPoint&)>& on_eval = {});

}  // namespace fptt
