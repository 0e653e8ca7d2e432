#include "fptt/baseline.hpp"

#include <algorithm>

#include "fptt/errors.hpp"
#include "fptt/ops.hpp"

namespace fptt {

void DecoderOnlyConfig::validate() const {
  if (vocab < 2) throw ContractError("decoder-only: vocabulary needs at least 2 tokens");
  if (tokens_per_frame == 0 || d_model == 0) throw ContractError("decoder-only: empty dimension");
  AttentionConfig{d_model, n_heads, true, false}.validate();
}

DecoderOnly::DecoderOnly(const DecoderOnlyConfig& config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t d = cfg_.d_model;
  token_embedding_ = params_.add("token_embedding", normal_tensor<float>({cfg_.vocab + 1, d}, 0.02, rng));
  positions_ = params_.add("positions", normal_tensor<float>({cfg_.context(), d}, 0.02, rng));
  stack_ = TransformerStack<float>(StackConfig{d, cfg_.n_heads, cfg_.layers, true, true, false, cfg_.mlp_ratio}, rng,
                                   params_, "decoder");
  head_ = Linear<float>(d, cfg_.vocab, rng, params_, "head");
}

Tensor<float> DecoderOnly::next_frame_logits(const FrameTokens& source, const FrameTokens& teacher) const {
  const std::size_t L = cfg_.tokens_per_frame;
  check_ids(source, L, cfg_.vocab, "next_frame_logits");
  check_ids(teacher, L, cfg_.vocab, "next_frame_logits");
  std::vector<int> seq(source.ids);
  seq.push_back(static_cast<int>(cfg_.vocab));
  seq.insert(seq.end(), teacher.ids.begin(), teacher.ids.end() - 1);
  auto x = add_positions(embedding_lookup(token_embedding_, std::span<const int>(seq)), positions_);
  return head_(slice_rows(stack_.forward(x), L, 2 * L));
}

std::vector<int> DecoderOnly::generate_next(const FrameTokens& source) const {
  NoGradScope<float> guard;
  FrameTokens out{std::vector<int>(cfg_.tokens_per_frame, 0), source.index + 1};
  for (std::size_t i = 0; i < cfg_.tokens_per_frame; ++i) {
    auto logits = next_frame_logits(source, out);
    const float* row = logits.data().data() + i * cfg_.vocab;
    out.ids[i] = static_cast<int>(std::max_element(row, row + cfg_.vocab) - row);
  }
  return out.ids;
}

Tensor<float> sequence_loss(const DecoderOnly& model, const std::vector<FrameTokens>& video) {
  if (video.size() < 2) throw InputError("sequence_loss: need at least 2 frames");
  Tensor<float> total;
  for (std::size_t t = 0; t + 1 < video.size(); ++t) {
    const auto& target = video[t + 1];
    auto ce = cross_entropy_logits(model.next_frame_logits(video[t], target), std::span<const int>(target.ids));
    total = total.defined() ? add(total, ce) : ce;
  }
  return scale(total, 1.0f / static_cast<float>(video.size() - 1));
}

FrameTokens autoregressive_rollout(const DecoderOnly& model, const std::vector<FrameTokens>& given,
                                   std::size_t total_frames) {
  const std::size_t n = given.size();
  if (n < 1 || n >= total_frames)
    throw InputError("autoregressive_rollout: need 1 <= N < T, got N=" + std::to_string(n) +
                     " T=" + std::to_string(total_frames));
  FrameTokens frame = given.back();
  frame.index = n;
  while (frame.index < total_frames) frame = {model.generate_next(frame), frame.index + 1};
  return frame;
}

WorldModelTrainReport train_decoder_only(DecoderOnly& model, const std::vector<TokenVideo>& videos,
                                         const WorldModelTrainOptions& opts,
                                         const std::function<void(const WorldModelEpoch&)>& on_epoch) {
  return train_sequence_model(
      model.parameters(), videos, opts, [&](const TokenVideo& v, std::uint64_t) { return sequence_loss(model, v.frames); },
      on_epoch);
}

}  // namespace fptt
