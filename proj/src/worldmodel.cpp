#include "fptt/worldmodel.hpp"

#include <cmath>

#include "fptt/errors.hpp"
#include "fptt/ops.hpp"

namespace fptt {

void WorldModelConfig::validate() const {
  if (vocab < 2) throw ContractError("world model: vocabulary needs at least 2 tokens");
  if (tokens_per_frame == 0 || slots == 0 || d_model == 0) throw ContractError("world model: empty dimension");
  AttentionConfig{d_model, n_heads, false, false}.validate();
}

WorldModelCalls& worldmodel_calls() {
  thread_local WorldModelCalls calls;
  return calls;
}

void reset_worldmodel_calls() { worldmodel_calls() = {}; }

WorldModel::WorldModel(const WorldModelConfig& config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t d = cfg_.d_model, L = cfg_.tokens_per_frame;
  token_embedding_ = params_.add("token_embedding", normal_tensor<float>({cfg_.vocab + 1, d}, 0.02, rng));
  frame_positions_ = params_.add("frame_positions", normal_tensor<float>({L, d}, 0.02, rng));
  decoder_positions_ = params_.add("decoder_positions", normal_tensor<float>({L, d}, 0.02, rng));
  slot_embedding_ = params_.add("slot_embedding", normal_tensor<float>({cfg_.slots, d}, 0.02, rng));
  if (cfg_.learned_init)
    init_slots_ = params_.add("init_slots", normal_tensor<float>({cfg_.slots, d}, 1.0 / std::sqrt(double(d)), rng));

  StackConfig corr{d, cfg_.n_heads, cfg_.corrector_layers, cfg_.corrector_self_attention, false, true, cfg_.mlp_ratio};
  StackConfig pred{d, cfg_.n_heads, cfg_.predictor_layers, true, false, false, cfg_.mlp_ratio};
  StackConfig dec{d, cfg_.n_heads, cfg_.decoder_layers, true, true, true, cfg_.mlp_ratio};
  corrector_ = TransformerStack<float>(corr, rng, params_, "corrector");
  predictor_ = TransformerStack<float>(pred, rng, params_, "predictor");
  decoder_ = TransformerStack<float>(dec, rng, params_, "decoder");
  head_ = Linear<float>(d, cfg_.vocab, rng, params_, "head");
}

Representation WorldModel::init_representation(std::uint64_t seed) const {
  Representation r;
  if (cfg_.learned_init) {
    r.slots = init_slots_;
    return r;
  }
  Rng rng(seed);
  r.slots = normal_tensor<float>({cfg_.slots, cfg_.d_model}, 1.0 / std::sqrt(static_cast<double>(cfg_.d_model)), rng);
  return r;
}

Tensor<float> WorldModel::with_slot_ids(const Tensor<float>& slots) const {
  if (slots.rank() != 2 || slots.dim(0) != cfg_.slots || slots.dim(1) != cfg_.d_model)
    throw DimensionError("world model: representation must be " + std::to_string(cfg_.slots) + "x" +
                         std::to_string(cfg_.d_model));
  return add(slots, slot_embedding_);
}

Representation WorldModel::correct(const Representation& rep, const FrameTokens& z) const {
  if (rep.timestep != z.index)
    throw ContractError("correct: representation at t=" + std::to_string(rep.timestep) + " given frame " +
                        std::to_string(z.index));
  check_ids(z, cfg_.tokens_per_frame, cfg_.vocab, "correct");
  ++worldmodel_calls().correct;
  auto ctx = add(embedding_lookup(token_embedding_, std::span<const int>(z.ids)), frame_positions_);
  return {corrector_.forward(with_slot_ids(rep.slots), &ctx), rep.timestep};
}

Representation WorldModel::predict(const Representation& corrected) const {
  ++worldmodel_calls().predict;
  return {predictor_.forward(with_slot_ids(corrected.slots)), corrected.timestep + 1};
}

Tensor<float> WorldModel::decode_frame_logits(const Representation& next, const FrameTokens& teacher) const {
  check_ids(teacher, cfg_.tokens_per_frame, cfg_.vocab, "decode_frame_logits");
  ++worldmodel_calls().decode;
  std::vector<int> inputs(cfg_.tokens_per_frame);
  inputs[0] = static_cast<int>(cfg_.vocab);
  std::copy(teacher.ids.begin(), teacher.ids.end() - 1, inputs.begin() + 1);
  auto x = add(embedding_lookup(token_embedding_, std::span<const int>(inputs)), decoder_positions_);
  return head_(decoder_.forward(x, &next.slots));
}

std::vector<int> WorldModel::decode_greedy(const Representation& next) const {
  NoGradScope<float> guard;
  FrameTokens teacher{std::vector<int>(cfg_.tokens_per_frame, 0), next.timestep};
  for (std::size_t i = 0; i < cfg_.tokens_per_frame; ++i) {
    auto logits = decode_frame_logits(next, teacher);
    const float* row = logits.data().data() + i * cfg_.vocab;
    teacher.ids[i] = static_cast<int>(std::max_element(row, row + cfg_.vocab) - row);
  }
  return teacher.ids;
}

Tensor<float> sequence_loss(const WorldModel& model, const std::vector<FrameTokens>& video, std::uint64_t seed) {
  if (video.size() < 2) throw InputError("sequence_loss: need at least 2 frames");
  auto rep = model.init_representation(seed);
  Tensor<float> total;
  for (std::size_t t = 0; t + 1 < video.size(); ++t) {
    rep = model.predict(model.correct(rep, video[t]));
    const auto& target = video[t + 1];
    auto ce = cross_entropy_logits(model.decode_frame_logits(rep, target), std::span<const int>(target.ids));
    total = total.defined() ? add(total, ce) : ce;
  }
  return scale(total, 1.0f / static_cast<float>(video.size() - 1));
}

Representation rollout(const WorldModel& model, const std::vector<FrameTokens>& given, std::size_t total_frames,
                       std::uint64_t seed) {
  const std::size_t n = given.size();
  if (n < 1 || n >= total_frames)
    throw InputError("rollout: need 1 <= N < T, got N=" + std::to_string(n) + " T=" + std::to_string(total_frames));
  auto rep = model.init_representation(seed);
  for (const auto& z : given) rep = model.predict(model.correct(rep, z));
  while (rep.timestep < total_frames) rep = model.predict(rep);
  return rep;
}

std::uint64_t rollout_seed(std::uint64_t run_seed, std::size_t index) { return derive_seed(run_seed, 0x5107 + index); }

double clip_grad_norm(std::vector<Tensor<float>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (float g : p.grad_view()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto factor = static_cast<float>(max_norm / norm);
    for (auto& p : params)
      for (auto& g : p.storage()->grad) g *= factor;
  }
  return norm;
}

WorldModelTrainReport train_sequence_model(ParameterSet<float>& params, const std::vector<TokenVideo>& videos,
                                           const WorldModelTrainOptions& opts, const VideoLoss& video_loss,
                                           const std::function<void(const WorldModelEpoch&)>& on_epoch) {
  if (videos.empty()) throw InputError("training: empty dataset");
  if (opts.batch_size == 0 || opts.batches_per_epoch == 0) throw InputError("training: empty schedule");
  for (const auto& v : videos)
    if (v.frames.size() < 2) throw InputError("training: every video needs at least 2 frames");
  Optimizer<float> opt(params.tensors(), opts.optimizer, params.decay_mask());
  Rng rng(derive_seed(opts.seed, 0x7817));
  WorldModelTrainReport report;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    double epoch_sum = 0.0;
    for (std::size_t s = 0; s < opts.batches_per_epoch; ++s) {
      opt.zero_grad();
      Tape<float> tape;
      Tensor<float> loss;
      {
        TapeScope<float> scope(tape);
        for (std::size_t b = 0; b < opts.batch_size; ++b) {
          const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(videos.size()) - 1));
          auto l = video_loss(videos[pick], rng.next());
          loss = loss.defined() ? add(loss, l) : l;
        }
        loss = scale(loss, 1.0f / static_cast<float>(opts.batch_size));
        tape.backward(loss);
      }
      clip_grad_norm(opt.params(), opts.grad_clip);
      opt.step();
      ++step;
      report.step_losses.push_back(loss.item());
      epoch_sum += loss.item();
    }
    report.epochs.push_back({epoch, step, epoch_sum / static_cast<double>(opts.batches_per_epoch)});
    if (on_epoch) on_epoch(report.epochs.back());
  }
  return report;
}

WorldModelTrainReport train_worldmodel(WorldModel& model, const std::vector<TokenVideo>& videos,
                                       const WorldModelTrainOptions& opts,
                                       const std::function<void(const WorldModelEpoch&)>& on_epoch) {
  return train_sequence_model(
      model.parameters(), videos, opts,
      [&](const TokenVideo& v, std::uint64_t seed) { return sequence_loss(model, v.frames, seed); }, on_epoch);
}

}  // namespace fptt
