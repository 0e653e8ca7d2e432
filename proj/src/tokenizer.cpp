#include "fptt/tokenizer.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include "fptt/errors.hpp"
#include "fptt/ops.hpp"

namespace fptt {

void TokenizerConfig::validate() const {
  if (image_size == 0 || channels == 0 || code_dim == 0) throw ContractError("tokenizer: sizes must be positive");
  if (codebook_size < 2) throw ContractError("tokenizer: codebook needs at least 2 entries");
  if (down_stages == 0 || (image_size >> down_stages) == 0 || (image_size % (std::size_t{1} << down_stages)) != 0)
    throw ContractError("tokenizer: image size " + std::to_string(image_size) + " not divisible by 2^" +
                        std::to_string(down_stages));
  if (!(beta >= 0.0)) throw ContractError("tokenizer: beta must be non-negative");
}

template <typename T>
std::vector<int> nearest_codes(const Tensor<T>& latents, const Tensor<T>& codebook) {
  if (latents.rank() != 2 || codebook.rank() != 2 || latents.dim(1) != codebook.dim(1))
    throw DimensionError("quantize: latent width " + shape_str(latents.shape()) + " vs codebook " +
                         shape_str(codebook.shape()));
  const std::size_t n = latents.dim(0), k = codebook.dim(0), d = latents.dim(1);
  std::vector<int> ids(n);
  const auto lat = latents.data();
  const auto cb = codebook.data();
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_j = 0;
    for (std::size_t j = 0; j < k; ++j) {
      double dist = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = static_cast<double>(lat[i * d + c]) - static_cast<double>(cb[j * d + c]);
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        best_j = static_cast<int>(j);
      }
    }
    ids[i] = best_j;
  }
  return ids;
}

template std::vector<int> nearest_codes(const Tensor<float>&, const Tensor<float>&);
template std::vector<int> nearest_codes(const Tensor<double>&, const Tensor<double>&);

Tensor<float> vqvae_loss(const Tensor<float>& frame, const Tensor<float>& reconstruction, const Tensor<float>& latents,
                         const Tensor<float>& quantized, double beta) {
  if (frame.shape() != reconstruction.shape()) throw DimensionError("vqvae_loss: reconstruction shape mismatch");
  if (latents.shape() != quantized.shape()) throw DimensionError("vqvae_loss: latent shape mismatch");
  auto recon = mean_abs_error(reconstruction, frame);
  auto codebook_term = mean_squared_error(stop_gradient(latents), quantized);
  auto commitment = scale(mean_squared_error(latents, stop_gradient(quantized)), static_cast<float>(beta));
  return add(add(recon, codebook_term), commitment);
}

namespace {

// C×H×W feature map <-> (H·W)×C token rows.
Tensor<float> to_rows(const Tensor<float>& x) {
  return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

Tensor<float> to_map(const Tensor<float>& rows, std::size_t side) {
  return reshape(transpose(rows), {rows.dim(1), side, side});
}

Tensor<float> channel_norm(const LayerNorm<float>& ln, const Tensor<float>& x) { return to_map(ln(to_rows(x)), x.dim(1)); }

}  // namespace

Tensor<float> Tokenizer::conv_param(const std::string& name, std::size_t out, std::size_t in, std::size_t k,
                                    double gain, Rng& rng) {
  const double stddev = gain / std::sqrt(static_cast<double>(in * k * k));
  return params_.add(name, normal_tensor<float>({out, in, k, k}, stddev, rng));
}

Tokenizer::ResBlock Tokenizer::make_res(const std::string& name, Rng& rng) {
  const std::size_t c = cfg_.channels;
  ResBlock b;
  b.n1 = LayerNorm<float>(c, params_, name + ".norm1");
  b.n2 = LayerNorm<float>(c, params_, name + ".norm2");
  b.w1 = conv_param(name + ".conv1.weight", c, c, 3, 1.0, rng);
  b.b1 = params_.add(name + ".conv1.bias", Tensor<float>({c}));
  b.w2 = conv_param(name + ".conv2.weight", c, c, 3, 0.5, rng);
  b.b2 = params_.add(name + ".conv2.bias", Tensor<float>({c}));
  return b;
}

Tokenizer::AttnBlock Tokenizer::make_attn(const std::string& name, Rng& rng) {
  AttnBlock b;
  b.norm = LayerNorm<float>(cfg_.channels, params_, name + ".norm");
  b.attn = AttentionParams<float>(cfg_.channels, rng, params_, name + ".attn", 0.02);
  return b;
}

Tokenizer::Tokenizer(const TokenizerConfig& config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  Rng rng(derive_seed(seed, 0x70CE));
  const std::size_t c = cfg_.channels, stages = cfg_.down_stages;
  const std::size_t mid = cfg_.res_blocks > 0 ? 1 : 0;
  const std::size_t rest = cfg_.res_blocks - mid;
  auto per_stage = [&](std::size_t s) { return rest / stages + (s < rest % stages ? 1 : 0); };

  enc_in_w_ = conv_param("enc.in.weight", c, 3, 3, 1.0, rng);
  enc_in_b_ = params_.add("enc.in.bias", Tensor<float>({c}));
  for (std::size_t s = 0; s < stages; ++s) {
    const std::string p = "enc.stage" + std::to_string(s);
    enc_stage_res_.emplace_back();
    for (std::size_t r = 0; r < per_stage(s); ++r) enc_stage_res_.back().push_back(make_res(p + ".res" + std::to_string(r), rng));
    enc_down_w_.push_back(conv_param(p + ".down.weight", c, c, 3, 1.0, rng));
    enc_down_b_.push_back(params_.add(p + ".down.bias", Tensor<float>({c})));
  }
  for (std::size_t r = 0; r < mid; ++r) enc_mid_res_.push_back(make_res("enc.mid.res" + std::to_string(r), rng));
  for (std::size_t a = 0; a < cfg_.attention_blocks; ++a) enc_attn_.push_back(make_attn("enc.mid.attn" + std::to_string(a), rng));
  enc_out_norm_ = LayerNorm<float>(c, params_, "enc.out.norm");
  enc_out_w_ = conv_param("enc.out.weight", cfg_.code_dim, c, 1, 1.0, rng);
  enc_out_b_ = params_.add("enc.out.bias", Tensor<float>({cfg_.code_dim}));

  const float bound = 1.0f / static_cast<float>(cfg_.codebook_size);
  Tensor<float> cb({cfg_.codebook_size, cfg_.code_dim});
  for (auto& v : cb.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  codebook_ = params_.add("codebook", cb);

  dec_in_w_ = conv_param("dec.in.weight", c, cfg_.code_dim, 3, 1.0, rng);
  dec_in_b_ = params_.add("dec.in.bias", Tensor<float>({c}));
  for (std::size_t a = 0; a < cfg_.attention_blocks; ++a) dec_attn_.push_back(make_attn("dec.mid.attn" + std::to_string(a), rng));
  for (std::size_t r = 0; r < mid; ++r) dec_mid_res_.push_back(make_res("dec.mid.res" + std::to_string(r), rng));
  for (std::size_t s = 0; s < stages; ++s) {
    // Decoder stage s undoes encoder stage stages-1-s.
    const std::string p = "dec.stage" + std::to_string(s);
    dec_up_w_.push_back(conv_param(p + ".up.weight", c, c, 3, 1.0, rng));
    dec_up_b_.push_back(params_.add(p + ".up.bias", Tensor<float>({c})));
    dec_stage_res_.emplace_back();
    for (std::size_t r = 0; r < per_stage(stages - 1 - s); ++r)
      dec_stage_res_.back().push_back(make_res(p + ".res" + std::to_string(r), rng));
  }
  dec_out_norm_ = LayerNorm<float>(c, params_, "dec.out.norm");
  dec_out_w_ = conv_param("dec.out.weight", 3, c, 3, 1.0, rng);
  dec_out_b_ = params_.add("dec.out.bias", Tensor<float>({3}, 0.5f));
}

Tensor<float> Tokenizer::res_forward(const ResBlock& b, const Tensor<float>& x) const {
  auto h = conv2d(silu(channel_norm(b.n1, x)), b.w1, b.b1, 1, 1);
  h = conv2d(silu(channel_norm(b.n2, h)), b.w2, b.b2, 1, 1);
  return add(x, h);
}

Tensor<float> Tokenizer::attn_forward(const AttnBlock& b, const Tensor<float>& x) const {
  const std::size_t side = x.dim(1);
  auto rows = to_rows(x);
  auto n = b.norm(rows);
  rows = add(rows, multi_head_attention(n, n, n, b.attn, AttentionConfig{cfg_.channels, 1, false, false}));
  return to_map(rows, side);
}

Tensor<float> Tokenizer::encode(const Tensor<float>& frame) const {
  if (frame.rank() != 3 || frame.dim(0) != 3 || frame.dim(1) != cfg_.image_size || frame.dim(2) != cfg_.image_size)
    throw DimensionError("encode: expected 3x" + std::to_string(cfg_.image_size) + "x" +
                         std::to_string(cfg_.image_size) + " frame, got " + shape_str(frame.shape()));
  auto h = conv2d(frame, enc_in_w_, enc_in_b_, 1, 1);
  for (std::size_t s = 0; s < cfg_.down_stages; ++s) {
    for (const auto& r : enc_stage_res_[s]) h = res_forward(r, h);
    h = conv2d(h, enc_down_w_[s], enc_down_b_[s], 2, 1);
  }
  for (const auto& r : enc_mid_res_) h = res_forward(r, h);
  for (const auto& a : enc_attn_) h = attn_forward(a, h);
  h = conv2d(silu(channel_norm(enc_out_norm_, h)), enc_out_w_, enc_out_b_, 1, 0);
  return to_rows(h);
}

LatentGrid Tokenizer::quantize(const Tensor<float>& latents) const {
  if (latents.rank() != 2 || latents.dim(1) != cfg_.code_dim)
    throw DimensionError("quantize: latents " + shape_str(latents.shape()) + " do not match code_dim " +
                         std::to_string(cfg_.code_dim));
  LatentGrid g;
  g.latents = latents;
  g.ids = nearest_codes(latents, codebook_);
  g.quantized = embedding_lookup(codebook_, std::span<const int>(g.ids));
  return g;
}

LatentGrid Tokenizer::grid_from_ids(const std::vector<int>& ids) const {
  if (ids.size() != cfg_.tokens_per_frame())
    throw DimensionError("grid_from_ids: expected " + std::to_string(cfg_.tokens_per_frame()) + " ids, got " +
                         std::to_string(ids.size()));
  LatentGrid g;
  g.ids = ids;
  g.quantized = embedding_lookup(codebook_, std::span<const int>(g.ids));
  return g;
}

Tensor<float> Tokenizer::decode_unclamped(const LatentGrid& grid) const {
  const std::size_t side = cfg_.grid_side();
  if (!grid.quantized.defined() || grid.quantized.rank() != 2 || grid.quantized.dim(0) != cfg_.tokens_per_frame() ||
      grid.quantized.dim(1) != cfg_.code_dim)
    throw DimensionError("decode: grid does not hold " + std::to_string(cfg_.tokens_per_frame()) + " codes of width " +
                         std::to_string(cfg_.code_dim));
  auto codes = grid.latents.defined() ? straight_through(grid.latents, grid.quantized) : grid.quantized;
  auto h = conv2d(to_map(codes, side), dec_in_w_, dec_in_b_, 1, 1);
  for (const auto& a : dec_attn_) h = attn_forward(a, h);
  for (const auto& r : dec_mid_res_) h = res_forward(r, h);
  for (std::size_t s = 0; s < cfg_.down_stages; ++s) {
    h = conv2d(upsample_nearest(h, 2), dec_up_w_[s], dec_up_b_[s], 1, 1);
    for (const auto& r : dec_stage_res_[s]) h = res_forward(r, h);
  }
  return conv2d(silu(channel_norm(dec_out_norm_, h)), dec_out_w_, dec_out_b_, 1, 1);
}

Tensor<float> Tokenizer::decode(const LatentGrid& grid) const { return clamp(decode_unclamped(grid), 0.0f, 1.0f); }

std::vector<int> Tokenizer::tokenize(const Tensor<float>& frame) const {
  NoGradScope<float> guard;
  return nearest_codes(encode(frame), codebook_);
}

Tensor<float> Tokenizer::reconstruct(const Tensor<float>& frame) const {
  NoGradScope<float> guard;
  return decode(quantize(encode(frame)));
}

Tensor<float> Tokenizer::frame_loss(const Tensor<float>& frame) const {
  auto grid = quantize(encode(frame));
  return vqvae_loss(frame, decode_unclamped(grid), grid.latents, grid.quantized, cfg_.beta);
}

void Tokenizer::set_code(std::size_t index, std::span<const float> value) {
  if (frozen_) throw ContractError("set_code: tokenizer is frozen");
  if (index >= cfg_.codebook_size) throw IndexError("set_code: index out of range");
  if (value.size() != cfg_.code_dim) throw DimensionError("set_code: expected code_dim values");
  std::copy(value.begin(), value.end(), codebook_.data().begin() + static_cast<std::ptrdiff_t>(index * cfg_.code_dim));
}

void Tokenizer::freeze() {
  for (const auto& e : params_.entries()) {
    auto t = e.second;
    t.set_requires_grad(false);
    t.zero_grad();
  }
  frozen_ = true;
}

std::uint64_t Tokenizer::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& e : params_.entries()) {
    for (float v : e.second.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xFFu;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

TokenizerEvalPoint evaluate_tokenizer(const Tokenizer& tok, const std::vector<Tensor<float>>& frames,
                                      std::size_t step) {
  if (frames.empty()) throw InputError("evaluate_tokenizer: no frames");
  NoGradScope<float> guard;
  TokenizerEvalPoint p;
  p.step = step;
  std::set<int> used;
  for (const auto& f : frames) {
    auto grid = tok.quantize(tok.encode(f));
    auto raw = tok.decode_unclamped(grid);
    p.loss += vqvae_loss(f, raw, grid.latents, grid.quantized, tok.config().beta).item();
    p.mae += mean_abs_error(clamp(raw, 0.0f, 1.0f), f).item();
    used.insert(grid.ids.begin(), grid.ids.end());
  }
  p.loss /= static_cast<double>(frames.size());
  p.mae /= static_cast<double>(frames.size());
  p.codes_used = used.size();
  return p;
}

TokenizerTrainReport train_tokenizer(Tokenizer& tok, const std::vector<Tensor<float>>& frames,
                                     const TokenizerTrainOptions& opts, const std::vector<Tensor<float>>& eval_frames,
                                     const std::function<void(const TokenizerEvalPoint&)>& on_eval) {
  if (frames.empty()) throw InputError("train_tokenizer: empty dataset");
  if (opts.batch_size == 0) throw InputError("train_tokenizer: batch size must be positive");
  if (tok.frozen()) throw ContractError("train_tokenizer: tokenizer is frozen");
  const auto& eval_set = eval_frames.empty() ? frames : eval_frames;
  Optimizer<float> opt(tok.parameters().tensors(), opts.optimizer, tok.parameters().decay_mask());
  Rng rng(derive_seed(opts.seed, 0xBA7C));
  TokenizerTrainReport report;

  auto record_eval = [&](std::size_t step) {
    report.evals.push_back(evaluate_tokenizer(tok, eval_set, step));
    if (on_eval) on_eval(report.evals.back());
  };
  record_eval(0);
  const std::size_t k = tok.config().codebook_size, d = tok.config().code_dim;
  std::vector<std::size_t> usage(k, 0);
  for (std::size_t step = 1; step <= opts.steps; ++step) {
    opt.zero_grad();
    Tape<float> tape;
    Tensor<float> loss;
    std::vector<float> batch_latents;
    {
      TapeScope<float> scope(tape);
      for (std::size_t b = 0; b < opts.batch_size; ++b) {
        const auto& f = frames[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(frames.size()) - 1))];
        auto grid = tok.quantize(tok.encode(f));
        auto l = vqvae_loss(f, tok.decode_unclamped(grid), grid.latents, grid.quantized, tok.config().beta);
        loss = loss.defined() ? add(loss, l) : l;
        for (int id : grid.ids) ++usage[static_cast<std::size_t>(id)];
        batch_latents.insert(batch_latents.end(), grid.latents.data().begin(), grid.latents.data().end());
      }
      loss = scale(loss, 1.0f / static_cast<float>(opts.batch_size));
      tape.backward(loss);
    }
    opt.step();
    if (opts.restart_dead_codes_every > 0 && step % opts.restart_dead_codes_every == 0) {
      // Unused codes jump to random latents of the current batch.
      const std::size_t n = batch_latents.size() / d;
      std::vector<float> row(d);
      for (std::size_t j = 0; j < k; ++j) {
        if (usage[j] > 0) continue;
        const auto src = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
        for (std::size_t c = 0; c < d; ++c)
          row[c] = batch_latents[src * d + c] + static_cast<float>(rng.uniform(-1e-3, 1e-3));
        tok.set_code(j, row);
        ++report.code_restarts;
      }
      std::fill(usage.begin(), usage.end(), 0);
    }
    report.step_losses.push_back(loss.item());
    const bool last = step == opts.steps;
    if (last || (opts.eval_every > 0 && step % opts.eval_every == 0)) record_eval(step);
  }
  return report;
}

}  // namespace fptt
