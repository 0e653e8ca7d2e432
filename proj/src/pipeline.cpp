#include "fptt/pipeline.hpp"

#include <exception>
#include <regex>

#include "fptt/errors.hpp"

namespace fptt {

Arch parse_arch(const std::string& name) {
  if (name == "fptt") return Arch::Fptt;
  if (name == "decoder-only") return Arch::DecoderOnly;
  throw InputError("unknown architecture '" + name + "' (expected fptt or decoder-only)");
}

const char* arch_name(Arch arch) { return arch == Arch::Fptt ? "fptt" : "decoder-only"; }

ClassifierInput feature_kind(Arch arch) {
  return arch == Arch::Fptt ? ClassifierInput::Slots : ClassifierInput::Tokens;
}

std::uint64_t stage_seed(const RunConfig& cfg, Stage stage, std::uint64_t salt) {
  return derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(stage)), salt);
}

SequenceModel::SequenceModel(Arch arch, const RunConfig& cfg) : arch_(arch) {
  const auto seed = stage_seed(cfg, Stage::SequenceModel);
  if (arch == Arch::Fptt) wm_ = std::make_unique<WorldModel>(cfg.worldmodel(), seed);
  else dec_ = std::make_unique<DecoderOnly>(cfg.decoder_only(), seed);
}

ParameterSet<float>& SequenceModel::parameters() { return wm_ ? wm_->parameters() : dec_->parameters(); }
const ParameterSet<float>& SequenceModel::parameters() const { return wm_ ? wm_->parameters() : dec_->parameters(); }

const WorldModel& SequenceModel::fptt() const {
  if (!wm_) throw ContractError("sequence model is decoder-only");
  return *wm_;
}

const DecoderOnly& SequenceModel::decoder_only() const {
  if (!dec_) throw ContractError("sequence model is fptt");
  return *dec_;
}

WorldModelTrainReport SequenceModel::train(const std::vector<TokenVideo>& videos, const WorldModelTrainOptions& opts,
                                           const std::function<void(const WorldModelEpoch&)>& on_epoch) {
  return wm_ ? train_worldmodel(*wm_, videos, opts, on_epoch) : train_decoder_only(*dec_, videos, opts, on_epoch);
}

ClassifierInput SequenceModel::feature_kind() const { return fptt::feature_kind(arch_); }

ClassifierFeatures SequenceModel::features(const TokenVideo& video, std::size_t given, std::uint64_t seed) const {
  NoGradScope<float> guard;
  const auto prefix = first_frames(video, given);
  if (wm_) return rollout(*wm_, prefix, video.frames.size(), seed).slots;
  return autoregressive_rollout(*dec_, prefix, video.frames.size());
}

std::vector<LabeledFeatures> extract_features(const SequenceModel& model, const std::vector<TokenVideo>& videos,
                                              std::size_t given, std::uint64_t seed) {
  std::vector<LabeledFeatures> out(videos.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < videos.size(); ++i) {
    try {
      out[i] = {model.features(videos[i], given, rollout_seed(seed, i)), videos[i].label};
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

ClassifierRound fit_classifier(const RunConfig& cfg, ClassifierInput kind, const std::vector<LabeledFeatures>& train,
                               const std::vector<LabeledFeatures>& eval, std::uint64_t seed,
                               std::unique_ptr<Classifier>* trained) {
  auto clf = std::make_unique<Classifier>(cfg.classifier(kind), seed);
  auto opts = cfg.classifier_training();
  opts.seed = derive_seed(seed, 1);
  ClassifierRound round;
  round.train_loss = train_classifier(*clf, train, opts);
  round.train = evaluate_classifier(*clf, train);
  round.eval = evaluate_classifier(*clf, eval);
  if (trained) *trained = std::move(clf);
  return round;
}

std::vector<MetricsRecord> round_records(std::size_t epoch, std::size_t step, const ClassifierRound& round) {
  return {{epoch, step, physics::Split::Train, round.train.loss, compute_metrics(round.train.counts)},
          {epoch, step, physics::Split::Eval, round.eval.loss, compute_metrics(round.eval.counts)}};
}

TokenizedData tokenize_dataset(const Tokenizer& tok, const physics::LoadedDataset& data) {
  return {tokenize_videos(tok, data.train), tokenize_videos(tok, data.eval)};
}

Tokenizer fit_tokenizer(const RunConfig& cfg, const physics::LoadedDataset& data, TokenizerTrainReport* report,
                        const std::function<void(const TokenizerEvalPoint&)>& on_eval) {
  Tokenizer tok(cfg.tokenizer(), stage_seed(cfg, Stage::Tokenizer));
  const auto frames = physics::collect_frames(data.train, cfg.tokenizer_frames);
  const auto eval_frames = physics::collect_frames(data.eval, 32);
  auto r = train_tokenizer(tok, frames, cfg.tokenizer_training(), eval_frames, on_eval);
  if (report) *report = std::move(r);
  tok.freeze();
  return tok;
}

RunConfig adopt_model_keys(RunConfig run, const RunConfig& snapshot) {
  static const char* const keys[] = {"image_size",       "tokenizer_channels", "down_stages",      "res_blocks",
                                     "attention_blocks", "code_dim",           "codebook_size",    "commitment_beta",
                                     "d_model",          "n_heads",            "slots",            "corrector_layers",
                                     "predictor_layers", "decoder_layers",     "baseline_layers",  "mlp_ratio",
                                     "corrector_self_attention", "learned_init", "arch"};
  for (const char* k : keys) run.set(k, snapshot.get(k));
  return run;
}

void save_model(const ParameterSet<float>& params, const RunConfig& cfg, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_checkpoint(make_checkpoint(params, cfg.to_text()), path);
}

RunConfig checkpoint_config(const Checkpoint& ckpt) { return RunConfig::from_text(ckpt.config); }

Tokenizer load_tokenizer(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  Tokenizer tok(checkpoint_config(ckpt).tokenizer(), 0);
  restore_parameters(tok.parameters(), ckpt);
  tok.freeze();
  return tok;
}

SequenceModel load_sequence_model(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  const auto cfg = checkpoint_config(ckpt);
  SequenceModel model(parse_arch(cfg.arch), cfg);
  restore_parameters(model.parameters(), ckpt);
  return model;
}

Classifier load_classifier(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  const auto cfg = checkpoint_config(ckpt);
  Classifier clf(cfg.classifier(feature_kind(parse_arch(cfg.arch))), 0);
  restore_parameters(clf.parameters(), ckpt);
  return clf;
}

std::string epoch_checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu.fpck", epoch);
  return buf;
}

std::vector<std::pair<std::size_t, std::filesystem::path>> list_epoch_checkpoints(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FileError("not a directory: " + dir.string());
  static const std::regex pattern(R"(epoch_(\d+)\.fpck)");
  std::vector<std::pair<std::size_t, std::filesystem::path>> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) out.emplace_back(std::stoul(m[1].str()), entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

ExperimentResult run_experiment(const RunConfig& cfg, Arch arch, const TokenizedData& data,
                                const std::function<void(const std::vector<MetricsRecord>&)>& on_round) {
  SequenceModel model(arch, cfg);
  ExperimentResult result;
  const auto kind = model.feature_kind();
  result.training = model.train(data.train, cfg.sequence_training(), [&](const WorldModelEpoch& e) {
    const auto train = extract_features(model, data.train, cfg.given_frames, stage_seed(cfg, Stage::Features, 0));
    const auto eval = extract_features(model, data.eval, cfg.given_frames, stage_seed(cfg, Stage::Features, 1));
    const auto round = fit_classifier(cfg, kind, train, eval, stage_seed(cfg, Stage::Classifier, e.epoch));
    const auto rows = round_records(e.epoch, e.epoch * cfg.steps_per_epoch(), round);
    result.records.insert(result.records.end(), rows.begin(), rows.end());
    if (on_round) on_round(rows);
  });
  result.steps_to_threshold =
      sample_efficiency(result.records, cfg.f1_threshold, cfg.consecutive_epochs, cfg.steps_per_epoch());
  return result;
}

}  // namespace fptt
