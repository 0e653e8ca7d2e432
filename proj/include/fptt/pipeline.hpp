#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fptt/baseline.hpp"
#include "fptt/checkpoint.hpp"
#include "fptt/classifier.hpp"
#include "fptt/config.hpp"
#include "fptt/metrics.hpp"
#include "fptt/tokenizer.hpp"
#include "fptt/worldmodel.hpp"

// Glue between the stages of a run: tokenizer → sequence model → classifier.

namespace fptt {

enum class Arch { Fptt, DecoderOnly };
Arch parse_arch(const std::string& name);
const char* arch_name(Arch arch);
// Slots for fptt, tokens for decoder-only.
ClassifierInput feature_kind(Arch arch);

// Seed of one pipeline stage.
enum class Stage : std::uint64_t { Tokenizer = 10, SequenceModel, Classifier, Features };
std::uint64_t stage_seed(const RunConfig& cfg, Stage stage, std::uint64_t salt = 0);

// Either sequence model behind one interface.
class SequenceModel {
 public:
  SequenceModel(Arch arch, const RunConfig& cfg);

  Arch arch() const { return arch_; }
  ParameterSet<float>& parameters();
  const ParameterSet<float>& parameters() const;
  const WorldModel& fptt() const;
  const DecoderOnly& decoder_only() const;

  WorldModelTrainReport train(const std::vector<TokenVideo>& videos, const WorldModelTrainOptions& opts,
                              const std::function<void(const WorldModelEpoch&)>& on_epoch = {});

  ClassifierInput feature_kind() const;
  // Λ_T after a rollout over the first `given` frames, or z_T generated from them.
  ClassifierFeatures features(const TokenVideo& video, std::size_t given, std::uint64_t seed) const;

 private:
  Arch arch_;
  std::unique_ptr<WorldModel> wm_;
  std::unique_ptr<DecoderOnly> dec_;
};

// Features of every video; video i uses rollout_seed(seed, i).
std::vector<LabeledFeatures> extract_features(const SequenceModel& model, const std::vector<TokenVideo>& videos,
                                              std::size_t given, std::uint64_t seed);

struct ClassifierRound {
  double train_loss = 0.0;  // mean loss over the training run
  ClassifierEvaluation train;
  ClassifierEvaluation eval;
};

// Trains a fresh classifier on `train` and scores both splits.
ClassifierRound fit_classifier(const RunConfig& cfg, ClassifierInput kind, const std::vector<LabeledFeatures>& train,
                               const std::vector<LabeledFeatures>& eval, std::uint64_t seed,
                               std::unique_ptr<Classifier>* trained = nullptr);

// A train row and an eval row for one checkpoint.
std::vector<MetricsRecord> round_records(std::size_t epoch, std::size_t step, const ClassifierRound& round);

struct TokenizedData {
  std::vector<TokenVideo> train;
  std::vector<TokenVideo> eval;
};
TokenizedData tokenize_dataset(const Tokenizer& tok, const physics::LoadedDataset& data);

// Adam training of a fresh tokenizer on the train split; frozen on return.
Tokenizer fit_tokenizer(const RunConfig& cfg, const physics::LoadedDataset& data, TokenizerTrainReport* report = nullptr,
                        const std::function<void(const TokenizerEvalPoint&)>& on_eval = {});

// `run` with the architecture keys (tokenizer geometry, transformer shapes,
// arch) taken from a checkpoint snapshot.
RunConfig adopt_model_keys(RunConfig run, const RunConfig& snapshot);

void save_model(const ParameterSet<float>& params, const RunConfig& cfg, const std::filesystem::path& path);
// Config snapshot of a checkpoint file.
RunConfig checkpoint_config(const Checkpoint& ckpt);
// Frozen tokenizer rebuilt from its checkpoint.
Tokenizer load_tokenizer(const std::filesystem::path& path);
SequenceModel load_sequence_model(const std::filesystem::path& path);
// Input kind follows the snapshot's arch.
Classifier load_classifier(const std::filesystem::path& path);

// epoch_NNN.fpck
std::string epoch_checkpoint_name(std::size_t epoch);
// Epoch checkpoints in `dir`, ordered by epoch.
std::vector<std::pair<std::size_t, std::filesystem::path>> list_epoch_checkpoints(const std::filesystem::path& dir);

struct ExperimentResult {
  WorldModelTrainReport training;
  std::vector<MetricsRecord> records;
  std::optional<std::size_t> steps_to_threshold;
};

// Trains the sequence model for cfg.epochs; after every epoch, a fresh
// classifier is fitted on its features and scored.
ExperimentResult run_experiment(const RunConfig& cfg, Arch arch, const TokenizedData& data,
                                const std::function<void(const std::vector<MetricsRecord>&)>& on_round = {});

}  // namespace fptt
