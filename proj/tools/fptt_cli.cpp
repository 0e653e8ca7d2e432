#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fptt/errors.hpp"
#include "fptt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fptt;

namespace {

struct CommonFlags {
  std::string preset;
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--preset", f.preset, "Base preset: desk or paper");
  cmd->add_option("--config", f.config_file, "Config file of key = value lines")->check(CLI::ExistingFile);
  cmd->add_option("--set", f.sets, "Override one config key (key=value); repeatable");
  cmd->add_option("--seed", f.seed, "Global seed");
}

// File first, then --preset, --set and --seed; the last preset line picks the base.
RunConfig resolve_config(const CommonFlags& f) {
  std::string text;
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw FileError("cannot open config " + f.config_file);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str() + "\n";
  }
  if (!f.preset.empty()) text += "preset = " + f.preset + "\n";
  for (const auto& s : f.sets) {
    if (s.find('=') == std::string::npos) throw InputError("--set expects key=value, got '" + s + "'");
    text += s + "\n";
  }
  if (f.seed) text += "seed = " + std::to_string(*f.seed) + "\n";
  auto cfg = RunConfig::from_text(text);
  cfg.validate();
  return cfg;
}

fs::path or_default(const std::string& value, const fs::path& fallback) {
  return value.empty() ? fallback : fs::path(value);
}

std::size_t epoch_of(const fs::path& checkpoint) {
  std::size_t epoch = 0;
  if (std::sscanf(checkpoint.filename().string().c_str(), "epoch_%zu.fpck", &epoch) == 1) return epoch;
  return 1;
}

std::string format_metrics(const Metrics& m, double loss) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "loss=%.6f accuracy=%.6f precision=%.6f recall=%.6f f1=%.6f", loss, m.accuracy,
                m.precision, m.recall, m.f1);
  return buf;
}

// --- gen-data ---------------------------------------------------------------

struct GenFlags {
  CommonFlags common;
  std::string out;
  std::optional<std::size_t> count;
  std::string templates;
};

int gen_data(const GenFlags& f) {
  auto cfg = resolve_config(f.common);
  if (f.count) cfg.dataset_count = *f.count;
  if (!f.templates.empty()) cfg.templates = f.templates;
  const auto out = or_default(f.out, cfg.data_dir);
  const auto data = physics::generate_dataset(cfg.task_templates(), cfg.generation());
  physics::save_dataset(data, out);
  std::size_t eval = 0, success = 0;
  for (const auto& e : data.manifest) {
    eval += e.split == physics::Split::Eval;
    success += e.label == physics::Label::Success;
  }
  std::printf("wrote %zu videos to %s: %zu train, %zu eval, %zu success\n", data.manifest.size(),
              out.string().c_str(), data.manifest.size() - eval, eval, success);
  return 0;
}

// --- train-tokenizer ----------------------------------------------------------

struct TokenizerFlags {
  CommonFlags common;
  std::string data;
  std::string out;
};

int train_tokenizer_cmd(const TokenizerFlags& f) {
  const auto cfg = resolve_config(f.common);
  const auto data = physics::load_dataset(or_default(f.data, cfg.data_dir));
  const auto out = or_default(f.out, fs::path(cfg.run_dir) / "tokenizer.fpck");
  auto tok = fit_tokenizer(cfg, data, nullptr, [](const TokenizerEvalPoint& p) {
    std::printf("step %zu loss %.6f mae %.6f codes %zu\n", p.step, p.loss, p.mae, p.codes_used);
    std::fflush(stdout);
  });
  save_model(tok.parameters(), cfg, out);
  std::printf("saved %s\n", out.string().c_str());
  return 0;
}

// --- train-worldmodel --------------------------------------------------------

struct WorldModelFlags {
  CommonFlags common;
  std::string data;
  std::string tokenizer;
  std::string arch;
  std::string out;
  std::optional<std::size_t> epochs;
};

int train_worldmodel_cmd(const WorldModelFlags& f) {
  auto cfg = resolve_config(f.common);
  if (!f.arch.empty()) cfg.arch = f.arch;
  if (f.epochs) cfg.epochs = *f.epochs;
  const auto arch = parse_arch(cfg.arch);
  const auto tok_path = or_default(f.tokenizer, fs::path(cfg.run_dir) / "tokenizer.fpck");
  const auto tok_snapshot = checkpoint_config(load_checkpoint(tok_path));
  auto arch_name_keep = cfg.arch;
  cfg = adopt_model_keys(cfg, tok_snapshot);
  cfg.arch = arch_name_keep;
  cfg.validate();

  const auto tok = load_tokenizer(tok_path);
  const auto fingerprint = tok.fingerprint();
  const auto tokens = tokenize_dataset(tok, physics::load_dataset(or_default(f.data, cfg.data_dir)));
  const auto out = or_default(f.out, fs::path(cfg.run_dir) / arch_name(arch));
  fs::create_directories(out);

  SequenceModel model(arch, cfg);
  std::printf("%s: %zu parameters, %zu training videos\n", arch_name(arch), model.parameters().parameter_count(),
              tokens.train.size());
  model.train(tokens.train, cfg.sequence_training(), [&](const WorldModelEpoch& e) {
    const auto path = out / epoch_checkpoint_name(e.epoch);
    save_model(model.parameters(), cfg, path);
    std::printf("epoch %zu step %zu loss %.6f -> %s\n", e.epoch, e.epoch * cfg.steps_per_epoch(), e.mean_loss,
                path.string().c_str());
    std::fflush(stdout);
  });
  if (tok.fingerprint() != fingerprint) throw ContractError("tokenizer parameters changed during training");
  return 0;
}

// --- train-classifier --------------------------------------------------------

struct ClassifierFlags {
  CommonFlags common;
  std::string data;
  std::string tokenizer;
  std::string worldmodel;
  std::string metrics;
};

int train_classifier_cmd(const ClassifierFlags& f) {
  auto cfg = resolve_config(f.common);
  const auto tok_path = or_default(f.tokenizer, fs::path(cfg.run_dir) / "tokenizer.fpck");
  const auto wm_path = or_default(f.worldmodel, fs::path(cfg.run_dir) / cfg.arch);

  std::vector<std::pair<std::size_t, fs::path>> checkpoints;
  if (fs::is_directory(wm_path)) checkpoints = list_epoch_checkpoints(wm_path);
  else checkpoints.emplace_back(epoch_of(wm_path), wm_path);
  if (checkpoints.empty()) throw InputError("no epoch checkpoints in " + wm_path.string());
  const auto dir = fs::is_directory(wm_path) ? wm_path : wm_path.parent_path();
  const auto metrics = or_default(f.metrics, dir / "metrics.csv");

  const auto tok = load_tokenizer(tok_path);
  const auto tokens = tokenize_dataset(tok, physics::load_dataset(or_default(f.data, cfg.data_dir)));
  for (const auto& [epoch, path] : checkpoints) {
    const auto model = load_sequence_model(path);
    const auto run = adopt_model_keys(cfg, checkpoint_config(load_checkpoint(path)));
    const auto train = extract_features(model, tokens.train, run.given_frames, stage_seed(run, Stage::Features, 0));
    const auto eval = extract_features(model, tokens.eval, run.given_frames, stage_seed(run, Stage::Features, 1));
    std::unique_ptr<Classifier> clf;
    const auto round =
        fit_classifier(run, model.feature_kind(), train, eval, stage_seed(run, Stage::Classifier, epoch), &clf);
    const auto rows = round_records(epoch, epoch * run.steps_per_epoch(), round);
    append_metrics_csv(rows, metrics);
    char name[40];
    std::snprintf(name, sizeof name, "classifier_%03zu.fpck", epoch);
    save_model(clf->parameters(), run, dir / name);
    std::printf("epoch %zu train %s\n", epoch, format_metrics(rows[0].metrics, rows[0].loss).c_str());
    std::printf("epoch %zu eval  %s\n", epoch, format_metrics(rows[1].metrics, rows[1].loss).c_str());
    std::fflush(stdout);
  }
  std::printf("metrics appended to %s\n", metrics.string().c_str());
  return 0;
}

// --- eval ----------------------------------------------------------------------

struct EvalFlags {
  CommonFlags common;
  std::string data;
  std::string tokenizer;
  std::string worldmodel;
  std::string classifier;
  std::string split = "eval";
};

int eval_cmd(const EvalFlags& f) {
  const auto cfg = resolve_config(f.common);
  const auto tok = load_tokenizer(or_default(f.tokenizer, fs::path(cfg.run_dir) / "tokenizer.fpck"));
  const auto data = physics::load_dataset(or_default(f.data, cfg.data_dir));
  const auto model = load_sequence_model(f.worldmodel);
  const auto run = adopt_model_keys(cfg, checkpoint_config(load_checkpoint(f.worldmodel)));
  const auto clf = load_classifier(f.classifier);
  if (clf.config().input != model.feature_kind()) throw InputError("classifier does not match the world model");
  const bool eval_split = f.split == "eval";
  const auto videos = tokenize_videos(tok, eval_split ? data.eval : data.train);
  const auto feats =
      extract_features(model, videos, run.given_frames, stage_seed(run, Stage::Features, eval_split ? 1 : 0));
  const auto result = evaluate_classifier(clf, feats);
  std::printf("%s n=%zu %s\n", f.split.c_str(), feats.size(),
              format_metrics(compute_metrics(result.counts), result.loss).c_str());
  return 0;
}

// --- sample-efficiency -------------------------------------------------------------

struct EfficiencyFlags {
  std::string metrics;
  double threshold = 0.95;
  std::size_t consecutive = 4;
  std::optional<std::size_t> steps_per_epoch;
};

int sample_efficiency_cmd(const EfficiencyFlags& f) {
  const auto records = read_metrics_csv(f.metrics);
  std::size_t per_epoch = 0;
  if (f.steps_per_epoch) {
    per_epoch = *f.steps_per_epoch;
  } else {
    for (const auto& r : records)
      if (r.split == physics::Split::Eval && r.epoch == 1) per_epoch = r.step;
    if (per_epoch == 0) throw InputError("cannot infer steps per epoch; pass --steps-per-epoch");
  }
  const auto steps = sample_efficiency(records, f.threshold, f.consecutive, per_epoch);
  if (steps) std::printf("%zu\n", *steps);
  else std::printf("not reached\n");
  return 0;
}

// --- dump-frames -------------------------------------------------------------------

struct DumpFlags {
  std::string video;
  std::string out;
  std::string tokenizer;
};

int dump_frames_cmd(const DumpFlags& f) {
  const auto video = physics::read_fpv1(f.video);
  fs::create_directories(f.out);
  std::optional<Tokenizer> tok;
  if (!f.tokenizer.empty()) tok.emplace(load_tokenizer(f.tokenizer));
  auto recon = video;
  for (std::size_t t = 0; t < video.frames; ++t) {
    char name[40];
    std::snprintf(name, sizeof name, "frame_%03zu.ppm", t + 1);
    physics::write_ppm(video, t, fs::path(f.out) / name);
    if (!tok) continue;
    if (tok->config().image_size != video.width || video.width != video.height)
      throw InputError("tokenizer expects " + std::to_string(tok->config().image_size) + "px frames");
    const auto img = tok->reconstruct(video.frame(t));
    const std::size_t plane = std::size_t(video.width) * video.height;
    auto* dst = recon.pixels.data() + t * video.frame_bytes();
    for (std::size_t i = 0; i < plane; ++i)
      for (std::size_t ch = 0; ch < 3; ++ch)
        dst[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(img.data()[ch * plane + i] * 255.0f));
    std::snprintf(name, sizeof name, "recon_%03zu.ppm", t + 1);
    physics::write_ppm(recon, t, fs::path(f.out) / name);
  }
  std::printf("wrote %u frames to %s\n", video.frames, f.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physical-outcome world model toolkit"};
  app.require_subcommand(1);

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a physics video dataset");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("--out", gen.out, "Dataset directory");
  gen_cmd->add_option("--count", gen.count, "Number of videos");
  gen_cmd->add_option("--templates", gen.templates, "Comma-separated task templates");

  TokenizerFlags tokf;
  auto* tok_cmd = app.add_subcommand("train-tokenizer", "Train the VQ-VAE tokenizer");
  add_common(tok_cmd, tokf.common);
  tok_cmd->add_option("--data", tokf.data, "Dataset directory");
  tok_cmd->add_option("--out", tokf.out, "Tokenizer checkpoint");

  WorldModelFlags wmf;
  auto* wm_cmd = app.add_subcommand("train-worldmodel", "Train a sequence model, one checkpoint per epoch");
  add_common(wm_cmd, wmf.common);
  wm_cmd->add_option("--data", wmf.data, "Dataset directory");
  wm_cmd->add_option("--tokenizer", wmf.tokenizer, "Tokenizer checkpoint");
  wm_cmd->add_option("--arch", wmf.arch, "fptt or decoder-only")
      ->check(CLI::IsMember({"fptt", "decoder-only"}));
  wm_cmd->add_option("--out", wmf.out, "Checkpoint directory");
  wm_cmd->add_option("--epochs", wmf.epochs, "Number of epochs");

  ClassifierFlags clf;
  auto* clf_cmd = app.add_subcommand("train-classifier", "Fit a classifier on each world-model checkpoint");
  add_common(clf_cmd, clf.common);
  clf_cmd->add_option("--data", clf.data, "Dataset directory");
  clf_cmd->add_option("--tokenizer", clf.tokenizer, "Tokenizer checkpoint");
  clf_cmd->add_option("--worldmodel", clf.worldmodel, "Checkpoint file or directory of epoch checkpoints");
  clf_cmd->add_option("--metrics", clf.metrics, "Metrics CSV (appended)");

  EvalFlags ev;
  auto* eval_sub = app.add_subcommand("eval", "Score a trained classifier");
  add_common(eval_sub, ev.common);
  eval_sub->add_option("--data", ev.data, "Dataset directory");
  eval_sub->add_option("--tokenizer", ev.tokenizer, "Tokenizer checkpoint");
  eval_sub->add_option("--worldmodel", ev.worldmodel, "World-model checkpoint")->required();
  eval_sub->add_option("--classifier", ev.classifier, "Classifier checkpoint")->required();
  eval_sub->add_option("--split", ev.split, "eval or train")->check(CLI::IsMember({"eval", "train"}));

  EfficiencyFlags se;
  auto* se_cmd = app.add_subcommand("sample-efficiency", "Training steps until eval F1 stays above a threshold");
  se_cmd->add_option("--metrics", se.metrics, "Metrics CSV")->required();
  se_cmd->add_option("--threshold", se.threshold, "F1 threshold (strict)");
  se_cmd->add_option("--consecutive", se.consecutive, "Consecutive epochs")->check(CLI::PositiveNumber);
  se_cmd->add_option("--steps-per-epoch", se.steps_per_epoch, "Defaults to the step of the epoch-1 eval row");

  DumpFlags dump;
  auto* dump_cmd = app.add_subcommand("dump-frames", "Write the frames of a video as PPM images");
  dump_cmd->add_option("--video", dump.video, "FPV1 video")->required()->check(CLI::ExistingFile);
  dump_cmd->add_option("--out", dump.out, "Output directory")->required();
  dump_cmd->add_option("--tokenizer", dump.tokenizer, "Also write tokenizer reconstructions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen_cmd) return gen_data(gen);
    if (*tok_cmd) return train_tokenizer_cmd(tokf);
    if (*wm_cmd) return train_worldmodel_cmd(wmf);
    if (*clf_cmd) return train_classifier_cmd(clf);
    if (*eval_sub) return eval_cmd(ev);
    if (*se_cmd) return sample_efficiency_cmd(se);
    if (*dump_cmd) return dump_frames_cmd(dump);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
