#include "fptt/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <variant>

#include "fptt/errors.hpp"

namespace fptt {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed is stored as a size field");
using Field = std::variant<std::size_t RunConfig::*, double RunConfig::*, bool RunConfig::*, std::string RunConfig::*>;

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"preset", &RunConfig::preset},
      {"seed", &RunConfig::seed},
      {"templates", &RunConfig::templates},
      {"arch", &RunConfig::arch},
      {"data_dir", &RunConfig::data_dir},
      {"run_dir", &RunConfig::run_dir},
      {"image_size", &RunConfig::image_size},
      {"tokenizer_channels", &RunConfig::tokenizer_channels},
      {"down_stages", &RunConfig::down_stages},
      {"res_blocks", &RunConfig::res_blocks},
      {"attention_blocks", &RunConfig::attention_blocks},
      {"code_dim", &RunConfig::code_dim},
      {"codebook_size", &RunConfig::codebook_size},
      {"commitment_beta", &RunConfig::commitment_beta},
      {"tokenizer_steps", &RunConfig::tokenizer_steps},
      {"tokenizer_batch", &RunConfig::tokenizer_batch},
      {"tokenizer_lr", &RunConfig::tokenizer_lr},
      {"restart_dead_codes_every", &RunConfig::restart_dead_codes_every},
      {"tokenizer_frames", &RunConfig::tokenizer_frames},
      {"reported_vocab_size", &RunConfig::reported_vocab_size},
      {"d_model", &RunConfig::d_model},
      {"n_heads", &RunConfig::n_heads},
      {"slots", &RunConfig::slots},
      {"corrector_layers", &RunConfig::corrector_layers},
      {"predictor_layers", &RunConfig::predictor_layers},
      {"decoder_layers", &RunConfig::decoder_layers},
      {"classifier_layers", &RunConfig::classifier_layers},
      {"baseline_layers", &RunConfig::baseline_layers},
      {"mlp_ratio", &RunConfig::mlp_ratio},
      {"corrector_self_attention", &RunConfig::corrector_self_attention},
      {"learned_init", &RunConfig::learned_init},
      {"given_frames", &RunConfig::given_frames},
      {"min_frames", &RunConfig::min_frames},
      {"max_frames", &RunConfig::max_frames},
      {"dataset_count", &RunConfig::dataset_count},
      {"epochs", &RunConfig::epochs},
      {"batch_size", &RunConfig::batch_size},
      {"batches_per_epoch", &RunConfig::batches_per_epoch},
      {"wm_lr", &RunConfig::wm_lr},
      {"weight_decay", &RunConfig::weight_decay},
      {"beta1", &RunConfig::beta1},
      {"beta2", &RunConfig::beta2},
      {"adam_eps", &RunConfig::adam_eps},
      {"grad_clip", &RunConfig::grad_clip},
      {"classifier_steps", &RunConfig::classifier_steps},
      {"classifier_batch", &RunConfig::classifier_batch},
      {"classifier_lr", &RunConfig::classifier_lr},
      {"f1_threshold", &RunConfig::f1_threshold},
      {"consecutive_epochs", &RunConfig::consecutive_epochs},
  };
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& [name, f] : fields())
    if (name == key) return f;
  throw InputError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw InputError("config key '" + key + "': bad value '" + v + "'");
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  const auto value = trim(raw);
  std::visit(
      [&](auto member) {
        using T = std::decay_t<decltype(this->*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          this->*member = value;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (value == "true" || value == "1") this->*member = true;
          else if (value == "false" || value == "0") this->*member = false;
          else throw InputError("config key '" + key + "': expected true or false, got '" + value + "'");
        } else {
          this->*member = parse_number<T>(key, value);
        }
      },
      find_field(key));
}

std::string RunConfig::get(const std::string& key) const {
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::decay_t<decltype(this->*member)>;
        if constexpr (std::is_same_v<T, std::string>) return this->*member;
        else if constexpr (std::is_same_v<T, bool>) return this->*member ? "true" : "false";
        else if constexpr (std::is_same_v<T, double>) {
          char buf[64];
          auto [p, ec] = std::to_chars(buf, buf + sizeof buf, this->*member);
          return std::string(buf, p);
        } else return std::to_string(this->*member);
      },
      find_field(key));
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.first);
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& key : keys()) out += key + " = " + get(key) + "\n";
  return out;
}

RunConfig RunConfig::from_text(const std::string& text) {
  // A `preset` line, wherever it appears, selects the base values.
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::string base = "desk";
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(lineno) + ": expected key = value");
    auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "preset") base = value;
    entries.emplace_back(std::move(key), std::move(value));
  }
  RunConfig cfg = fptt::preset(base);
  for (const auto& [k, v] : entries) cfg.set(k, v);
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void RunConfig::validate() const {
  tokenizer().validate();
  worldmodel().validate();
  decoder_only().validate();
  if (given_frames == 0) throw InputError("config: given_frames must be positive");
  if (min_frames <= given_frames)
    throw InputError("config: min_frames must exceed given_frames so every rollout has a target");
  if (max_frames < min_frames) throw InputError("config: max_frames < min_frames");
  if (batch_size == 0 || batches_per_epoch == 0) throw InputError("config: empty epoch");
  if (consecutive_epochs == 0) throw InputError("config: consecutive_epochs must be positive");
  task_templates();
  if (arch != "fptt" && arch != "decoder-only") throw InputError("config: arch must be fptt or decoder-only");
}

TokenizerConfig RunConfig::tokenizer() const {
  TokenizerConfig t;
  t.image_size = image_size;
  t.channels = tokenizer_channels;
  t.down_stages = down_stages;
  t.res_blocks = res_blocks;
  t.attention_blocks = attention_blocks;
  t.code_dim = code_dim;
  t.codebook_size = codebook_size;
  t.beta = commitment_beta;
  return t;
}

TokenizerTrainOptions RunConfig::tokenizer_training() const {
  TokenizerTrainOptions o;
  o.steps = tokenizer_steps;
  o.batch_size = tokenizer_batch;
  o.restart_dead_codes_every = restart_dead_codes_every;
  o.optimizer = paper_tokenizer_optimizer();
  o.optimizer.learning_rate = tokenizer_lr;
  o.seed = derive_seed(seed, 1);
  return o;
}

WorldModelConfig RunConfig::worldmodel() const {
  WorldModelConfig w;
  w.vocab = codebook_size;
  w.tokens_per_frame = tokenizer().tokens_per_frame();
  w.d_model = d_model;
  w.n_heads = n_heads;
  w.slots = slots;
  w.corrector_layers = corrector_layers;
  w.predictor_layers = predictor_layers;
  w.decoder_layers = decoder_layers;
  w.mlp_ratio = mlp_ratio;
  w.corrector_self_attention = corrector_self_attention;
  w.learned_init = learned_init;
  return w;
}

DecoderOnlyConfig RunConfig::decoder_only() const {
  DecoderOnlyConfig d;
  d.vocab = codebook_size;
  d.tokens_per_frame = tokenizer().tokens_per_frame();
  d.d_model = d_model;
  d.n_heads = n_heads;
  d.layers = baseline_layers;
  d.mlp_ratio = mlp_ratio;
  return d;
}

WorldModelTrainOptions RunConfig::sequence_training() const {
  WorldModelTrainOptions o;
  o.epochs = epochs;
  o.batches_per_epoch = batches_per_epoch;
  o.batch_size = batch_size;
  o.optimizer = {OptimizerMode::AdamW, wm_lr, weight_decay, beta1, beta2, adam_eps};
  o.grad_clip = grad_clip;
  o.seed = derive_seed(seed, 2);
  return o;
}

ClassifierConfig RunConfig::classifier(ClassifierInput input) const {
  ClassifierConfig c;
  c.input = input;
  c.input_rows = input == ClassifierInput::Slots ? slots : tokenizer().tokens_per_frame();
  c.input_width = d_model;
  c.vocab = codebook_size;
  c.d_model = d_model;
  c.n_heads = n_heads;
  c.layers = classifier_layers;
  c.mlp_ratio = mlp_ratio;
  return c;
}

ClassifierTrainOptions RunConfig::classifier_training() const {
  ClassifierTrainOptions o;
  o.steps = classifier_steps;
  o.batch_size = classifier_batch;
  o.optimizer = {OptimizerMode::AdamW, classifier_lr, weight_decay, beta1, beta2, adam_eps};
  o.seed = derive_seed(seed, 3);
  return o;
}

std::vector<physics::TaskTemplate> RunConfig::task_templates() const {
  std::vector<physics::TaskTemplate> out;
  std::stringstream ss(templates);
  std::string name;
  while (std::getline(ss, name, ',')) {
    name = trim(name);
    if (name.empty()) continue;
    auto t = physics::find_template(name);
    t.min_frames = min_frames;
    t.max_frames = max_frames;
    out.push_back(std::move(t));
  }
  if (out.empty()) throw InputError("config: no task templates");
  return out;
}

physics::GenerationOptions RunConfig::generation() const {
  physics::GenerationOptions g;
  g.count = dataset_count;
  g.seed = derive_seed(seed, 4);
  g.width = image_size;
  g.height = image_size;
  return g;
}

RunConfig desk_preset() { return RunConfig{}; }

RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.image_size = 64;
  c.tokenizer_channels = 64;
  c.down_stages = 3;
  c.res_blocks = 10;
  c.attention_blocks = 3;
  c.code_dim = 64;
  c.codebook_size = 512;
  c.reported_vocab_size = 50304;
  c.tokenizer_lr = 1e-4;
  c.d_model = 768;
  c.n_heads = 12;
  c.slots = 4;
  c.corrector_layers = 2;
  c.predictor_layers = 2;
  c.decoder_layers = 6;
  c.classifier_layers = 2;
  c.baseline_layers = 6;
  c.given_frames = 5;
  c.min_frames = 7;
  c.max_frames = 18;
  c.dataset_count = 50000;
  c.epochs = 100;
  c.batch_size = 50;
  c.batches_per_epoch = 10;
  c.wm_lr = 6e-4;
  c.weight_decay = 0.1;
  c.beta1 = 0.9;
  c.beta2 = 0.95;
  c.classifier_lr = 6e-4;
  return c;
}

RunConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw InputError("unknown preset '" + name + "' (expected desk or paper)");
}

}  // namespace fptt
