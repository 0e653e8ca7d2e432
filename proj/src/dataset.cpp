#include "fptt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binio.hpp"
#include "fptt/errors.hpp"

namespace fptt::physics {

namespace {

constexpr double kWorld = 8.0;
constexpr double kFloorY = 0.25;
constexpr char kMagic[4] = {'F', 'P', 'V', '1'};

void add_room(WorldState& s) {
  s.bodies.push_back(Body::static_segment({0.0, kFloorY}, {kWorld, kFloorY}, Color::Gray));
  s.bodies.push_back(Body::static_segment({kFloorY, 0.0}, {kFloorY, kWorld}, Color::Gray));
  s.bodies.push_back(Body::static_segment({kWorld - kFloorY, 0.0}, {kWorld - kFloorY, kWorld}, Color::Gray));
}

// Green ball falls towards a raised blue platform; success if it lands on it.
WorldState drop_layout(Rng& rng) {
  WorldState s;
  add_room(s);
  const double h = rng.uniform(1.0, 2.0);
  const double cx = rng.uniform(2.0, 6.0);
  const double half = rng.uniform(0.6, 1.2);
  s.bodies.push_back(Body::static_segment({cx - half, h}, {cx + half, h}, Color::Blue));
  const double r = rng.uniform(0.5, 0.7);
  const Vec2 pos{rng.uniform(1.0, 7.0), rng.uniform(3.0, 4.5)};
  const Vec2 vel{rng.uniform(-1.5, 1.5), 0.0};
  s.bodies.push_back(Body::dynamic_circle(pos, r, Color::Green, vel, 0.1, 0.2));
  return s;
}

// Green ball rolls down a ramp towards a blue wall; success if it gets there
// before the clip ends.
WorldState ramp_layout(Rng& rng) {
  WorldState s;
  add_room(s);
  const Vec2 top{kFloorY, rng.uniform(2.5, 3.5)};
  const Vec2 bottom{rng.uniform(3.0, 3.8), kFloorY};
  s.bodies.push_back(Body::static_segment(top, bottom, Color::Gray));
  const double wall_x = rng.uniform(4.6, 7.2);
  s.bodies.push_back(Body::static_segment({wall_x, kFloorY}, {wall_x, rng.uniform(1.2, 2.0)}, Color::Blue));
  const double r = 0.5;
  const Vec2 along = bottom - top;
  const double len = norm(along);
  const Vec2 dir = along * (1.0 / len);
  const Vec2 normal{-dir.y, dir.x};  // points up-right, away from the ramp surface
  const Vec2 pos = top + dir * (len * rng.uniform(0.1, 0.35)) + normal * r;
  const Vec2 vel = dir * rng.uniform(1.0, 5.0);
  s.bodies.push_back(Body::dynamic_circle(pos, r, Color::Green, vel, 0.0, 0.1));
  return s;
}

// Green ball slides along the floor towards a blue wall, sometimes stopped by a
// gray block on the way.
WorldState blocked_layout(Rng& rng) {
  WorldState s;
  add_room(s);
  const double wall_x = rng.uniform(5.0, 7.2);
  s.bodies.push_back(Body::static_segment({wall_x, kFloorY}, {wall_x, rng.uniform(1.5, 2.5)}, Color::Blue));
  if (rng.bernoulli(0.4)) {
    const double bx = rng.uniform(3.0, 4.4);
    s.bodies.push_back(Body::static_segment({bx, kFloorY}, {bx, rng.uniform(1.3, 2.0)}, Color::Gray));
  }
  const double r = rng.uniform(0.4, 0.6);
  const Vec2 pos{rng.uniform(kFloorY + r, 2.2), kFloorY + r};
  const Vec2 vel{rng.uniform(2.0, 7.0), 0.0};
  s.bodies.push_back(Body::dynamic_circle(pos, r, Color::Green, vel, 0.0, 0.1));
  return s;
}

WorldState adjacency_layout(Rng& rng) {
  WorldState s;
  add_room(s);
  const double rg = rng.uniform(0.75, 1.0), rb = rng.uniform(0.75, 1.0);
  const double xg = rng.uniform(kFloorY + rg + 0.1, 1.6);
  const double gap = rng.bernoulli(0.5) ? 0.0 : rng.uniform(2.0, 2.8);
  s.bodies.push_back(Body::static_circle({xg + rg + gap + rb, kFloorY + rb}, rb, Color::Blue));
  s.bodies.push_back(Body::dynamic_circle({xg, kFloorY + rg}, rg, Color::Green));
  return s;
}

TaskTemplate make_template(std::string name, std::function<WorldState(Rng&)> layout) {
  TaskTemplate t;
  t.name = std::move(name);
  t.layout = std::move(layout);
  return t;
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<TaskTemplate> builtin_templates() {
  return {make_template("drop", drop_layout), make_template("ramp", ramp_layout),
          make_template("blocked", blocked_layout)};
}

TaskTemplate adjacency_template() { return make_template("adjacent", adjacency_layout); }

TaskTemplate find_template(const std::string& name) {
  for (auto& t : builtin_templates())
    if (t.name == name) return t;
  if (name == "adjacent") return adjacency_template();
  throw TemplateError("unknown task template: " + name);
}

double contact_epsilon(const View& view) { return 0.01 * view.world_width; }

TaskRollout run_task(const TaskTemplate& tmpl, std::uint64_t seed) {
  if (!tmpl.layout) throw TemplateError("template '" + tmpl.name + "' has no layout");
  if (tmpl.min_frames < 2 || tmpl.min_frames > tmpl.max_frames || tmpl.steps_per_frame == 0)
    throw TemplateError("template '" + tmpl.name + "' has invalid timing");
  Rng rng(seed);
  const auto frames = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(tmpl.min_frames), static_cast<std::int64_t>(tmpl.max_frames)));
  TaskRollout out;
  out.trajectory.push_back(tmpl.layout(rng));
  const std::size_t steps = (frames - 1) * tmpl.steps_per_frame;
  for (std::size_t i = 0; i < steps; ++i) out.trajectory.push_back(simulate_step(out.trajectory.back(), tmpl.dt));
  for (std::size_t f = 0; f < frames; ++f) out.frame_steps.push_back(f * tmpl.steps_per_frame);
  out.label = label_task(out.trajectory, contact_epsilon(tmpl.view));
  return out;
}

Tensor<float> VideoSample::frame(std::size_t t) const {
  if (t >= frames) throw IndexError("frame " + std::to_string(t) + " out of range for " + std::to_string(frames));
  Tensor<float> img({3, height, width});
  auto px = img.data();
  const std::size_t plane = std::size_t(width) * height;
  const std::uint8_t* src = pixels.data() + t * frame_bytes();
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t ch = 0; ch < 3; ++ch) px[ch * plane + i] = static_cast<float>(src[i * 3 + ch]) / 255.0f;
  return img;
}

std::vector<Tensor<float>> VideoSample::frame_tensors() const {
  std::vector<Tensor<float>> out;
  out.reserve(frames);
  for (std::size_t t = 0; t < frames; ++t) out.push_back(frame(t));
  return out;
}

std::vector<Tensor<float>> collect_frames(const std::vector<VideoSample>& videos, std::size_t limit) {
  std::vector<Tensor<float>> out;
  for (const auto& v : videos) {
    for (std::size_t t = 0; t < v.frames; ++t) {
      if (limit > 0 && out.size() == limit) return out;
      out.push_back(v.frame(t));
    }
  }
  return out;
}

VideoSample make_video(const TaskTemplate& tmpl, std::uint64_t seed, std::size_t width, std::size_t height) {
  const TaskRollout run = run_task(tmpl, seed);
  VideoSample v;
  v.frames = static_cast<std::uint32_t>(run.frame_steps.size());
  v.width = static_cast<std::uint32_t>(width);
  v.height = static_cast<std::uint32_t>(height);
  v.label = run.label;
  v.template_name = tmpl.name;
  v.seed = seed;
  v.pixels.resize(v.frames * v.frame_bytes());
  const std::size_t plane = width * height;
  for (std::size_t f = 0; f < v.frames; ++f) {
    const auto img = render_frame(run.trajectory[run.frame_steps[f]], width, height, tmpl.view);
    std::uint8_t* dst = v.pixels.data() + f * v.frame_bytes();
    for (std::size_t i = 0; i < plane; ++i)
      for (std::size_t ch = 0; ch < 3; ++ch) dst[i * 3 + ch] = to_byte(img[ch * plane + i]);
  }
  return v;
}

void write_fpv1(const VideoSample& video, const std::filesystem::path& path) {
  if (video.pixels.size() != video.frames * video.frame_bytes())
    throw ContractError("write_fpv1: pixel buffer does not match header");
  binio::Writer w;
  w.bytes(kMagic, 4);
  w.u32(video.frames);
  w.u32(video.width);
  w.u32(video.height);
  w.u8(static_cast<std::uint8_t>(video.label));
  w.bytes(video.pixels.data(), video.pixels.size());
  w.save(path);
}

VideoSample read_fpv1(const std::filesystem::path& path) {
  auto r = binio::Reader::load(path);
  if (r.size() < 4 || r.str(4) != std::string(kMagic, 4)) throw FormatError(path.string() + ": bad magic");
  VideoSample v;
  v.frames = r.u32();
  v.width = r.u32();
  v.height = r.u32();
  const std::uint8_t label = r.u8();
  if (label > 1) throw FormatError(path.string() + ": invalid label byte");
  v.label = static_cast<Label>(label);
  const std::size_t expected = std::size_t(v.frames) * v.frame_bytes();
  if (r.remaining() != expected)
    throw FormatError(path.string() + ": header implies " + std::to_string(expected) + " payload bytes, found " +
                      std::to_string(r.remaining()));
  const auto* p = r.take(expected);
  v.pixels.assign(p, p + expected);
  return v;
}

void write_ppm(const VideoSample& video, std::size_t t, const std::filesystem::path& path) {
  if (t >= video.frames) throw IndexError("write_ppm: frame " + std::to_string(t) + " out of range");
  binio::Writer w;
  const std::string header = "P6\n" + std::to_string(video.width) + " " + std::to_string(video.height) + "\n255\n";
  w.bytes(header.data(), header.size());
  w.bytes(video.pixels.data() + t * video.frame_bytes(), video.frame_bytes());
  w.save(path);
}

const char* split_name(Split s) { return s == Split::Eval ? "eval" : "train"; }

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FileError("cannot open for writing: " + path.string());
  out << "path,split,label,template,seed\n";
  for (const auto& e : entries)
    out << e.path << ',' << split_name(e.split) << ',' << label_name(e.label) << ',' << e.template_name << ','
        << e.seed << '\n';
  if (!out) throw FileError("write failed: " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open: " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 5) throw FormatError(where + ": expected 5 fields");
    ManifestEntry e;
    e.path = f[0];
    if (f[1] == "train")
      e.split = Split::Train;
    else if (f[1] == "eval")
      e.split = Split::Eval;
    else
      throw FormatError(where + ": unknown split '" + f[1] + "'");
    if (f[2] == "success")
      e.label = Label::Success;
    else if (f[2] == "failure")
      e.label = Label::Failure;
    else
      throw FormatError(where + ": unknown label '" + f[2] + "'");
    e.template_name = f[3];
    try {
      std::size_t used = 0;
      e.seed = std::stoull(f[4], &used);
      if (used != f[4].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(where + ": bad seed '" + f[4] + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

GeneratedDataset generate_dataset(const std::vector<TaskTemplate>& templates, const GenerationOptions& opts) {
  if (templates.empty()) throw InputError("generate_dataset: no templates");
  if (opts.count < 20) throw InputError("generate_dataset: count must be at least 20");
  const auto cap = static_cast<std::size_t>(std::floor(opts.max_label_fraction * static_cast<double>(opts.count)));
  std::size_t per_label[2] = {0, 0};
  GeneratedDataset out;
  for (std::size_t i = 0; i < opts.count; ++i) {
    const auto& tmpl = templates[i % templates.size()];
    bool accepted = false;
    for (std::size_t attempt = 0; attempt < opts.attempts_per_sample && !accepted; ++attempt) {
      const std::uint64_t seed = derive_seed(opts.seed, i * opts.attempts_per_sample + attempt);
      auto video = make_video(tmpl, seed, opts.width, opts.height);
      auto& n = per_label[static_cast<int>(video.label)];
      if (n >= cap) continue;
      ++n;
      ManifestEntry e;
      char name[32];
      std::snprintf(name, sizeof(name), "videos/%06zu.fpv", i);
      e.path = name;
      e.label = video.label;
      e.template_name = tmpl.name;
      e.seed = seed;
      out.manifest.push_back(std::move(e));
      out.videos.push_back(std::move(video));
      accepted = true;
    }
    if (!accepted)
      throw GenerationError("template '" + tmpl.name + "' did not produce an admissible label within " +
                            std::to_string(opts.attempts_per_sample) + " attempts");
  }

  const auto n_eval = static_cast<std::size_t>(std::lround(opts.eval_fraction * static_cast<double>(opts.count)));
  std::vector<std::size_t> order(opts.count);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(opts.seed, 0x5E1EC7ULL));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
  for (std::size_t k = 0; k < n_eval; ++k) out.manifest[order[k]].split = Split::Eval;
  return out;
}

void save_dataset(const GeneratedDataset& data, const std::filesystem::path& root) {
  std::error_code ec;
  std::filesystem::create_directories(root / "videos", ec);
  if (ec) throw FileError("cannot create " + (root / "videos").string() + ": " + ec.message());
  for (std::size_t i = 0; i < data.videos.size(); ++i) write_fpv1(data.videos[i], root / data.manifest[i].path);
  write_manifest(data.manifest, root / "manifest.csv");
}

LoadedDataset load_dataset(const std::filesystem::path& root) {
  LoadedDataset out;
  for (const auto& e : read_manifest(root / "manifest.csv")) {
    auto v = read_fpv1(root / e.path);
    if (v.label != e.label) throw FormatError(e.path + ": label differs from manifest");
    v.template_name = e.template_name;
    v.seed = e.seed;
    (e.split == Split::Eval ? out.eval : out.train).push_back(std::move(v));
  }
  return out;
}

}  // namespace fptt::physics
