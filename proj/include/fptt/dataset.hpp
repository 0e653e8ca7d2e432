#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fptt/physics.hpp"
#include "fptt/tensor.hpp"

namespace fptt::physics {

// A parameterized family of initial layouts plus the clip timing.
struct TaskTemplate {
  std::string name;
  std::size_t min_frames = 7;
  std::size_t max_frames = 12;
  std::size_t steps_per_frame = 10;
  double dt = 0.01;
  View view;
  std::function<WorldState(Rng&)> layout;
};

// drop, ramp, blocked.
std::vector<TaskTemplate> builtin_templates();
// Green resting either against the blue body or clearly apart from it; the
// outcome is visible in the first frame.
TaskTemplate adjacency_template();
TaskTemplate find_template(const std::string& name);

// Contact tolerance: 1% of the world width.
double contact_epsilon(const View& view);

struct TaskRollout {
  std::vector<WorldState> trajectory;  // every simulation step, initial state first
  std::vector<std::size_t> frame_steps;  // trajectory index of each rendered frame
  Label label = Label::Failure;
};

TaskRollout run_task(const TaskTemplate& tmpl, std::uint64_t seed);

// Frames stored as uint8 RGB, frame-major then row-major HWC.
struct VideoSample {
  std::uint32_t frames = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  Label label = Label::Failure;
  std::vector<std::uint8_t> pixels;
  std::string template_name;
  std::uint64_t seed = 0;

  std::size_t frame_bytes() const { return std::size_t(width) * height * 3; }
  // Frame t as a [3, H, W] tensor with values in [0, 1].
  Tensor<float> frame(std::size_t t) const;
  std::vector<Tensor<float>> frame_tensors() const;
};

// Frames of `videos` in order, at most `limit` of them (0 keeps all).
std::vector<Tensor<float>> collect_frames(const std::vector<VideoSample>& videos, std::size_t limit = 0);

VideoSample make_video(const TaskTemplate& tmpl, std::uint64_t seed, std::size_t width, std::size_t height);

void write_fpv1(const VideoSample& video, const std::filesystem::path& path);
VideoSample read_fpv1(const std::filesystem::path& path);

// Binary PPM (P6) of one frame.
void write_ppm(const VideoSample& video, std::size_t t, const std::filesystem::path& path);

enum class Split : std::uint8_t { Train, Eval };
const char* split_name(Split s);

struct ManifestEntry {
  std::string path;  // relative to the dataset root
  Split split = Split::Train;
  Label label = Label::Failure;
  std::string template_name;
  std::uint64_t seed = 0;
};

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

struct GenerationOptions {
  std::size_t count = 100;
  std::uint64_t seed = 0;
  std::size_t width = 16;
  std::size_t height = 16;
  double max_label_fraction = 0.7;
  double eval_fraction = 0.05;
  std::size_t attempts_per_sample = 50;
};

struct GeneratedDataset {
  std::vector<ManifestEntry> manifest;
  std::vector<VideoSample> videos;  // parallel to manifest
};

// Round-robins over the templates and rejects samples whose label is already
// at its cap, so neither label exceeds max_label_fraction of the dataset.
GeneratedDataset generate_dataset(const std::vector<TaskTemplate>& templates, const GenerationOptions& opts);

// Writes videos/NNNNNN.fpv and manifest.csv under root.
void save_dataset(const GeneratedDataset& data, const std::filesystem::path& root);

struct LoadedDataset {
  std::vector<VideoSample> train;
  std::vector<VideoSample> eval;
};

LoadedDataset load_dataset(const std::filesystem::path& root);

}  // namespace fptt::physics
