#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fptt/dataset.hpp"

namespace fptt {

// Success is the positive class.
struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  void add(physics::Label predicted, physics::Label actual);
  ConfusionCounts& operator+=(const ConfusionCounts& o);
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;  // 0 when nothing was predicted positive
  double recall = 0.0;     // 0 when nothing is actually positive
  double f1 = 0.0;         // 0 when precision + recall == 0
};

Metrics compute_metrics(const ConfusionCounts& counts);

struct MetricsRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  physics::Split split = physics::Split::Eval;
  double loss = 0.0;
  Metrics metrics;
};

inline constexpr const char* kMetricsHeader = "epoch,step,split,loss,accuracy,precision,recall,f1";

// Appends rows sorted by (epoch, step); writes the header when the file is new
// or empty.
void append_metrics_csv(const std::vector<MetricsRecord>& records, const std::filesystem::path& path);
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

// Training steps at the first epoch opening a run of `consecutive` eval
// epochs with F1 strictly above `threshold`, counted as epoch·steps_per_epoch.
std::optional<std::size_t> sample_efficiency(const std::vector<double>& eval_f1, double threshold = 0.95,
                                             std::size_t consecutive = 4, std::size_t steps_per_epoch = 500);
// Same rule on the eval rows of a metrics file (one per epoch, epochs 1..n).
std::optional<std::size_t> sample_efficiency(const std::vector<MetricsRecord>& records, double threshold = 0.95,
                                             std::size_t consecutive = 4, std::size_t steps_per_epoch = 500);

}  // namespace fptt
