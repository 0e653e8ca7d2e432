#include "fptt/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fptt/errors.hpp"

namespace fptt {

void ConfusionCounts::add(physics::Label predicted, physics::Label actual) {
  const bool p = predicted == physics::Label::Success, a = actual == physics::Label::Success;
  if (p && a) ++tp;
  else if (p) ++fp;
  else if (a) ++fn;
  else ++tn;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

Metrics compute_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw InputError("compute_metrics: no samples");
  auto ratio = [](std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  Metrics m;
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  const double s = m.precision + m.recall;
  m.f1 = s > 0.0 ? 2.0 * m.precision * m.recall / s : 0.0;
  return m;
}

void append_metrics_csv(const std::vector<MetricsRecord>& records, const std::filesystem::path& path) {
  if (records.empty()) throw InputError("append_metrics_csv: no records");
  auto sorted = records;
  std::stable_sort(sorted.begin(), sorted.end(), [](const MetricsRecord& a, const MetricsRecord& b) {
    return std::tie(a.epoch, a.step) < std::tie(b.epoch, b.step);
  });
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw FileError("cannot open " + path.string() + " for appending");
  if (fresh) out << kMetricsHeader << '\n';
  char buf[256];
  for (const auto& r : sorted) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.step,
                  physics::split_name(r.split), r.loss, r.metrics.accuracy, r.metrics.precision, r.metrics.recall,
                  r.metrics.f1);
    out << buf;
  }
  if (!out) throw FileError("write failed: " + path.string());
}

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw FormatError(path.string() + ": expected header '" + std::string(kMetricsHeader) + "'");
  std::vector<MetricsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    auto bad = [&](const std::string& why) {
      return FormatError(path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    if (f.size() != 8) throw bad("expected 8 fields");
    MetricsRecord r;
    try {
      std::size_t used = 0;
      auto whole = [&](const std::string& s) {
        const auto v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return static_cast<std::size_t>(v);
      };
      auto real = [&](const std::string& s) {
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      };
      r.epoch = whole(f[0]);
      r.step = whole(f[1]);
      r.loss = real(f[3]);
      r.metrics = {real(f[4]), real(f[5]), real(f[6]), real(f[7])};
    } catch (const std::logic_error&) {
      throw bad("unparseable number");
    }
    if (f[2] == "train") r.split = physics::Split::Train;
    else if (f[2] == "eval") r.split = physics::Split::Eval;
    else throw bad("unknown split '" + f[2] + "'");
    out.push_back(r);
  }
  return out;
}

std::optional<std::size_t> sample_efficiency(const std::vector<double>& eval_f1, double threshold,
                                             std::size_t consecutive, std::size_t steps_per_epoch) {
  if (consecutive == 0) throw InputError("sample_efficiency: consecutive must be positive");
  std::size_t run = 0;
  for (std::size_t i = 0; i < eval_f1.size(); ++i) {
    run = eval_f1[i] > threshold ? run + 1 : 0;
    if (run == consecutive) return (i + 2 - consecutive) * steps_per_epoch;
  }
  return std::nullopt;
}

std::optional<std::size_t> sample_efficiency(const std::vector<MetricsRecord>& records, double threshold,
                                             std::size_t consecutive, std::size_t steps_per_epoch) {
  std::vector<double> f1;
  for (const auto& r : records) {
    if (r.split != physics::Split::Eval) continue;
    if (r.epoch != f1.size() + 1)
      throw FormatError("sample_efficiency: eval rows must cover epochs 1..n once each, found epoch " +
                        std::to_string(r.epoch) + " after " + std::to_string(f1.size()));
    f1.push_back(r.metrics.f1);
  }
  return sample_efficiency(f1, threshold, consecutive, steps_per_epoch);
}

}  // namespace fptt
