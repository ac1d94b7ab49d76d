#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace espo {

/// One row of training dynamics, recorded per (step, mini-epoch).
struct StepRecord {
  std::int64_t step = 0;
  int mini_epoch = 0;
  std::string algorithm;
  double mean_reward = 0.0;
  double accuracy = 0.0;
  double mean_length = 0.0;
  double mean_entropy = 0.0;
  double clip_low = 0.0;
  double clip_high = 0.0;
  std::optional<double> mean_epsilon;
  double loss = 0.0;
  bool skipped = false;   // no group survived filtering; parameters unchanged
  bool rejected = false;  // non-finite loss or gradient; update not applied

  bool operator==(const StepRecord&) const = default;
};

/// Column order of the metrics file.
inline constexpr const char* kMetricColumns[] = {
    "step",      "mini_epoch", "algorithm", "mean_reward",  "accuracy", "mean_length", "mean_entropy",
    "clip_low",  "clip_high",  "mean_epsilon", "loss",     "skipped",  "rejected"};

std::string metrics_header();
std::string format_row(const StepRecord& record);
StepRecord parse_row(const std::string& line);

/// Numeric value of a metric column; empty for an absent mean_epsilon.
/// Throws std::invalid_argument for unknown or non-numeric column names.
std::optional<double> metric_value(const StepRecord& record, const std::string& metric);

/// Buffered CSV writer. The header is written when a fresh file is opened;
/// `flush` persists pending rows in arrival order and is idempotent.
class MetricsWriter {
 public:
  explicit MetricsWriter(std::string path, bool append = false);

  void append(const StepRecord& record);
  void flush();
  const std::string& path() const { return path_; }
  std::size_t rows_written() const { return written_; }

 private:
  std::string path_;
  std::ofstream out_;
  std::vector<std::string> pending_;
  std::size_t written_ = 0;
};

std::vector<StepRecord> read_metrics(const std::string& path);

/// Trailing moving average per numeric metric; partial leading windows are
/// averaged over the available points. Absent values (mean_epsilon of
/// non-espo runs) are skipped inside a window and yield NaN when a window
/// has none.
std::map<std::string, std::vector<double>> summarize(std::span<const StepRecord> records, std::size_t window);

std::vector<double> moving_average(std::span<const double> series, std::size_t window);

}  // namespace espo
