#include "espo/telemetry.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace espo {

namespace {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

constexpr const char* kNumericMetrics[] = {"mean_reward", "accuracy", "mean_length", "mean_entropy",
                                           "clip_low",    "clip_high", "mean_epsilon", "loss"};

}  // namespace

std::string metrics_header() {
  std::string h;
  for (const char* c : kMetricColumns) {
    if (!h.empty()) h += ',';
    h += c;
  }
  return h;
}

std::string format_row(const StepRecord& r) {
  std::string row = std::to_string(r.step) + ',' + std::to_string(r.mini_epoch) + ',' + r.algorithm;
  for (double x : {r.mean_reward, r.accuracy, r.mean_length, r.mean_entropy, r.clip_low, r.clip_high})
    row += ',' + fmt17(x);
  row += ',' + (r.mean_epsilon ? fmt17(*r.mean_epsilon) : std::string());
  row += ',' + fmt17(r.loss);
  row += r.skipped ? ",1" : ",0";
  row += r.rejected ? ",1" : ",0";
  return row;
}

StepRecord parse_row(const std::string& line) {
  const std::vector<std::string> c = split_csv(line);
  constexpr std::size_t columns = std::size(kMetricColumns);
  if (c.size() != columns)
    throw std::runtime_error("metrics row has " + std::to_string(c.size()) + " cells, expected " +
                             std::to_string(columns));
  StepRecord r;
  r.step = std::stoll(c[0]);
  r.mini_epoch = std::stoi(c[1]);
  r.algorithm = c[2];
  r.mean_reward = std::stod(c[3]);
  r.accuracy = std::stod(c[4]);
  r.mean_length = std::stod(c[5]);
  r.mean_entropy = std::stod(c[6]);
  r.clip_low = std::stod(c[7]);
  r.clip_high = std::stod(c[8]);
  if (!c[9].empty()) r.mean_epsilon = std::stod(c[9]);
  r.loss = std::stod(c[10]);
  r.skipped = c[11] == "1";
  r.rejected = c[12] == "1";
  return r;
}

std::optional<double> metric_value(const StepRecord& r, const std::string& metric) {
  if (metric == "mean_reward" || metric == "reward") return r.mean_reward;
  if (metric == "accuracy") return r.accuracy;
  if (metric == "mean_length" || metric == "length") return r.mean_length;
  if (metric == "mean_entropy" || metric == "entropy") return r.mean_entropy;
  if (metric == "clip_low") return r.clip_low;
  if (metric == "clip_high") return r.clip_high;
  if (metric == "clip_total") return r.clip_low + r.clip_high;
  if (metric == "mean_epsilon" || metric == "epsilon") return r.mean_epsilon;
  if (metric == "loss") return r.loss;
  throw std::invalid_argument("unknown metric '" + metric + "'");
}

MetricsWriter::MetricsWriter(std::string path, bool append) : path_(std::move(path)) {
  namespace fs = std::filesystem;
  const bool fresh = !append || !fs::exists(path_) || fs::file_size(path_) == 0;
  out_.open(path_, fresh ? std::ios::out | std::ios::trunc : std::ios::out | std::ios::app);
  if (!out_) throw std::runtime_error("metrics: cannot open '" + path_ + "' for writing");
  if (fresh) {
    out_ << metrics_header() << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("metrics: write failed for '" + path_ + "'");
  }
}

void MetricsWriter::append(const StepRecord& record) { pending_.push_back(format_row(record)); }

void MetricsWriter::flush() {
  for (const std::string& row : pending_) out_ << row << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("metrics: write failed for '" + path_ + "'");
  written_ += pending_.size();
  pending_.clear();
}

std::vector<StepRecord> read_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("metrics: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line != metrics_header())
    throw std::runtime_error("metrics: '" + path + "' has an unexpected header");
  std::vector<StepRecord> records;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(parse_row(line));
    } catch (const std::exception& e) {
      throw std::runtime_error("metrics: '" + path + "' line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

std::vector<double> moving_average(std::span<const double> series, std::size_t window) {
  if (window == 0) throw std::invalid_argument("moving_average: window must be >= 1");
  std::vector<double> out(series.size());
  for (std::size_t k = 0; k < series.size(); ++k) {
    const std::size_t first = k + 1 >= window ? k + 1 - window : 0;
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t m = first; m <= k; ++m)
      if (!std::isnan(series[m])) total += series[m], ++count;
    out[k] = count ? total / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

std::map<std::string, std::vector<double>> summarize(std::span<const StepRecord> records, std::size_t window) {
  if (records.empty()) throw std::invalid_argument("summarize: no records");
  if (window == 0) throw std::invalid_argument("summarize: window must be >= 1");
  std::map<std::string, std::vector<double>> out;
  for (const char* metric : kNumericMetrics) {
    std::vector<double> series;
    series.reserve(records.size());
    for (const StepRecord& r : records)
      series.push_back(metric_value(r, metric).value_or(std::numeric_limits<double>::quiet_NaN()));
    out[metric] = moving_average(series, window);
  }
  return out;
}

}  // namespace espo
