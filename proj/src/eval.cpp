#include "dml/eval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <string_view>

#include "dml/kernels.hpp"

namespace dml {
namespace {

// Sorted (distance, is_similar) with thresholds at 0, each distinct distance, +inf.
struct Sweep {
  std::vector<double> thresholds;
  std::vector<std::size_t> similar_at_or_below;
  std::vector<std::size_t> dissimilar_at_or_below;
};

Sweep sweep(const PairDistances& distances) {
  std::vector<std::pair<double, bool>> all;
  all.reserve(distances.similar.size() + distances.dissimilar.size());
  for (const double v : distances.similar) all.emplace_back(v, true);
  for (const double v : distances.dissimilar) all.emplace_back(v, false);
  std::sort(all.begin(), all.end());

  Sweep s;
  std::size_t similar = 0;
  std::size_t dissimilar = 0;
  std::size_t i = 0;
  auto advance_to = [&](double t) {
    while (i < all.size() && all[i].first <= t) {
      (all[i].second ? similar : dissimilar) += 1;
      ++i;
    }
    s.thresholds.push_back(t);
    s.similar_at_or_below.push_back(similar);
    s.dissimilar_at_or_below.push_back(dissimilar);
  };
  advance_to(0.0);
  while (i < all.size()) advance_to(all[i].first);
  advance_to(std::numeric_limits<double>::infinity());
  return s;
}

bool parse_field(std::string_view text, double& out) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r' || text.back() == '\t')) text.remove_suffix(1);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

double Confusion::accuracy() const {
  const std::size_t total = tp + fp + tn + fn;
  return total == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(total);
}

PairDistances pair_distances(const MetricFactor& L, const Dataset& data, const PairSet& pairs) {
  return {kernels::parallel::pair_distances(L, data, pairs.similar),
          kernels::parallel::pair_distances(L, data, pairs.dissimilar)};
}

PairDistances pair_distances(const MahalanobisMatrix& M, const Dataset& data, const PairSet& pairs) {
  return {kernels::parallel::quadratic_distances(M, data, pairs.similar),
          kernels::parallel::quadratic_distances(M, data, pairs.dissimilar)};
}

Confusion classify(const PairDistances& distances, double t) {
  if (!(t >= 0.0)) throw ConfigError("threshold must be >= 0");
  Confusion c;
  for (const double v : distances.similar) (v <= t ? c.tp : c.fn) += 1;
  for (const double v : distances.dissimilar) (v <= t ? c.fp : c.tn) += 1;
  return c;
}

Confusion classify_pairs(const MetricFactor& L, const Dataset& data, const PairSet& test_pairs, double t) {
  return classify(pair_distances(L, data, test_pairs), t);
}

EvalCurve pr_curve(const PairDistances& distances) {
  if (distances.similar.empty() || distances.dissimilar.empty()) {
    throw ConfigError("precision-recall needs at least one similar and one dissimilar pair");
  }
  const Sweep s = sweep(distances);
  const auto positives = static_cast<double>(distances.similar.size());
  EvalCurve curve;
  curve.points.reserve(s.thresholds.size());
  double previous_recall = 0.0;
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    const std::size_t tp = s.similar_at_or_below[i];
    const std::size_t predicted = tp + s.dissimilar_at_or_below[i];
    CurvePoint point;
    point.threshold = s.thresholds[i];
    point.precision = predicted == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    point.recall = static_cast<double>(tp) / positives;
    curve.average_precision += (point.recall - previous_recall) * point.precision;
    previous_recall = point.recall;
    curve.points.push_back(point);
  }
  return curve;
}

EvalCurve pr_curve(const MetricFactor& L, const Dataset& data, const PairSet& test_pairs) {
  return pr_curve(pair_distances(L, data, test_pairs));
}

ThresholdChoice best_threshold(const PairDistances& distances) {
  const Sweep s = sweep(distances);
  const auto total = static_cast<double>(distances.similar.size() + distances.dissimilar.size());
  ThresholdChoice best{0.0, -1.0};
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    const std::size_t tn = distances.dissimilar.size() - s.dissimilar_at_or_below[i];
    const double accuracy = static_cast<double>(s.similar_at_or_below[i] + tn) / total;
    if (accuracy > best.accuracy) best = {s.thresholds[i], accuracy};
  }
  return best;
}

void write_pr_curve_csv(std::ostream& out, const EvalCurve& curve) {
  out << "threshold,precision,recall\n";
  char line[96];
  for (const CurvePoint& p : curve.points) {
    std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g\n", p.threshold, p.precision, p.recall);
    out << line;
  }
}

std::vector<TracePoint> read_trace(const std::filesystem::path& path, std::size_t* skipped) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trace " + path.string());
  std::vector<TracePoint> points;
  std::size_t bad = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (line_no == 1 && line.rfind("local_step", 0) == 0) continue;
    std::string_view text(line);
    const auto c1 = text.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : text.find(',', c1 + 1);
    double step = 0.0;
    TracePoint p;
    if (c2 == std::string_view::npos || text.find(',', c2 + 1) != std::string_view::npos ||
        !parse_field(text.substr(0, c1), step) || !parse_field(text.substr(c1 + 1, c2 - c1 - 1), p.seconds) ||
        !parse_field(text.substr(c2 + 1), p.objective) || step < 0.0) {
      spdlog::warn("{}:{}: skipping malformed trace line", path.string(), line_no);
      ++bad;
      continue;
    }
    p.step = static_cast<std::uint64_t>(step);
    points.push_back(p);
  }
  if (skipped) *skipped = bad;
  return points;
}

ObjectiveSeries merge_traces(std::span<const std::vector<TracePoint>> traces, double bucket_seconds) {
  std::vector<SeriesPoint> all;
  for (const auto& trace : traces) {
    for (const TracePoint& p : trace) all.push_back({p.seconds, p.objective});
  }
  std::stable_sort(all.begin(), all.end(), [](const SeriesPoint& a, const SeriesPoint& b) { return a.seconds < b.seconds; });
  if (bucket_seconds <= 0.0) return all;

  ObjectiveSeries out;
  std::size_t i = 0;
  while (i < all.size()) {
    const double bucket = std::floor(all[i].seconds / bucket_seconds);
    double sum = 0.0;
    std::size_t count = 0;
    while (i < all.size() && std::floor(all[i].seconds / bucket_seconds) == bucket) {
      sum += all[i].objective;
      ++count;
      ++i;
    }
    out.push_back({(bucket + 1.0) * bucket_seconds, sum / static_cast<double>(count)});
  }
  return out;
}

ProbeMonitor::ProbeMonitor(const Dataset& data, PairSet probe, Hyperparams hp, Source source,
                           std::chrono::milliseconds interval)
    : data_(&data), probe_(std::move(probe)), hp_(hp), source_(std::move(source)), interval_(interval) {}

ProbeMonitor::~ProbeMonitor() {
  if (thread_.joinable()) stop();
}

void ProbeMonitor::start() {
  start_ = std::chrono::steady_clock::now();
  running_ = true;
  sample();
  thread_ = std::thread([this] {
    std::unique_lock lock(mutex_);
    while (running_) {
      if (cv_.wait_for(lock, interval_, [&] { return !running_; })) break;
      lock.unlock();
      sample();
      lock.lock();
    }
  });
}

void ProbeMonitor::sample() {
  const MetricFactor L = source_();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  const double value = objective(L, *data_, probe_, hp_);
  std::lock_guard lock(mutex_);
  series_.push_back({seconds, value});
}

ObjectiveSeries ProbeMonitor::stop() {
  {
    std::lock_guard lock(mutex_);
    running_ = false;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
  sample();
  std::lock_guard lock(mutex_);
  return series_;
}

std::optional<double> time_to_target(const ObjectiveSeries& series, double target) {
  for (const SeriesPoint& p : series) {
    if (p.objective <= target) return p.seconds;
  }
  return std::nullopt;
}

SpeedupReport speedup(const std::map<std::size_t, ObjectiveSeries>& runs, double target) {
  const auto single = runs.find(1);
  if (single == runs.end()) throw ConfigError("speedup needs a 1-worker run");
  const auto baseline = time_to_target(single->second, target);
  if (!baseline) throw ConfigError("the 1-worker run never reaches the target objective");
  if (!(*baseline > 0.0)) throw ConfigError("the 1-worker run reaches the target at time 0");
  SpeedupReport report;
  report.target = target;
  report.baseline_time = *baseline;
  for (const auto& [workers, series] : runs) {
    const auto t = time_to_target(series, target);
    report.times[workers] = t;
    if (!t) {
      spdlog::warn("{}-worker run never reaches objective {}", workers, target);
      continue;
    }
    if (*t > 0.0) report.factors[workers] = *baseline / *t;
  }
  return report;
}

void write_speedup_csv(std::ostream& out, const SpeedupReport& report) {
  out << "workers,seconds,factor\n";
  char line[96];
  for (const auto& [workers, seconds] : report.times) {
    if (seconds && report.factors.count(workers)) {
      std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f\n", workers, *seconds, report.factors.at(workers));
    } else {
      std::snprintf(line, sizeof(line), "%zu,,\n", workers);
    }
    out << line;
  }
}

}  // namespace dml
