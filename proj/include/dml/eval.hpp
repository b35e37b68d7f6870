#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <thread>
#include <vector>

#include "dml/baseline.hpp"
#include "dml/dataset.hpp"
#include "dml/metric_model.hpp"

namespace dml {

/// Pair classification counts with "similar" as the positive class.
struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  double accuracy() const;
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Squared distances of the similar and dissimilar test pairs.
struct PairDistances {
  std::vector<double> similar;
  std::vector<double> dissimilar;
};

PairDistances pair_distances(const MetricFactor& L, const Dataset& data, const PairSet& pairs);
PairDistances pair_distances(const MahalanobisMatrix& M, const Dataset& data, const PairSet& pairs);

/// A pair is predicted similar iff its distance is <= t.
Confusion classify(const PairDistances& distances, double t);
Confusion classify_pairs(const MetricFactor& L, const Dataset& data, const PairSet& test_pairs, double t);

struct CurvePoint {
  double threshold = 0.0;
  double precision = 1.0;
  double recall = 0.0;
};

struct EvalCurve {
  /// One point per threshold in {0, each distinct distance, +inf}, ascending
  /// threshold and hence nondecreasing recall.
  std::vector<CurvePoint> points;
  /// sum_i (R_i - R_{i-1}) * P_i over the points, with R_0 = 0.
  double average_precision = 0.0;
};

/// Precision is taken as 1 where nothing is predicted similar. Throws
/// ConfigError if either side is empty.
EvalCurve pr_curve(const PairDistances& distances);
EvalCurve pr_curve(const MetricFactor& L, const Dataset& data, const PairSet& test_pairs);

struct ThresholdChoice {
  double threshold = 0.0;
  double accuracy = 0.0;
};

/// Threshold among the curve thresholds with the highest accuracy; ties go
/// to the smallest threshold.
ThresholdChoice best_threshold(const PairDistances& distances);

/// `threshold,precision,recall`
void write_pr_curve_csv(std::ostream& out, const EvalCurve& curve);

struct TracePoint {
  std::uint64_t step = 0;
  double seconds = 0.0;
  double objective = 0.0;
};

/// Reads a `local_step,wall_seconds,batch_objective` log. A header row is
/// optional; malformed lines are skipped with a warning and counted.
std::vector<TracePoint> read_trace(const std::filesystem::path& path, std::size_t* skipped = nullptr);

struct SeriesPoint {
  double seconds = 0.0;
  double objective = 0.0;
  friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};
using ObjectiveSeries = std::vector<SeriesPoint>;

/// Merges worker traces into one global series ordered by time. With
/// bucket_seconds > 0, points are grouped into [b*w, (b+1)*w) buckets and
/// each nonempty bucket yields (bucket end, mean objective).
ObjectiveSeries merge_traces(std::span<const std::vector<TracePoint>> traces, double bucket_seconds = 0.0);

/// Samples the exact objective on a fixed probe pair set every `interval`
/// from a parameter source (for example a server snapshot), on its own thread.
class ProbeMonitor {
 public:
  using Source = std::function<MetricFactor()>;

  ProbeMonitor(const Dataset& data, PairSet probe, Hyperparams hp, Source source, std::chrono::milliseconds interval);
  ~ProbeMonitor();

  void start();
  /// Takes one last sample, stops the thread, and returns the series.
  ObjectiveSeries stop();

 private:
  void sample();

  const Dataset* data_;
  PairSet probe_;
  Hyperparams hp_;
  Source source_;
  std::chrono::milliseconds interval_;
  std::chrono::steady_clock::time_point start_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool running_ = false;
  ObjectiveSeries series_;
  std::thread thread_;
};

/// First time the series reaches objective <= target.
std::optional<double> time_to_target(const ObjectiveSeries& series, double target);

struct SpeedupReport {
  double target = 0.0;
  double baseline_time = 0.0;
  /// Worker count -> seconds to reach target; empty when never reached.
  std::map<std::size_t, std::optional<double>> times;
  /// Worker count -> baseline_time / time, for runs that reached the target.
  std::map<std::size_t, double> factors;
};

/// Speedup factors t_1 / t_n relative to the 1-worker run, which must be
/// present and reach the target. Throws ConfigError otherwise.
SpeedupReport speedup(const std::map<std::size_t, ObjectiveSeries>& runs, double target);

/// `workers,seconds,factor`; unreachable runs print empty seconds and factor.
void write_speedup_csv(std::ostream& out, const SpeedupReport& report);

}  // namespace dml
