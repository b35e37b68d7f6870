#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "dml/dataset.hpp"
#include "dml/kernels.hpp"
#include "dml/metric_model.hpp"
#include "dml/random.hpp"

namespace dml {

/// Constant eta, or eta * (1 + t / horizon)^(-1/2) when decay is on.
struct LearningRateSchedule {
  double eta = 1e-3;
  bool decay = false;
  double horizon = 1000.0;

  double at(std::uint64_t step) const;
};

/// Independent stream seed for worker `stream` of a run seeded with `base`.
/// Stream 0 is what the single-process trainer uses.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// One mini-batch SGD step against a pair shard: sample batch_similar pairs
/// from S and batch_dissimilar from D with replacement, compute the mean
/// gradient G, form delta = -eta_t * G in float, and add it to L. Returns the
/// delta exactly as applied, so L_after == L_before + delta bitwise.
class SgdStepper {
 public:
  /// Throws ConfigError if a side of the shard is empty while its batch size is nonzero.
  SgdStepper(const Dataset& data, PairSet shard, Hyperparams hp, LearningRateSchedule schedule, std::uint64_t seed);

  MetricFactor step(MetricFactor& L);

  std::uint64_t steps_taken() const noexcept { return steps_; }
  double last_batch_objective() const noexcept { return last_objective_; }
  const PairSet& shard() const noexcept { return shard_; }

 private:
  const Dataset* data_;
  PairSet shard_;
  Hyperparams hp_;
  LearningRateSchedule schedule_;
  Rng rng_;
  std::uint64_t steps_ = 0;
  double last_objective_ = 0.0;
  std::vector<IndexPair> batch_similar_;
  std::vector<IndexPair> batch_dissimilar_;
  kernels::parallel::ParallelWorkspace workspace_;
};

struct SequentialOptions {
  std::uint64_t steps = 1000;
  double time_budget_sec = 0.0;
  std::uint64_t seed = 1;
  LearningRateSchedule schedule;
  /// Optional per-step trace `local_step,wall_seconds,batch_objective`.
  std::filesystem::path trace_path;
  /// Called after each step with the step count and current L.
  std::function<void(std::uint64_t, const MetricFactor&)> on_step;
};

/// Single-process reference optimizer. Produces bitwise the same L as one
/// distributed worker with broadcasts disabled and the same seeds.
MetricFactor train_sequential(const Dataset& data, const PairSet& pairs, MetricFactor initial, const Hyperparams& hp,
                              const SequentialOptions& options);

}  // namespace dml
