#include "dml/sgd.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "dml/error.hpp"
#include "dml/trace.hpp"

namespace dml {

double LearningRateSchedule::at(std::uint64_t step) const {
  if (!decay) return eta;
  return eta / std::sqrt(1.0 + static_cast<double>(step) / horizon);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value.
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

SgdStepper::SgdStepper(const Dataset& data, PairSet shard, Hyperparams hp, LearningRateSchedule schedule,
                       std::uint64_t seed)
    : data_(&data), shard_(std::move(shard)), hp_(hp), schedule_(schedule), rng_(seed) {
  if (hp_.batch_similar > 0 && shard_.similar.empty()) throw ConfigError("shard has no similar pairs to sample");
  if (hp_.batch_dissimilar > 0 && shard_.dissimilar.empty()) throw ConfigError("shard has no dissimilar pairs to sample");
  validate_pairs(shard_, data.size());
  batch_similar_.resize(hp_.batch_similar);
  batch_dissimilar_.resize(hp_.batch_dissimilar);
}

MetricFactor SgdStepper::step(MetricFactor& L) {
  for (IndexPair& p : batch_similar_) p = shard_.similar[uniform_index(rng_, shard_.similar.size())];
  for (IndexPair& p : batch_dissimilar_) p = shard_.dissimilar[uniform_index(rng_, shard_.dissimilar.size())];
  const auto result =
      kernels::parallel::minibatch_gradient(L, *data_, batch_similar_, batch_dissimilar_, hp_, workspace_);
  last_objective_ = result.batch_objective;

  // The workspace still holds the unrounded double gradient.
  const double eta = schedule_.at(steps_);
  MetricFactor delta(L.rows(), L.cols());
  const double* gradient = workspace_.accumulator.data();
  float* out = delta.data();
  for (std::size_t i = 0; i < delta.size(); ++i) out[i] = static_cast<float>(-eta * gradient[i]);
  apply_delta_in_place(L, delta, 1.0f);
  ++steps_;
  return delta;
}

MetricFactor train_sequential(const Dataset& data, const PairSet& pairs, MetricFactor initial, const Hyperparams& hp,
                              const SequentialOptions& options) {
  SgdStepper stepper(data, pairs, hp, options.schedule, derive_seed(options.seed, 0));
  TraceWriter trace(options.trace_path);
  const auto start = std::chrono::steady_clock::now();
  MetricFactor L = std::move(initial);
  while (stepper.steps_taken() < options.steps) {
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (options.time_budget_sec > 0.0 && elapsed >= options.time_budget_sec) break;
    stepper.step(L);
    trace.record(stepper.steps_taken(), std::chrono::steady_clock::now() - start, stepper.last_batch_objective());
    if (options.on_step) options.on_step(stepper.steps_taken(), L);
  }
  return L;
}

}  // namespace dml
