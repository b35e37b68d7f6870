#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "dml/dataset.hpp"
#include "dml/matrix.hpp"

namespace dml {

/// The learned factor L (k x d). M = L^T L is the Mahalanobis matrix.
using MetricFactor = Matrix<float>;

/// Additive k x d update to L, tagged with its origin.
struct GradientDelta {
  MetricFactor values;
  std::uint32_t worker_id = 0;
  std::uint64_t step = 0;
};

struct Hyperparams {
  double lambda = 1.0;
  double margin = 1.0;
  double learning_rate = 1e-3;
  std::size_t batch_similar = 500;
  std::size_t batch_dissimilar = 500;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

enum class PairKind : std::uint8_t { similar, dissimilar };

/// ||L (x - y)||^2 in O(k d). Entries of L may be float or double; the sum is
/// always accumulated in double.
template <typename T>
double pair_distance_sq(const Matrix<T>& L, std::span<const float> x, std::span<const float> y);

/// sum_S ||L(x-y)||^2 + lambda * sum_D max(0, margin - ||L(x-y)||^2)
template <typename T>
double objective(const Matrix<T>& L, const Dataset& data, const PairSet& pairs, const Hyperparams& hp);

/// Gradient of one pair's term of the objective with respect to L. The result
/// is the rank-one matrix c * u * delta^T with u = L delta, and c = 2 for a
/// similar pair, -2 lambda for a dissimilar pair inside the margin, 0 otherwise.
/// Exactly at the margin the hinge is treated as inactive.
template <typename T>
Matrix<T> pair_gradient(const Matrix<T>& L, std::span<const float> x, std::span<const float> y,
                        PairKind kind, const Hyperparams& hp);

template <typename T>
struct BatchGradient {
  Matrix<T> gradient;
  /// mean_S ||L(x-y)||^2 + lambda * mean_D hinge, the quantity whose gradient is returned.
  double batch_objective = 0.0;
};

/// Scratch buffers for minibatch_gradient so repeated steps do not reallocate.
struct GradientWorkspace {
  Matrix<double> accumulator;
  std::vector<double> difference;
  std::vector<double> projected;
  std::vector<std::size_t> support;
};

/// Mean gradient over the similar batch plus mean gradient over the
/// dissimilar batch. A side may be empty only if hp configures it as 0.
template <typename T>
BatchGradient<T> minibatch_gradient(const Matrix<T>& L, const Dataset& data,
                                    std::span<const IndexPair> batch_similar,
                                    std::span<const IndexPair> batch_dissimilar,
                                    const Hyperparams& hp, GradientWorkspace& workspace);

template <typename T>
BatchGradient<T> minibatch_gradient(const Matrix<T>& L, const Dataset& data,
                                    std::span<const IndexPair> batch_similar,
                                    std::span<const IndexPair> batch_dissimilar,
                                    const Hyperparams& hp) {
  GradientWorkspace workspace;
  return minibatch_gradient(L, data, batch_similar, batch_dissimilar, hp, workspace);
}

/// L += scale * delta
template <typename T>
void apply_delta_in_place(Matrix<T>& L, const Matrix<T>& delta, T scale);

template <typename T>
Matrix<T> apply_delta(Matrix<T> L, const Matrix<T>& delta, T scale) {
  apply_delta_in_place(L, delta, scale);
  return L;
}

/// k x d factor with i.i.d. N(0, 1/d) entries. Same seed, same bits.
MetricFactor init_factor(std::size_t k, std::size_t d, std::uint64_t seed);

}  // namespace dml
