#include "dml/metric_model.hpp"

#include <cmath>
#include <string>

#include "dml/random.hpp"

namespace dml {
namespace {

void check_vectors(std::size_t d, std::span<const float> x, std::span<const float> y) {
  if (x.size() != d || y.size() != d) {
    throw InputError("vector lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()) +
                     " do not match factor width " + std::to_string(d));
  }
}

// Fills ws.difference with x - y, ws.support with the indices where it is
// nonzero (left empty when every entry is nonzero), and ws.projected with
// u = L (x - y). Returns ||u||^2.
template <typename T>
double project_difference(const Matrix<T>& L, std::span<const float> x, std::span<const float> y,
                          GradientWorkspace& ws) {
  const std::size_t k = L.rows();
  const std::size_t d = L.cols();
  ws.difference.resize(d);
  ws.support.clear();
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = static_cast<double>(x[j]) - static_cast<double>(y[j]);
    ws.difference[j] = diff;
    if (diff != 0.0) ws.support.push_back(j);
  }
  const bool dense = ws.support.size() == d;

  ws.projected.assign(k, 0.0);
  double dist = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    const T* row = L.data() + r * d;
    double acc = 0.0;
    if (dense) {
      for (std::size_t j = 0; j < d; ++j) acc += static_cast<double>(row[j]) * ws.difference[j];
    } else {
      for (const std::size_t j : ws.support) acc += static_cast<double>(row[j]) * ws.difference[j];
    }
    ws.projected[r] = acc;
    dist += acc * acc;
  }
  return dist;
}

// acc += coeff * u * delta^T restricted to the support of delta.
void accumulate_rank_one(Matrix<double>& acc, double coeff, const GradientWorkspace& ws) {
  const std::size_t k = acc.rows();
  const std::size_t d = acc.cols();
  const bool dense = ws.support.size() == d;
  for (std::size_t r = 0; r < k; ++r) {
    const double scale = coeff * ws.projected[r];
    if (scale == 0.0) continue;
    double* row = acc.data() + r * d;
    if (dense) {
      for (std::size_t j = 0; j < d; ++j) row[j] += scale * ws.difference[j];
    } else {
      for (const std::size_t j : ws.support) row[j] += scale * ws.difference[j];
    }
  }
}

double gradient_coefficient(PairKind kind, double dist, const Hyperparams& hp) {
  if (kind == PairKind::similar) return 2.0;
  return dist < hp.margin ? -2.0 * hp.lambda : 0.0;
}

double pair_loss(PairKind kind, double dist, const Hyperparams& hp) {
  if (kind == PairKind::similar) return dist;
  return hp.lambda * std::max(0.0, hp.margin - dist);
}

}  // namespace

void Hyperparams::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
  if (!(margin > 0.0) || !std::isfinite(margin)) throw ConfigError("margin must be > 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be > 0");
  if (batch_similar < 1 || batch_dissimilar < 1) throw ConfigError("batch sizes must be >= 1");
}

template <typename T>
double pair_distance_sq(const Matrix<T>& L, std::span<const float> x, std::span<const float> y) {
  check_vectors(L.cols(), x, y);
  GradientWorkspace ws;
  return project_difference(L, x, y, ws);
}

template <typename T>
double objective(const Matrix<T>& L, const Dataset& data, const PairSet& pairs, const Hyperparams& hp) {
  if (data.dim() != L.cols()) throw InputError("dataset dimension does not match factor width");
  validate_pairs(pairs, data.size());
  GradientWorkspace ws;
  double similar_sum = 0.0;
  for (const IndexPair& p : pairs.similar) {
    similar_sum += project_difference(L, data.vector(p.first), data.vector(p.second), ws);
  }
  double hinge_sum = 0.0;
  for (const IndexPair& p : pairs.dissimilar) {
    const double dist = project_difference(L, data.vector(p.first), data.vector(p.second), ws);
    hinge_sum += std::max(0.0, hp.margin - dist);
  }
  return similar_sum + hp.lambda * hinge_sum;
}

template <typename T>
Matrix<T> pair_gradient(const Matrix<T>& L, std::span<const float> x, std::span<const float> y,
                        PairKind kind, const Hyperparams& hp) {
  check_vectors(L.cols(), x, y);
  GradientWorkspace ws;
  const double dist = project_difference(L, x, y, ws);
  Matrix<double> acc(L.rows(), L.cols());
  accumulate_rank_one(acc, gradient_coefficient(kind, dist, hp), ws);
  return acc.template cast<T>();
}

template <typename T>
BatchGradient<T> minibatch_gradient(const Matrix<T>& L, const Dataset& data,
                                    std::span<const IndexPair> batch_similar,
                                    std::span<const IndexPair> batch_dissimilar,
                                    const Hyperparams& hp, GradientWorkspace& ws) {
  if (data.dim() != L.cols()) throw InputError("dataset dimension does not match factor width");
  if (batch_similar.empty() && hp.batch_similar > 0) throw ConfigError("empty similar batch");
  if (batch_dissimilar.empty() && hp.batch_dissimilar > 0) throw ConfigError("empty dissimilar batch");

  if (ws.accumulator.rows() != L.rows() || ws.accumulator.cols() != L.cols()) {
    ws.accumulator = Matrix<double>(L.rows(), L.cols());
  } else {
    ws.accumulator.fill(0.0);
  }

  double batch_objective = 0.0;
  auto run = [&](std::span<const IndexPair> batch, PairKind kind) {
    if (batch.empty()) return;
    const double weight = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const IndexPair& p : batch) {
      if (p.first >= data.size() || p.second >= data.size()) throw InputError("batch pair index out of range");
      const double dist = project_difference(L, data.vector(p.first), data.vector(p.second), ws);
      loss += pair_loss(kind, dist, hp);
      accumulate_rank_one(ws.accumulator, weight * gradient_coefficient(kind, dist, hp), ws);
    }
    batch_objective += loss * weight;
  };
  run(batch_similar, PairKind::similar);
  run(batch_dissimilar, PairKind::dissimilar);

  return {ws.accumulator.template cast<T>(), batch_objective};
}

template <typename T>
void apply_delta_in_place(Matrix<T>& L, const Matrix<T>& delta, T scale) {
  if (!L.same_shape(delta)) {
    throw InputError("delta shape " + std::to_string(delta.rows()) + "x" + std::to_string(delta.cols()) +
                     " does not match factor shape " + std::to_string(L.rows()) + "x" +
                     std::to_string(L.cols()));
  }
  T* out = L.data();
  const T* in = delta.data();
  for (std::size_t i = 0; i < L.size(); ++i) out[i] += scale * in[i];
}

MetricFactor init_factor(std::size_t k, std::size_t d, std::uint64_t seed) {
  if (k < 1 || d < 1) throw ConfigError("factor shape must be at least 1x1");
  if (k > d) {
    throw ConfigError("rank bound k=" + std::to_string(k) + " exceeds dimension d=" + std::to_string(d));
  }
  Rng rng(seed);
  NormalSampler normal;
  const double sigma = 1.0 / std::sqrt(static_cast<double>(d));
  MetricFactor L(k, d);
  for (float& v : L.values()) v = static_cast<float>(sigma * normal(rng));
  return L;
}

#define DML_INSTANTIATE(T)                                                                         \
  template double pair_distance_sq<T>(const Matrix<T>&, std::span<const float>, std::span<const float>); \
  template double objective<T>(const Matrix<T>&, const Dataset&, const PairSet&, const Hyperparams&);  \
  template Matrix<T> pair_gradient<T>(const Matrix<T>&, std::span<const float>, std::span<const float>, \
                                      PairKind, const Hyperparams&);                               \
  template BatchGradient<T> minibatch_gradient<T>(const Matrix<T>&, const Dataset&,                \
                                                  std::span<const IndexPair>,                      \
                                                  std::span<const IndexPair>, const Hyperparams&,  \
                                                  GradientWorkspace&);                             \
  template void apply_delta_in_place<T>(Matrix<T>&, const Matrix<T>&, T);

DML_INSTANTIATE(float)
DML_INSTANTIATE(double)

#undef DML_INSTANTIATE

}  // namespace dml
