#include "dml/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdint>
#include <string>

namespace dml::kernels {
namespace {

void check_pairs(std::size_t n, std::span<const IndexPair> pairs) {
  for (const IndexPair& p : pairs) {
    if (p.first >= n || p.second >= n) throw InputError("pair index out of range");
  }
}

template <typename T>
void check_shapes(const Matrix<T>& L, const Dataset& data) {
  if (L.cols() != data.dim()) {
    throw InputError("factor width " + std::to_string(L.cols()) + " does not match dataset dimension " +
                     std::to_string(data.dim()));
  }
}

// Mirrors project_difference in metric_model.cpp term for term.
template <typename T>
double project_into(const Matrix<T>& L, std::span<const float> x, std::span<const float> y, double* diff,
                    double* u) {
  const std::size_t k = L.rows();
  const std::size_t d = L.cols();
  bool dense = true;
  for (std::size_t j = 0; j < d; ++j) {
    diff[j] = static_cast<double>(x[j]) - static_cast<double>(y[j]);
    if (diff[j] == 0.0) dense = false;
  }
  double dist = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    const T* row = L.data() + r * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (!dense && diff[j] == 0.0) continue;
      acc += static_cast<double>(row[j]) * diff[j];
    }
    u[r] = acc;
    dist += acc * acc;
  }
  return dist;
}

double quadratic_form(const Matrix<double>& M, std::span<const float> x, std::span<const float> y,
                      std::vector<double>& diff) {
  const std::size_t d = M.cols();
  for (std::size_t j = 0; j < d; ++j) diff[j] = static_cast<double>(x[j]) - static_cast<double>(y[j]);
  double total = 0.0;
  for (std::size_t r = 0; r < d; ++r) {
    if (diff[r] == 0.0) continue;
    const double* row = M.data() + r * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += row[j] * diff[j];
    total += diff[r] * acc;
  }
  return total;
}

void check_square(const Matrix<double>& M, const Dataset& data) {
  if (M.rows() != M.cols() || M.cols() != data.dim()) throw InputError("metric matrix must be d x d");
}

}  // namespace

int thread_count() { return omp_get_max_threads(); }

namespace serial {

template <typename T>
std::vector<double> pair_distances(const Matrix<T>& L, const Dataset& data, std::span<const IndexPair> pairs) {
  check_shapes(L, data);
  check_pairs(data.size(), pairs);
  std::vector<double> out(pairs.size());
  std::vector<double> diff(L.cols());
  std::vector<double> u(L.rows());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out[i] = project_into(L, data.vector(pairs[i].first), data.vector(pairs[i].second), diff.data(), u.data());
  }
  return out;
}

std::vector<double> quadratic_distances(const Matrix<double>& M, const Dataset& data,
                                        std::span<const IndexPair> pairs) {
  check_square(M, data);
  check_pairs(data.size(), pairs);
  std::vector<double> out(pairs.size());
  std::vector<double> diff(M.cols());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out[i] = quadratic_form(M, data.vector(pairs[i].first), data.vector(pairs[i].second), diff);
  }
  return out;
}

template <typename T>
BatchGradient<T> minibatch_gradient(const Matrix<T>& L, const Dataset& data,
                                    std::span<const IndexPair> batch_similar,
                                    std::span<const IndexPair> batch_dissimilar, const Hyperparams& hp,
                                    GradientWorkspace& workspace) {
  return dml::minibatch_gradient(L, data, batch_similar, batch_dissimilar, hp, workspace);
}

}  // namespace serial

namespace parallel {

template <typename T>
std::vector<double> pair_distances(const Matrix<T>& L, const Dataset& data, std::span<const IndexPair> pairs) {
  check_shapes(L, data);
  check_pairs(data.size(), pairs);
  std::vector<double> out(pairs.size());
  const auto count = static_cast<std::int64_t>(pairs.size());
#pragma omp parallel
  {
    std::vector<double> diff(L.cols());
    std::vector<double> u(L.rows());
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
      const IndexPair& p = pairs[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(i)] =
          project_into(L, data.vector(p.first), data.vector(p.second), diff.data(), u.data());
    }
  }
  return out;
}

std::vector<double> quadratic_distances(const Matrix<double>& M, const Dataset& data,
                                        std::span<const IndexPair> pairs) {
  check_square(M, data);
  check_pairs(data.size(), pairs);
  std::vector<double> out(pairs.size());
  const auto count = static_cast<std::int64_t>(pairs.size());
#pragma omp parallel
  {
    std::vector<double> diff(M.cols());
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
      const IndexPair& p = pairs[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(i)] = quadratic_form(M, data.vector(p.first), data.vector(p.second), diff);
    }
  }
  return out;
}

// Phase one projects every pair independently. Phase two builds each row of
// the gradient on one thread, walking the pairs in batch order, which is the
// same addition sequence the serial kernel performs on that row.
template <typename T>
BatchGradient<T> minibatch_gradient(const Matrix<T>& L, const Dataset& data,
                                    std::span<const IndexPair> batch_similar,
                                    std::span<const IndexPair> batch_dissimilar, const Hyperparams& hp,
                                    ParallelWorkspace& ws) {
  check_shapes(L, data);
  if (batch_similar.empty() && hp.batch_similar > 0) throw ConfigError("empty similar batch");
  if (batch_dissimilar.empty() && hp.batch_dissimilar > 0) throw ConfigError("empty dissimilar batch");
  check_pairs(data.size(), batch_similar);
  check_pairs(data.size(), batch_dissimilar);

  const std::size_t k = L.rows();
  const std::size_t d = L.cols();
  const std::size_t n_similar = batch_similar.size();
  const std::size_t total = n_similar + batch_dissimilar.size();
  auto pair_at = [&](std::size_t i) -> const IndexPair& {
    return i < n_similar ? batch_similar[i] : batch_dissimilar[i - n_similar];
  };

  ws.projections.resize(total * k);
  ws.distances.resize(total);
  ws.coefficients.resize(total);
  const auto count = static_cast<std::int64_t>(total);
#pragma omp parallel
  {
    std::vector<double> diff(d);
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      const IndexPair& p = pair_at(idx);
      ws.distances[idx] =
          project_into(L, data.vector(p.first), data.vector(p.second), diff.data(), ws.projections.data() + idx * k);
    }
  }

  const double similar_weight = n_similar > 0 ? 1.0 / static_cast<double>(n_similar) : 0.0;
  const double dissimilar_weight = total > n_similar ? 1.0 / static_cast<double>(total - n_similar) : 0.0;
  double similar_loss = 0.0;
  double dissimilar_loss = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    const double dist = ws.distances[i];
    if (i < n_similar) {
      similar_loss += dist;
      ws.coefficients[i] = similar_weight * 2.0;
    } else {
      dissimilar_loss += hp.lambda * std::max(0.0, hp.margin - dist);
      ws.coefficients[i] = dissimilar_weight * (dist < hp.margin ? -2.0 * hp.lambda : 0.0);
    }
  }
  double batch_objective = 0.0;
  if (n_similar > 0) batch_objective += similar_loss * similar_weight;
  if (total > n_similar) batch_objective += dissimilar_loss * dissimilar_weight;

  if (ws.accumulator.rows() != k || ws.accumulator.cols() != d) {
    ws.accumulator = Matrix<double>(k, d);
  } else {
    ws.accumulator.fill(0.0);
  }
  const auto rows = static_cast<std::int64_t>(k);
#pragma omp parallel
  {
    std::vector<double> diff(d);
#pragma omp for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
      const auto row_index = static_cast<std::size_t>(r);
      double* row = ws.accumulator.data() + row_index * d;
      for (std::size_t i = 0; i < total; ++i) {
        const double scale = ws.coefficients[i] * ws.projections[i * k + row_index];
        if (scale == 0.0) continue;
        const IndexPair& p = pair_at(i);
        const auto x = data.vector(p.first);
        const auto y = data.vector(p.second);
        bool dense = true;
        for (std::size_t j = 0; j < d; ++j) {
          diff[j] = static_cast<double>(x[j]) - static_cast<double>(y[j]);
          if (diff[j] == 0.0) dense = false;
        }
        for (std::size_t j = 0; j < d; ++j) {
          if (!dense && diff[j] == 0.0) continue;
          row[j] += scale * diff[j];
        }
      }
    }
  }
  return {ws.accumulator.template cast<T>(), batch_objective};
}

}  // namespace parallel

#define DML_INSTANTIATE(T)                                                                          \
  template std::vector<double> serial::pair_distances<T>(const Matrix<T>&, const Dataset&,          \
                                                         std::span<const IndexPair>);               \
  template std::vector<double> parallel::pair_distances<T>(const Matrix<T>&, const Dataset&,        \
                                                           std::span<const IndexPair>);             \
  template BatchGradient<T> serial::minibatch_gradient<T>(const Matrix<T>&, const Dataset&,         \
                                                          std::span<const IndexPair>,               \
                                                          std::span<const IndexPair>,               \
                                                          const Hyperparams&, GradientWorkspace&);  \
  template BatchGradient<T> parallel::minibatch_gradient<T>(const Matrix<T>&, const Dataset&,       \
                                                            std::span<const IndexPair>,             \
                                                            std::span<const IndexPair>,             \
                                                            const Hyperparams&, ParallelWorkspace&);

DML_INSTANTIATE(float)
DML_INSTANTIATE(double)

#undef DML_INSTANTIATE

}  // namespace dml::kernels
