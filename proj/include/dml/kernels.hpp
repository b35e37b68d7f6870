#pragma once

#include <span>
#include <vector>

#include "dml/dataset.hpp"
#include "dml/metric_model.hpp"

// Batch kernels in two flavors. serial:: is the reference; parallel:: splits
// the same arithmetic across OpenMP threads without changing the order of any
// floating-point reduction, so both return bitwise-identical results for
// every thread count.
namespace dml::kernels {

namespace serial {

/// ||L (x_i - y_i)||^2 for each pair.
template <typename T>
std::vector<double> pair_distances(const Matrix<T>& L, const Dataset& data, std::span<const IndexPair> pairs);

/// (x_i - y_i)^T M (x_i - y_i) for a square symmetric M.
std::vector<double> quadratic_distances(const Matrix<double>& M, const Dataset& data,
                                        std::span<const IndexPair> pairs);

template <typename T>
BatchGradient<T> minibatch_gradient(const Matrix<T>& L, const Dataset& data,
                                    std::span<const IndexPair> batch_similar,
                                    std::span<const IndexPair> batch_dissimilar, const Hyperparams& hp,
                                    GradientWorkspace& workspace);

}  // namespace serial

namespace parallel {

template <typename T>
std::vector<double> pair_distances(const Matrix<T>& L, const Dataset& data, std::span<const IndexPair> pairs);

std::vector<double> quadratic_distances(const Matrix<double>& M, const Dataset& data,
                                        std::span<const IndexPair> pairs);

/// Scratch for the parallel gradient: per-pair projections and coefficients.
struct ParallelWorkspace {
  std::vector<double> projections;  // batch x k
  std::vector<double> distances;
  std::vector<double> coefficients;
  Matrix<double> accumulator;
};

template <typename T>
BatchGradient<T> minibatch_gradient(const Matrix<T>& L, const Dataset& data,
                                    std::span<const IndexPair> batch_similar,
                                    std::span<const IndexPair> batch_dissimilar, const Hyperparams& hp,
                                    ParallelWorkspace& workspace);

}  // namespace parallel

/// Number of OpenMP threads the parallel kernels will use.
int thread_count();

}  // namespace dml::kernels
