#include "dml/baseline.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dml/error.hpp"

namespace dml {
namespace {

using EigenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

EigenMatrix to_eigen(const Matrix<double>& M) {
  return Eigen::Map<const EigenMatrix>(M.data(), static_cast<Eigen::Index>(M.rows()),
                                       static_cast<Eigen::Index>(M.cols()));
}

Matrix<double> from_eigen(const EigenMatrix& E) {
  Matrix<double> out(static_cast<std::size_t>(E.rows()), static_cast<std::size_t>(E.cols()));
  Eigen::Map<EigenMatrix>(out.data(), E.rows(), E.cols()) = E;
  return out;
}

void check_square_finite(const Matrix<double>& M) {
  if (M.rows() != M.cols()) throw InputError("matrix must be square");
  if (!M.all_finite()) throw InputError("matrix has non-finite entries");
}

double quadratic(const EigenMatrix& M, const Eigen::VectorXd& v) { return v.dot(M * v); }

struct Problem {
  EigenMatrix similar_scatter;  // mean_S delta delta^T
  std::vector<Eigen::VectorXd> dissimilar;
  double margin;
};

double penalized(const Problem& problem, const EigenMatrix& M, double mu) {
  double hinge = 0.0;
  for (const auto& v : problem.dissimilar) hinge += std::max(0.0, problem.margin - quadratic(M, v));
  const double mean_hinge = problem.dissimilar.empty() ? 0.0 : hinge / static_cast<double>(problem.dissimilar.size());
  return (problem.similar_scatter.cwiseProduct(M)).sum() + mu * mean_hinge;
}

double max_violation(const Problem& problem, const EigenMatrix& M) {
  double worst = 0.0;
  for (const auto& v : problem.dissimilar) worst = std::max(worst, problem.margin - quadratic(M, v));
  return worst;
}

EigenMatrix project(const EigenMatrix& M) {
  const EigenMatrix symmetric = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<EigenMatrix> solver(symmetric);
  const Eigen::VectorXd clamped = solver.eigenvalues().cwiseMax(0.0);
  EigenMatrix out = solver.eigenvectors() * clamped.asDiagonal() * solver.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

Eigen::VectorXd difference(const Dataset& data, const IndexPair& p) {
  const auto x = data.vector(p.first);
  const auto y = data.vector(p.second);
  Eigen::VectorXd v(static_cast<Eigen::Index>(data.dim()));
  for (std::size_t j = 0; j < data.dim(); ++j) {
    v[static_cast<Eigen::Index>(j)] = static_cast<double>(x[j]) - static_cast<double>(y[j]);
  }
  return v;
}

}  // namespace

MahalanobisMatrix psd_project(const Matrix<double>& M) {
  check_square_finite(M);
  return from_eigen(project(to_eigen(M)));
}

double min_eigenvalue(const Matrix<double>& M) {
  check_square_finite(M);
  if (M.rows() == 0) return 0.0;
  const EigenMatrix E = to_eigen(M);
  Eigen::SelfAdjointEigenSolver<EigenMatrix> solver(0.5 * (E + E.transpose()), Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

PgdResult pgd_solve(const Dataset& data, const PairSet& pairs, const PgdOptions& options) {
  const std::size_t d = data.dim();
  if (d > options.max_dim) {
    throw ConfigError("reference solver is limited to d <= " + std::to_string(options.max_dim) + ", got d=" +
                      std::to_string(d));
  }
  if (pairs.size() == 0) throw ConfigError("reference solver needs at least one pair");
  if (!(options.step > 0.0)) throw ConfigError("step must be > 0");
  validate_pairs(pairs, data.size());

  const auto dim = static_cast<Eigen::Index>(d);
  Problem problem{EigenMatrix::Zero(dim, dim), {}, options.margin};
  for (const IndexPair& p : pairs.similar) {
    const Eigen::VectorXd v = difference(data, p);
    problem.similar_scatter.noalias() += v * v.transpose();
  }
  if (!pairs.similar.empty()) problem.similar_scatter /= static_cast<double>(pairs.similar.size());
  problem.dissimilar.reserve(pairs.dissimilar.size());
  for (const IndexPair& p : pairs.dissimilar) problem.dissimilar.push_back(difference(data, p));

  EigenMatrix M = EigenMatrix::Identity(dim, dim);
  double mu = options.initial_penalty;
  double step = options.step;
  double current = penalized(problem, M, mu);
  const double inv_dissimilar =
      problem.dissimilar.empty() ? 0.0 : 1.0 / static_cast<double>(problem.dissimilar.size());

  std::size_t it = 0;
  for (; it < options.iterations; ++it) {
    EigenMatrix gradient = problem.similar_scatter;
    for (const auto& v : problem.dissimilar) {
      if (quadratic(M, v) < problem.margin) gradient.noalias() -= (mu * inv_dissimilar) * (v * v.transpose());
    }
    const EigenMatrix candidate = project(M - step * gradient);
    const double value = penalized(problem, candidate, mu);
    if (value <= current) {
      M = candidate;
      current = value;
    } else {
      step *= 0.5;
    }
    if ((it + 1) % options.penalty_interval == 0 && max_violation(problem, M) > options.tolerance) {
      mu *= options.penalty_growth;
      step = options.step;
      current = penalized(problem, M, mu);
    }
  }

  PgdResult result;
  result.metric = from_eigen(M);
  result.penalty = mu;
  result.final_step = step;
  result.max_violation = std::max(0.0, max_violation(problem, M));
  result.iterations = it;
  return result;
}

}  // namespace dml
