#pragma once

#include <cstddef>

#include "dml/dataset.hpp"
#include "dml/matrix.hpp"

namespace dml {

/// Square symmetric positive semidefinite matrix M of the quadratic-form distance.
using MahalanobisMatrix = Matrix<double>;

/// Nearest PSD matrix in Frobenius norm: symmetrize, eigendecompose, clamp
/// negative eigenvalues to zero, reconstruct. Throws InputError on non-square
/// or non-finite input.
MahalanobisMatrix psd_project(const Matrix<double>& M);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Matrix<double>& M);

struct PgdOptions {
  double step = 0.1;
  std::size_t iterations = 2000;
  double margin = 1.0;
  double initial_penalty = 1.0;
  double penalty_growth = 2.0;
  std::size_t penalty_interval = 100;
  /// Largest allowed shortfall margin - (x-y)^T M (x-y) on a dissimilar pair.
  double tolerance = 1e-3;
  std::size_t max_dim = 64;
};

struct PgdResult {
  MahalanobisMatrix metric;
  double penalty = 0.0;
  double final_step = 0.0;
  /// Largest remaining dissimilar-margin shortfall (0 when all hold).
  double max_violation = 0.0;
  std::size_t iterations = 0;
};

/// Desk-scale solver for the constrained problem
///   min_M  mean_S (x-y)^T M (x-y)
///   s.t.   (x-y)^T M (x-y) >= margin for (x,y) in D,  M PSD
/// by projected gradient descent on the exact penalty
///   mean_S (x-y)^T M (x-y) + mu * mean_D max(0, margin - (x-y)^T M (x-y)).
/// Starts from M = I. A step that raises the penalized objective is rejected
/// and the step size halved; mu doubles (and the step resets) every
/// penalty_interval iterations while some constraint is violated by more than
/// tolerance. Each iteration
/// costs an O(d^3) eigendecomposition, so d above max_dim is refused with
/// ConfigError.
PgdResult pgd_solve(const Dataset& data, const PairSet& pairs, const PgdOptions& options = {});

}  // namespace dml
