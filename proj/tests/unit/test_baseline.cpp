#include <doctest.h>

#include "dml/baseline.hpp"
#include "dml/data.hpp"
#include "dml/eval.hpp"
#include "dml/sgd.hpp"
#include "oracles.hpp"

using namespace dml;

namespace {

Matrix<double> symmetric(std::size_t n, std::mt19937_64& rng) {
  auto a = oracle::random_matrix<double>(n, n, rng);
  Matrix<double> s(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
  }
  return s;
}

double max_diff(const Matrix<double>& a, const Matrix<double>& b) {
  return oracle::max_abs_diff(oracle::to_dense(a), oracle::to_dense(b));
}

void check_symmetric_psd(const Matrix<double>& M) {
  for (std::size_t i = 0; i < M.rows(); ++i) {
    for (std::size_t j = 0; j < M.cols(); ++j) CHECK(std::abs(M(i, j) - M(j, i)) <= 1e-10);
  }
  CHECK(oracle::min_eigenvalue(oracle::to_dense(M)) >= -1e-9);
}

}  // namespace

TEST_CASE("psd_project clamps a diagonal matrix") {
  Matrix<double> m(2, 2);
  m(0, 0) = 1.0;
  m(1, 1) = -2.0;
  const auto p = psd_project(m);
  CHECK(p(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(p(1, 1)) <= 1e-12);
  CHECK(std::abs(p(0, 1)) <= 1e-12);
}

TEST_CASE("psd_project leaves PSD matrices alone and is idempotent") {
  std::mt19937_64 rng(40);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 9;
    const auto L = oracle::random_matrix<double>(n, n, rng);
    Matrix<double> psd(n, n);
    const auto G = oracle::gram(L);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) psd(i, j) = G[i][j];
    }
    CHECK(max_diff(psd_project(psd), psd) <= 1e-10 * (1.0 + frobenius_norm(psd)));

    const auto once = psd_project(symmetric(n, rng));
    CHECK(max_diff(psd_project(once), once) <= 1e-10);
    check_symmetric_psd(once);
  }
}

TEST_CASE("psd_project matches an independent eigen-clamp on random 8x8 matrices") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = symmetric(8, rng);
    const auto expected = oracle::eigen_clamp(oracle::to_dense(s));
    CHECK(oracle::max_abs_diff(oracle::to_dense(psd_project(s)), expected) <= 1e-9);
  }
}

TEST_CASE("psd_project rejects non-finite input") {
  Matrix<double> m(2, 2);
  m(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(psd_project(m), InputError);
  CHECK_THROWS_AS(psd_project(Matrix<double>(2, 3)), InputError);
}

TEST_CASE("pgd_solve with only dissimilar pairs satisfies every margin") {
  Matrix<float> x(4, 2);
  x(0, 0) = 0.0f;
  x(1, 0) = 0.3f;
  x(2, 1) = 0.5f;
  x(3, 0) = 0.4f;
  x(3, 1) = 0.4f;
  const Dataset data(x, std::vector<Label>{0, 1, 2, 3});
  PairSet pairs;
  pairs.dissimilar = {{0, 1}, {0, 2}, {1, 3}, {2, 3}, {0, 3}};
  const auto result = pgd_solve(data, pairs);
  check_symmetric_psd(result.metric);
  for (const auto& p : pairs.dissimilar) {
    const double dist = oracle::quadratic_form(oracle::to_dense(result.metric), data.vector(p.first), data.vector(p.second));
    CHECK(dist >= 1.0 - 1e-3);
  }
}

TEST_CASE("pgd_solve over identical points keeps the initialization") {
  Matrix<float> x(4, 3, 0.5f);
  const Dataset data(x, std::vector<Label>{0, 0, 1, 1});
  PairSet pairs;
  pairs.similar = {{0, 1}, {2, 3}};
  pairs.dissimilar = {{0, 2}, {1, 3}};
  PgdOptions options;
  options.iterations = 50;
  const auto result = pgd_solve(data, pairs, options);
  CHECK(max_diff(result.metric, Matrix<double>::identity(3)) <= 1e-12);
}

TEST_CASE("pgd_solve refuses large dimensions") {
  std::mt19937_64 rng(1);
  const Dataset data = oracle::random_dataset(10, 65, 2, rng);
  CHECK_THROWS_AS(pgd_solve(data, sample_pairs(data, 3, 3, 1)), ConfigError);
  CHECK_THROWS_AS(pgd_solve(oracle::random_dataset(10, 3, 2, rng), PairSet{}), ConfigError);
}

TEST_CASE("pgd_solve and SGD reach similar accuracy on a two-cluster instance") {
  const Dataset all = generate_synthetic({2, 150, 6, 1.0, 1.5, 17});
  const auto split = split_samples(all.size(), 0.3, 17);
  const Dataset train = all.subset(split.train);
  const Dataset test = all.subset(split.held_out);
  const PairSet train_pairs = sample_pairs(train, 300, 300, 5);
  const PairSet test_pairs = sample_pairs(test, 200, 200, 6);

  PgdOptions options;
  options.iterations = 1500;
  const auto pgd = pgd_solve(train, train_pairs, options);
  check_symmetric_psd(pgd.metric);

  Hyperparams hp;
  hp.learning_rate = 0.01;
  hp.batch_similar = hp.batch_dissimilar = 50;
  SequentialOptions sgd;
  sgd.steps = 3000;
  sgd.seed = 5;
  sgd.schedule.eta = hp.learning_rate;
  const auto L = train_sequential(train, train_pairs, init_factor(6, 6, 5), hp, sgd);

  const double pgd_accuracy = best_threshold(pair_distances(pgd.metric, test, test_pairs)).accuracy;
  const double sgd_accuracy = best_threshold(pair_distances(L, test, test_pairs)).accuracy;
  MESSAGE("pgd accuracy " << pgd_accuracy << ", sgd accuracy " << sgd_accuracy);
  CHECK(std::abs(pgd_accuracy - sgd_accuracy) <= 0.02);
}
