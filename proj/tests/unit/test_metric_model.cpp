#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "dml/data.hpp"
#include "dml/metric_model.hpp"
#include "oracles.hpp"

using namespace dml;

namespace {

Hyperparams params(double lambda = 1.0, double margin = 1.0) {
  Hyperparams hp;
  hp.lambda = lambda;
  hp.margin = margin;
  return hp;
}

std::vector<float> random_vector(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<float> v(d);
  for (auto& x : v) x = static_cast<float>(normal(rng));
  return v;
}

double gradient_floor(const Matrix<double>& g) {
  double m = 0.0;
  for (double v : g.values()) m = std::max(m, std::abs(v));
  return 1e-6 * (1.0 + m);
}

}  // namespace

TEST_CASE("pair_distance_sq trivial cases") {
  const std::vector<float> x{1, 2, 3};
  const std::vector<float> y{0.5f, -1, 4};
  CHECK(pair_distance_sq(Matrix<float>(2, 3), x, y) == 0.0);

  const std::vector<float> e1{1, 0, 0};
  const std::vector<float> zero{0, 0, 0};
  CHECK(pair_distance_sq(Matrix<float>::identity(3), e1, zero) == 1.0);

  CHECK_THROWS_AS(pair_distance_sq(Matrix<float>(2, 3), std::vector<float>{1, 2}, y), InputError);
}

TEST_CASE("pair_distance_sq matches the assembled quadratic form and is symmetric") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng() % 50;
    const std::size_t k = 1 + rng() % d;
    const auto L = oracle::random_matrix<float>(k, d, rng);
    const auto x = random_vector(d, rng);
    const auto y = random_vector(d, rng);
    const double forward = pair_distance_sq(L, x, y);
    const double backward = pair_distance_sq(L, y, x);
    const double expected = oracle::quadratic_form(oracle::gram(L), x, y);
    CHECK(forward >= 0.0);
    CHECK(forward == doctest::Approx(backward).epsilon(1e-12));
    CHECK(forward == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("pair_distance_sq on d=5, k=3 agrees with explicit L^T L") {
  std::mt19937_64 rng(5);
  const auto L = oracle::random_matrix<double>(3, 5, rng);
  const auto x = random_vector(5, rng);
  const auto y = random_vector(5, rng);
  CHECK(pair_distance_sq(L, x, y) == doctest::Approx(oracle::quadratic_form(oracle::gram(L), x, y)).epsilon(1e-12));
}

TEST_CASE("L^T L is positive semidefinite for any finite L") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + rng() % 50;
    const std::size_t k = 1 + rng() % d;
    const auto L = oracle::random_matrix<float>(k, d, rng, 3.0);
    CHECK(oracle::min_eigenvalue(oracle::gram(L)) >= -1e-9);
  }
}

TEST_CASE("objective trivial cases") {
  std::mt19937_64 rng(3);
  const Dataset data = oracle::random_dataset(20, 4, 2, rng);
  PairSet pairs;
  for (std::uint64_t i = 0; i < 10; ++i) pairs.similar.push_back({i, i + 1});
  for (std::uint64_t i = 0; i < 7; ++i) pairs.dissimilar.push_back({i, i + 10});
  CHECK(objective(Matrix<float>(2, 4), data, pairs, params()) == 7.0);

  // Identical similar points, dissimilar points at squared distance >= 1.
  Matrix<float> x(4, 2);
  x(1, 0) = 0.0f;
  x(2, 0) = 1.0f;
  x(3, 1) = 3.0f;
  const Dataset placed(x, std::vector<Label>{0, 0, 1, 1});
  PairSet clean;
  clean.similar = {{0, 1}};
  clean.dissimilar = {{0, 2}, {1, 3}, {2, 3}};
  CHECK(objective(Matrix<float>::identity(2), placed, clean, params()) == 0.0);

  PairSet bad;
  bad.similar = {{0, 20}};
  CHECK_THROWS_AS(objective(Matrix<float>(2, 4), data, bad, params()), InputError);
}

TEST_CASE("objective matches the brute-force oracle on random instances") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Dataset data = oracle::random_dataset(20, 6, 3, rng);
    const PairSet pairs = sample_pairs(data, 15, 15, 100 + trial);
    const auto L = oracle::random_matrix<double>(4, 6, rng, 0.3);
    const double lambda = 0.5 + trial * 0.1;
    const double margin = 0.5 + trial * 0.2;
    const double expected = oracle::objective(L, data, pairs, lambda, margin);
    CHECK(objective(L, data, pairs, params(lambda, margin)) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("objective is monotone in each pair's distance") {
  std::mt19937_64 rng(17);
  const Dataset base = oracle::random_dataset(12, 5, 2, rng);
  const PairSet pairs = sample_pairs(base, 6, 6, 4);
  const auto L = oracle::random_matrix<double>(5, 5, rng, 0.3);
  const double before = objective(L, base, pairs, params(1.0, 2.0));
  // Move the second point of one pair further along the pair's own direction.
  auto stretched = [&](const IndexPair& p, double factor) {
    Matrix<float> x = base.features();
    for (std::size_t j = 0; j < x.cols(); ++j) {
      x(p.second, j) = static_cast<float>(x(p.first, j) + factor * (x(p.second, j) - x(p.first, j)));
    }
    return Dataset(x, base.labels());
  };
  PairSet only_similar{{pairs.similar[0]}, {}};
  PairSet only_dissimilar{{}, {pairs.dissimilar[0]}};
  const Dataset far_similar = stretched(pairs.similar[0], 1.5);
  CHECK(objective(L, far_similar, only_similar, params()) >= objective(L, base, only_similar, params()));
  const Dataset far_dissimilar = stretched(pairs.dissimilar[0], 1.5);
  CHECK(objective(L, far_dissimilar, only_dissimilar, params(1.0, 2.0)) <=
        objective(L, base, only_dissimilar, params(1.0, 2.0)));
  CHECK(before >= 0.0);
}

TEST_CASE("pair_gradient trivial cases") {
  const std::vector<float> x{1, 2, 3, 4};
  const auto L = Matrix<float>::identity(4);
  const auto zero_similar = pair_gradient(L, x, x, PairKind::similar, params());
  CHECK(zero_similar == Matrix<float>(4, 4));

  // ||L(x-y)||^2 = 4 with margin 1: inactive hinge.
  const std::vector<float> y{1, 2, 3, 2};
  CHECK(pair_distance_sq(L, x, y) == 4.0);
  CHECK(pair_gradient(L, x, y, PairKind::dissimilar, params()) == Matrix<float>(4, 4));

  // Exactly at the margin the hinge counts as inactive.
  const std::vector<float> y1{1, 2, 3, 3};
  CHECK(pair_gradient(L, x, y1, PairKind::dissimilar, params()) == Matrix<float>(4, 4));
}

TEST_CASE("pair_gradient matches central finite differences") {
  std::mt19937_64 rng(1234);
  int checked = 0;
  int similar_checked = 0;
  int dissimilar_active = 0;
  while (checked < 100) {
    const std::size_t d = 1 + rng() % 10;
    const std::size_t k = 1 + rng() % std::min<std::size_t>(d, 6);
    const auto L = oracle::random_matrix<double>(k, d, rng, 0.5);
    const auto x = random_vector(d, rng);
    const auto y = random_vector(d, rng);
    const bool similar = rng() % 2 == 0;
    const double dist = pair_distance_sq(L, x, y);
    std::uniform_real_distribution<double> ratio(0.3, 3.0);
    const double margin = std::max(1e-3, dist * ratio(rng));
    if (std::abs(dist - margin) < 1e-4) continue;
    const Hyperparams hp = params(0.5 + (rng() % 10) * 0.25, margin);

    Matrix<float> xy(2, d);
    std::copy(x.begin(), x.end(), xy.row(0).begin());
    std::copy(y.begin(), y.end(), xy.row(1).begin());
    const Dataset data(xy, std::vector<Label>{0, similar ? 0 : 1});
    PairSet one;
    (similar ? one.similar : one.dissimilar).push_back({0, 1});
    const auto fd = oracle::finite_difference(L, [&](const Matrix<double>& probe) {
      return oracle::objective(probe, data, one, hp.lambda, hp.margin);
    });
    const auto analytic = pair_gradient(L, x, y, similar ? PairKind::similar : PairKind::dissimilar, hp);
    CHECK(oracle::entrywise_close(analytic, fd, 1e-5, gradient_floor(fd)));
    ++checked;
    similar ? ++similar_checked : (dist < margin ? ++dissimilar_active : 0);
  }
  CHECK(similar_checked > 20);
  CHECK(dissimilar_active > 10);
}

TEST_CASE("minibatch_gradient singleton, duplicate, and empty batches") {
  std::mt19937_64 rng(99);
  const Dataset data = oracle::random_dataset(10, 6, 2, rng);
  const auto L = oracle::random_matrix<double>(4, 6, rng, 0.4);
  Hyperparams hp = params(1.0, 5.0);
  const IndexPair s{0, 2};
  const IndexPair dpair{1, 2};

  hp.batch_dissimilar = 0;
  const std::vector<IndexPair> one{s};
  const auto single = minibatch_gradient(L, data, one, {}, hp);
  CHECK(single.gradient == pair_gradient(L, data.vector(0), data.vector(2), PairKind::similar, hp));

  const std::vector<IndexPair> twice{s, s};
  const auto doubled = minibatch_gradient(L, data, twice, {}, hp);
  CHECK(oracle::entrywise_close(doubled.gradient, single.gradient, 1e-15, 1e-300));
  CHECK(doubled.batch_objective == doctest::Approx(single.batch_objective).epsilon(1e-15));

  hp.batch_dissimilar = 1;
  CHECK_THROWS_AS(minibatch_gradient(L, data, one, {}, hp), ConfigError);
  const std::vector<IndexPair> dis{dpair};
  hp.batch_similar = 0;
  CHECK_NOTHROW(minibatch_gradient(L, data, {}, dis, hp));
}

TEST_CASE("minibatch_gradient matches finite differences of the normalized batch objective") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    const Dataset data = oracle::random_dataset(30, 6, 3, rng);
    const PairSet batch = sample_pairs(data, 8, 8, 50 + trial);
    const auto L = oracle::random_matrix<double>(4, 6, rng, 0.3);
    Hyperparams hp = params(1.0, 3.0);
    hp.batch_similar = hp.batch_dissimilar = 8;
    bool near_kink = false;
    for (const auto& p : batch.dissimilar) {
      near_kink |= std::abs(pair_distance_sq(L, data.vector(p.first), data.vector(p.second)) - hp.margin) < 1e-4;
    }
    if (near_kink) continue;
    const auto fd = oracle::finite_difference(L, [&](const Matrix<double>& probe) {
      const PairSet only_s{batch.similar, {}};
      const PairSet only_d{{}, batch.dissimilar};
      return oracle::objective(probe, data, only_s, 0, 1) / 8.0 +
             oracle::objective(probe, data, only_d, hp.lambda, hp.margin) / 8.0;
    });
    const auto result = minibatch_gradient(L, data, batch.similar, batch.dissimilar, hp);
    CHECK(oracle::entrywise_close(result.gradient, fd, 1e-5, gradient_floor(fd)));
  }
}

TEST_CASE("minibatch_gradient is invariant under batch permutation") {
  std::mt19937_64 rng(31);
  const Dataset data = oracle::random_dataset(40, 8, 4, rng);
  const PairSet batch = sample_pairs(data, 20, 20, 9);
  const auto L = oracle::random_matrix<double>(5, 8, rng, 0.3);
  Hyperparams hp = params(1.0, 4.0);
  const auto reference = minibatch_gradient(L, data, batch.similar, batch.dissimilar, hp);
  for (int trial = 0; trial < 10; ++trial) {
    PairSet shuffled = batch;
    std::shuffle(shuffled.similar.begin(), shuffled.similar.end(), rng);
    std::shuffle(shuffled.dissimilar.begin(), shuffled.dissimilar.end(), rng);
    const auto permuted = minibatch_gradient(L, data, shuffled.similar, shuffled.dissimilar, hp);
    CHECK(oracle::entrywise_close(permuted.gradient, reference.gradient, 1e-12, 1e-12));
  }
}

TEST_CASE("minibatch_gradient exploits sparse differences without changing the result") {
  Matrix<float> x(3, 6);
  x(0, 1) = 1.0f;
  x(1, 1) = 3.0f;
  x(1, 4) = -2.0f;
  x(2, 5) = 0.5f;
  const Dataset data(x, std::vector<Label>{0, 0, 1});
  std::mt19937_64 rng(4);
  const auto L = oracle::random_matrix<double>(3, 6, rng);
  const auto g = pair_gradient(L, data.vector(0), data.vector(1), PairKind::similar, params());
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t j : {0, 2, 3, 5}) CHECK(g(r, j) == 0.0);
  }
  const auto fd = oracle::finite_difference(L, [&](const Matrix<double>& probe) {
    return oracle::objective(probe, data, PairSet{{{0, 1}}, {}}, 1.0, 1.0);
  });
  CHECK(oracle::entrywise_close(g, fd, 1e-5, gradient_floor(fd)));
}

TEST_CASE("apply_delta arithmetic") {
  std::mt19937_64 rng(6);
  const auto L = oracle::random_matrix<float>(3, 4, rng);
  const auto delta = oracle::random_matrix<float>(3, 4, rng);
  CHECK(apply_delta(L, delta, 0.0f) == L);
  CHECK(apply_delta(L, Matrix<float>(3, 4), -0.1f) == L);
  const auto moved = apply_delta(Matrix<float>(2, 2), Matrix<float>(2, 2, 1.0f), -0.5f);
  for (float v : moved.values()) CHECK(v == -0.5f);
  CHECK_THROWS_AS(apply_delta(L, Matrix<float>(4, 3), 1.0f), InputError);
}

TEST_CASE("init_factor") {
  CHECK(init_factor(3, 5, 7) == init_factor(3, 5, 7));
  CHECK_FALSE(init_factor(3, 5, 7) == init_factor(3, 5, 8));
  const auto tiny = init_factor(1, 1, 42);
  CHECK(tiny.rows() == 1);
  CHECK(std::isfinite(tiny(0, 0)));
  CHECK_THROWS_AS(init_factor(6, 5, 1), ConfigError);

  const auto big = init_factor(100, 1000, 1);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (float v : big.values()) {
    sum += v;
    sum_sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(big.size());
  const double mean = sum / n;
  const double sd = std::sqrt(sum_sq / n - mean * mean);
  CHECK(std::abs(sd - 1.0 / std::sqrt(1000.0)) < 0.1 / std::sqrt(1000.0));
  CHECK(std::abs(mean) < 5.0 * sd / std::sqrt(n));
}

TEST_CASE("hyperparameter validation") {
  Hyperparams hp;
  CHECK_NOTHROW(hp.validate());
  CHECK(hp.lambda == 1.0);
  CHECK(hp.margin == 1.0);
  hp.margin = 0.0;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
  hp = {};
  hp.lambda = -1.0;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
  hp = {};
  hp.batch_similar = 0;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
}

TEST_CASE("one SGD sweep with small eta decreases the objective") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Dataset data = generate_synthetic({2, 20, 6, 1.0, 3.0, seed});
    const PairSet pairs = sample_pairs(data, 64, 64, seed);
    auto L = init_factor(4, 6, seed).cast<double>();
    Hyperparams hp = params();
    hp.batch_similar = hp.batch_dissimilar = 8;
    const double eta = 1e-3;
    const double before = objective(L, data, pairs, hp);
    for (std::size_t b = 0; b < 8; ++b) {
      const std::span<const IndexPair> s(pairs.similar.data() + 8 * b, 8);
      const std::span<const IndexPair> d(pairs.dissimilar.data() + 8 * b, 8);
      apply_delta_in_place(L, minibatch_gradient(L, data, s, d, hp).gradient, -eta);
    }
    CHECK(objective(L, data, pairs, hp) < before);
  }
}
