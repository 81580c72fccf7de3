#include <doctest.h>

#include <cmath>
#include <numbers>

#include "hallu/constructions.hpp"
#include "hallu/errors.hpp"
#include "hallu/regions.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace hallu;

namespace {

ExactOptimumSpec unit_spec(int dim, double delta, std::vector<double> weights) {
  ExactOptimumSpec s;
  s.dim = dim;
  s.delta = delta;
  s.weights = std::move(weights);
  for (std::size_t i = 0; i + 1 < s.weights.size(); ++i) s.covariances.push_back(GaussianComponent::isotropic(Vector::Zero(dim), 1.0));
  return s;
}

/// Re-derives every conditional density at `x` from the mixture's parameters alone.
std::vector<double> oracle_densities(const LatentMixture& m, const Vector& x) {
  std::vector<double> out;
  for (const auto& c : m.components()) out.push_back(oracle::mvn_pdf(x, c.mean(), c.covariance()));
  return out;
}

double cross_entropy_density(double d, double dist2) {
  return std::exp(-dist2 / (2 * d)) / std::sqrt(2 * std::numbers::pi * d);
}

}  // namespace

TEST_CASE("exact-optimum witness, 1-D, delta 0.1") {
  const auto r = construct_exact_optimum(unit_spec(1, 0.1, {0.5, 0.5}));
  REQUIRE(r.feasible);
  REQUIRE(r.mixture);
  CHECK(r.passed);
  CHECK(r.mixture->component(0).mean()(0) == doctest::Approx(2.14597).epsilon(1e-5));
  CHECK(r.mixture->component(0).mean()(0) == doctest::Approx(std::sqrt(-2 * std::log(0.1))).epsilon(1e-14));
  CHECK(r.per_state_density[0] == doctest::Approx(0.1 / std::sqrt(2 * std::numbers::pi)).epsilon(1e-12));
  CHECK(std::abs(r.per_state_density[0] - 0.039894) < 1e-6);
  // Last state: variance δ^{-2} = 100, peak (2π·100)^{-1/2}.
  CHECK(r.mixture->component(1).isotropic_variance() == doctest::Approx(100.0).epsilon(1e-12));
  const double peak = std::exp(r.mixture->component(1).log_peak());
  CHECK(peak == doctest::Approx(1.0 / std::sqrt(2 * std::numbers::pi * 100.0)).epsilon(1e-12));
  CHECK(std::abs(peak - 0.039894) < 1e-6);
  CHECK(r.estimator_value.norm() < 1e-12);
}

TEST_CASE("exact-optimum witness over random feasible configurations") {
  std::mt19937_64 gen(51);
  const double deltas[] = {0.3, 0.1, 0.01};
  int passed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 1 + static_cast<int>(gen() % 8);
    const std::size_t n = 2 + gen() % 5;
    ExactOptimumSpec s;
    s.dim = d;
    s.delta = deltas[trial % 3];
    s.weights = support::random_weights(gen, n);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      // Eigenvalues in [0.5, 1.5] keep -2 ln δ - ln det Σ positive for every δ above.
      const Matrix cov = support::random_spd(gen, d, 0.5, 1.5);
      s.covariances.push_back(trial % 2 == 0 ? GaussianComponent::full(Vector::Zero(d), cov)
                                             : GaussianComponent::diagonal(Vector::Zero(d), cov.diagonal()));
    }
    const auto r = construct_exact_optimum(s);
    REQUIRE(r.feasible);
    passed += r.passed ? 1 : 0;
    CHECK(r.estimator_value.cwiseAbs().maxCoeff() <= 1e-9);
    // Independent recomputation: Σ p_i μ_i and densities at 0.
    Vector sum = Vector::Zero(d);
    for (std::size_t i = 0; i < n; ++i) sum += s.weights[i] * r.mixture->component(i).mean();
    CHECK(sum.cwiseAbs().maxCoeff() <= 1e-9);
    const auto f = oracle_densities(*r.mixture, Vector::Zero(d));
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(f[i] <= s.delta);
      CHECK(r.per_state_density[i] == doctest::Approx(f[i]).epsilon(1e-12));
    }
    // States with a supplied covariance sit exactly at (2π)^{-d/2}·δ.
    CHECK(f[0] == doctest::Approx(std::pow(2 * std::numbers::pi, -0.5 * d) * s.delta).epsilon(1e-9));
  }
  CHECK(passed == 100);
}

TEST_CASE("exact-optimum infeasibility is reported") {
  ExactOptimumSpec s = unit_spec(1, 0.9, {0.5, 0.5});
  s.covariances[0] = GaussianComponent::isotropic(Vector::Zero(1), 10.0);
  const auto r = construct_exact_optimum(s);
  CHECK_FALSE(r.feasible);
  CHECK_FALSE(r.passed);
  CHECK_FALSE(r.mixture.has_value());
  CHECK_FALSE(exact_optimum_mean_scale(s.covariances[0], 0.9).has_value());

  CHECK_THROWS_AS(construct_exact_optimum(unit_spec(1, 1.5, {0.5, 0.5})), InputError);
  CHECK_THROWS_AS(construct_exact_optimum(unit_spec(1, 0.1, {1.0})), InputError);
  CHECK_THROWS_AS(construct_exact_optimum(unit_spec(1, 0.1, {0.5, 0.5, 0.0})), InputError);
}

TEST_CASE("multi-input witnesses are independent") {
  const auto good = unit_spec(2, 0.1, {0.3, 0.7});
  auto bad = unit_spec(1, 0.9, {0.5, 0.5});
  bad.covariances[0] = GaussianComponent::isotropic(Vector::Zero(1), 10.0);
  const auto three = construct_multi_input({good, good, good});
  REQUIRE(three.size() == 3);
  for (const auto& r : three) CHECK(r.passed);
  const auto mixed = construct_multi_input({good, bad});
  CHECK(mixed[0].passed);
  CHECK_FALSE(mixed[1].feasible);
  const auto one = construct_multi_input({good});
  const auto direct = construct_exact_optimum(good);
  CHECK(one[0].per_state_density == direct.per_state_density);
}

TEST_CASE("epsilon-ball witness, delta 0.1, epsilon 0.5") {
  EpsilonBallSpec s;
  s.dim = 1;
  s.delta = 0.1;
  s.epsilon = 0.5;
  s.weights = {0.5, 0.5};
  s.seed = 3;
  const auto r = construct_epsilon_ball(s);
  CHECK(r.required_norm == doctest::Approx(2.64597).epsilon(1e-5));
  CHECK(r.min_mean_norm >= r.required_norm - 1e-12);
  CHECK(r.ball_samples == 1000);
  CHECK(r.passed);
  const double analytic = std::exp(-0.5 * std::pow(r.min_mean_norm - 0.5, 2)) / std::sqrt(2 * std::numbers::pi);
  CHECK(r.analytic_ball_bound == doctest::Approx(analytic).epsilon(1e-12));
  CHECK(analytic <= 0.1);

  // Oracle: scan the whole ball on a fine grid.
  const auto& m = *r.center.mixture;
  double worst = 0.0;
  for (double v = -0.5; v <= 0.5; v += 1e-4) {
    for (double f : oracle_densities(m, Vector::Constant(1, v))) worst = std::max(worst, f);
  }
  CHECK(worst <= 0.1 + 1e-12);
  CHECK(r.max_sampled_density <= worst + 1e-15);
}

TEST_CASE("epsilon-ball witness on random even mixtures") {
  std::mt19937_64 gen(77);
  for (int trial = 0; trial < 30; ++trial) {
    EpsilonBallSpec s;
    s.dim = 1 + trial % 4;
    s.delta = trial % 2 == 0 ? 0.1 : 0.01;
    s.epsilon = 0.25 * (trial % 5);
    s.weights = support::random_weights(gen, 2 * (1 + trial % 3));
    s.seed = static_cast<std::uint64_t>(trial);
    const auto r = construct_epsilon_ball(s);
    REQUIRE(r.center.feasible);
    CHECK(r.passed);
    const auto& m = *r.center.mixture;
    for (const auto& c : m.components()) CHECK(c.mean().norm() >= r.required_norm - 1e-12);
    CHECK(r.center.estimator_value.norm() <= 1e-9);
    CHECK(r.max_sampled_density <= s.delta * (1 + 1e-9));
  }
}

TEST_CASE("epsilon-ball edge cases") {
  EpsilonBallSpec s;
  s.delta = 0.1;
  s.weights = {0.25, 0.25, 0.25, 0.25};
  s.epsilon = 0.0;
  const auto zero = construct_epsilon_ball(s);
  CHECK(zero.passed);
  CHECK(zero.ball_samples == 1);
  CHECK(zero.required_norm == doctest::Approx(std::sqrt(-2 * std::log(0.1))));

  s.epsilon = 0.5;
  const auto base = construct_epsilon_ball(s);
  s.scale = 2.0;
  const auto doubled = construct_epsilon_ball(s);
  CHECK(base.passed);
  CHECK(doubled.passed);
  CHECK(doubled.max_sampled_density <= base.max_sampled_density);

  s.weights = {0.2, 0.3, 0.5};
  CHECK_THROWS_AS(construct_epsilon_ball(s), InputError);
  s.weights = {0.5, 0.5};
  s.scale = 0.5;
  CHECK_THROWS_AS(construct_epsilon_ball(s), InputError);
  s.scale = 1.0;
  s.weights = {0.0, 1.0};
  CHECK_FALSE(construct_epsilon_ball(s).center.feasible);
}

TEST_CASE("tilted inputs") {
  EpsilonBallSpec base;
  base.dim = 1;
  base.delta = 0.1;
  base.weights = {0.5, 0.5};
  base.seed = 3;

  TiltedFamily fam;
  fam.base_input = Vector::Zero(2);
  Vector h(2);
  h << 0.15, 0.2;  // norm 0.25
  fam.hints = {h, Vector::Zero(2)};
  fam.lipschitz = 2.0;
  CHECK(fam.hint_bound() == doctest::Approx(0.25));
  const auto r = construct_tilted(fam, base);
  CHECK(r.epsilon == doctest::Approx(0.5));
  EpsilonBallSpec direct = base;
  direct.epsilon = 0.5;
  const auto ball = construct_epsilon_ball(direct);
  CHECK(r.ball.required_norm == ball.required_norm);
  CHECK(r.ball.max_sampled_density == ball.max_sampled_density);
  CHECK(r.passed);

  TiltedFamily still = fam;
  still.hints = {Vector::Zero(2)};
  CHECK(construct_tilted(still, base).epsilon == 0.0);

  // A 2-Lipschitz linear estimator: every tilted estimate lands in the ball.
  const Estimator linear = [](const Vector& x) { return Vector::Constant(1, 2.0 * x(0) * 0.6 + 2.0 * x(1) * 0.8); };
  const auto with_est = construct_tilted(fam, base, linear);
  CHECK(with_est.passed);
  for (const auto& v : with_est.hints) {
    CHECK(v.applicable);
    CHECK(v.hallucinates);
  }

  // An estimator that moves too far is "not applicable", not a failure.
  const Estimator steep = [](const Vector& x) { return Vector::Constant(1, 40.0 * x(0)); };
  const auto broken = construct_tilted(fam, base, steep);
  CHECK_FALSE(broken.hints[0].applicable);
  CHECK(broken.hints[1].applicable);
  CHECK(broken.passed);

  // Constant estimator with a tiny Lipschitz constant: the ε → 0 limit.
  TiltedFamily flat = fam;
  flat.lipschitz = 4e-6;
  const Estimator constant = [](const Vector&) { return Vector::Zero(1); };
  const auto limit = construct_tilted(flat, base, constant);
  CHECK(limit.epsilon == doctest::Approx(1e-6));
  CHECK(limit.passed);
  EpsilonBallSpec zero = base;
  zero.epsilon = 0.0;
  const auto at_zero = construct_epsilon_ball(zero);
  CHECK(limit.hints[0].per_state_density[0] == doctest::Approx(at_zero.center.per_state_density[0]).epsilon(1e-5));

  fam.lipschitz = -1.0;
  CHECK_THROWS_AS(construct_tilted(fam, base), InputError);
}

TEST_CASE("cross-entropy witness, N=4") {
  const auto r = construct_crossentropy(4, 4, 0.1);
  CHECK(std::abs(r.variance_bound - 0.162857) < 5e-6);
  CHECK(r.variance_bound == doctest::Approx(-3.0 / (4.0 * std::log(0.01))).epsilon(1e-14));
  CHECK(r.bound_passed);
  CHECK(r.variance_used == r.variance_bound);
  for (double d2 : r.distance_sq) CHECK(d2 == doctest::Approx(0.75).epsilon(1e-14));
  const double f = cross_entropy_density(r.variance_bound, 0.75);
  CHECK(std::abs(f - 0.09886) < 1e-5);
  for (double g : r.per_state_density) CHECK(g == doctest::Approx(f).epsilon(1e-12));
  CHECK(r.passed);
}

TEST_CASE("cross-entropy witness at the literal bound fails for N=2 and N=3") {
  // δ / sqrt(2π d) exceeds δ when 2π d < 1.
  const auto two = construct_crossentropy(2, 2, 0.1);
  CHECK(two.variance_bound == doctest::Approx(0.108574).epsilon(1e-5));
  CHECK(two.distance_sq[0] == doctest::Approx(0.5));
  CHECK(two.density_at_bound == doctest::Approx(cross_entropy_density(0.108574, 0.5)).epsilon(1e-5));
  CHECK(two.density_at_bound > 0.1);
  CHECK_FALSE(two.bound_passed);
  // The fallback keeps the inequality on d and lands at or below δ.
  CHECK(two.variance_used < two.variance_bound);
  CHECK(two.passed);
  CHECK(cross_entropy_density(two.variance_used, 0.5) <= 0.1);
  CHECK(cross_entropy_density(two.variance_used, 0.5) == doctest::Approx(0.1).epsilon(1e-9));

  const auto three = construct_crossentropy(3, 5, 0.1);
  CHECK_FALSE(three.bound_passed);
  CHECK(three.passed);
}

TEST_CASE("cross-entropy witness for N up to 10") {
  for (int n = 2; n <= 10; ++n) {
    const auto r = construct_crossentropy(n, n + 2, 0.1);
    CHECK(r.passed);
    for (double d2 : r.distance_sq) CHECK(d2 == doctest::Approx((n - 1.0) / n).epsilon(1e-12));
    for (double f : r.per_state_density) CHECK(f <= 0.1);
    CHECK(r.bound_passed == (n >= 4));
  }
  // Density rises with d below the bound.
  const auto r = construct_crossentropy(6, 6, 0.1);
  double prev = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double f = crossentropy_state_density(r.variance_bound * k / 100.0, r.distance_sq[0]);
    CHECK(f >= prev);
    prev = f;
  }
  CHECK_THROWS_AS(construct_crossentropy(3, 3, 1.0), InputError);
  CHECK_THROWS_AS(construct_crossentropy(3, 2, 0.1), InputError);
}

TEST_CASE("cross-entropy prediction beats random simplex candidates") {
  const auto r = construct_crossentropy(4, 6, 0.1);
  std::vector<SimplexVector> targets;
  for (int i = 0; i < 4; ++i) targets.push_back(SimplexVector::one_hot(6, i));
  const std::vector<double> w(4, 0.25);
  const double h = expected_cross_entropy(targets, w, r.prediction);
  std::mt19937_64 gen(6);
  for (int k = 0; k < 100; ++k) {
    Vector v = support::random_vector(gen, 6).array().exp();
    CHECK(h <= expected_cross_entropy(targets, w, SimplexVector(v / v.sum())));
  }
}
