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

Vector v1(double x) { return Vector::Constant(1, x); }

LatentMixture pair_1d(double a, double b, double va = 1.0, double vb = 1.0, double pa = 0.5) {
  return LatentMixture({pa, 1.0 - pa}, {GaussianComponent::isotropic(v1(a), va), GaussianComponent::isotropic(v1(b), vb)});
}

/// True mass of {f >= t} for a 1-D mixture, by quadrature on a fine grid.
double mass_above(const LatentMixture& m, double t, double lo, double hi) {
  return oracle::simpson(
      [&](double x) {
        const double f = mixture_density(m, v1(x));
        return f >= t ? f : 0.0;
      },
      lo, hi, 400000);
}

}  // namespace

TEST_CASE("delta-hallucination verdicts") {
  const LatentMixture std_normal({1.0}, {GaussianComponent::isotropic(v1(0), 1.0)});
  const auto v = delta_hallucinates(std_normal, v1(0), 0.1);
  CHECK_FALSE(v.hallucinates);
  CHECK(v.per_state_density[0] == doctest::Approx(0.39894).epsilon(1e-5));

  const LatentMixture narrow({1.0}, {GaussianComponent::isotropic(v1(0), 1e-4)});
  const auto n = delta_hallucinates(narrow, v1(0), 1.0);
  CHECK_FALSE(n.hallucinates);
  CHECK(n.per_state_density[0] == doctest::Approx(1.0 / std::sqrt(2 * std::numbers::pi * 1e-4)).epsilon(1e-12));
  CHECK(n.per_state_density[0] == doctest::Approx(39.894).epsilon(1e-4));

  CHECK_THROWS_AS(delta_hallucinates(std_normal, v1(0), 0.0), InputError);
  CHECK_THROWS_AS(delta_hallucinates(std_normal, v1(0), 1.5), InputError);
  CHECK_THROWS_AS(delta_hallucinates(std_normal, Vector::Zero(2), 0.5), InputError);
}

TEST_CASE("verdict, margin and max density agree") {
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 1 + trial % 3;
    std::vector<GaussianComponent> cs;
    for (int k = 0; k < 3; ++k) cs.push_back(GaussianComponent::full(support::random_vector(gen, d, 3.0), support::random_spd(gen, d)));
    const LatentMixture m(support::random_weights(gen, 3), cs);
    const Vector a = support::random_vector(gen, d, 3.0);
    const double delta = std::uniform_real_distribution<double>(0.001, 0.2)(gen);
    const auto v = delta_hallucinates(m, a, delta);
    double mx = 0.0;
    bool all_below = true;
    for (int i = 0; i < 3; ++i) {
      const double f = oracle::mvn_pdf(a, cs[i].mean(), cs[i].covariance());
      CHECK(v.per_state_density[i] == doctest::Approx(f).epsilon(1e-10));
      mx = std::max(mx, v.per_state_density[i]);
      all_below = all_below && v.per_state_density[i] <= delta;
    }
    CHECK(v.hallucinates == all_below);
    CHECK(v.hallucinates == (v.margin <= 0.0));
    CHECK(max_conditional_density(m, a) == mx);
    // Membership of the analytic HCDR is the complement of the verdict.
    CHECK(hcdr_from_delta(m, delta).contains(m, a) == !v.hallucinates);
  }
}

TEST_CASE("max conditional density scores the near mode, not an average") {
  const auto m = pair_1d(-5, 5);
  CHECK(max_conditional_density(m, v1(-5)) == doctest::Approx(oracle::normal_pdf(0, 0, 1)).epsilon(1e-14));
  CHECK(max_conditional_density(m, v1(-5)) > mixture_density(m, v1(-5)));
}

TEST_CASE("covering radius examples") {
  const auto unit = GaussianComponent::isotropic(v1(0), 1.0);
  CHECK(covering_radius(unit, 0.1) == doctest::Approx(1.66352).epsilon(1e-5));
  CHECK(std::abs(covering_radius(unit, 0.1) - oracle::covering_radius_scan(v1(0), Matrix::Identity(1, 1), 0.1)) < 1e-4);
  CHECK(covering_radius(unit, 0.4) == 0.0);
  CHECK(covering_radius(unit, 1.0) == 0.0);

  Vector var(2);
  var << 1.0, 4.0;
  const auto c = GaussianComponent::diagonal(Vector::Zero(2), var);
  const double peak = 1.0 / (2 * std::numbers::pi * 2.0);
  CHECK(covering_radius(c, 0.01) == doctest::Approx(std::sqrt(2 * std::log(peak / 0.01)) * 2.0).epsilon(1e-12));
  CHECK(std::abs(covering_radius(c, 0.01) -
                 oracle::covering_radius_scan(Vector::Zero(2), var.asDiagonal().toDenseMatrix(), 0.01)) < 1e-3);

  const auto radii = covering_radii(pair_1d(0, 3, 1.0, 4.0), 0.05);
  CHECK(radii.uniform == std::max(radii.per_state[0], radii.per_state[1]));
}

TEST_CASE("covering soundness and tightness on random components") {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + trial % 2;
    const Vector mean = support::random_vector(gen, d);
    const Matrix cov = support::random_spd(gen, d, 0.1, 2.0);
    const auto c = GaussianComponent::full(mean, cov);
    const double delta = 0.2 * std::exp(c.log_peak());
    const double r = covering_radius(c, delta);
    REQUIRE(r > 0.0);
    Rng rng(static_cast<std::uint64_t>(trial));
    int kept = 0;
    while (kept < 10000) {
      const Vector x = c.sample(rng);
      if (c.density(x) <= delta) continue;
      ++kept;
      CHECK((x - mean).norm() <= r * (1 + 1e-12));
    }
    CHECK(oracle::covering_radius_scan(mean, cov, delta, 4000) >= 0.99 * r);
  }
}

TEST_CASE("HDR of the standard normal") {
  const LatentMixture m({1.0}, {GaussianComponent::isotropic(v1(0), 1.0)});
  const auto r = hdr_grid(m, 0.9545);
  // Oracle: for a symmetric unimodal density the HDR is [-z, z] with 2Φ(z) - 1 = mass.
  double lo = 0.0;
  double hi = 5.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (2 * oracle::normal_cdf(mid) - 1 < 0.9545 ? lo : hi) = mid;
  }
  CHECK(r.region.threshold == doctest::Approx(oracle::normal_pdf(lo, 0, 1)).epsilon(2e-3));
  CHECK(r.region.threshold == doctest::Approx(0.05399).epsilon(5e-3));
  const auto iv = r.cells->intervals();
  REQUIRE(iv.size() == 1);
  CHECK(iv[0].first == doctest::Approx(-2.0).epsilon(1e-2));
  CHECK(iv[0].second == doctest::Approx(2.0).epsilon(1e-2));
  CHECK(std::abs(r.achieved_mass - 0.9545) < 1e-3);

  const auto all = hdr_grid(m, 1.0);
  CHECK(all.region.threshold == 0.0);
  CHECK(all.cells->count() == all.cells->member.size());
  CHECK_THROWS_AS(hdr_grid(m, 0.0), InputError);
  CHECK_THROWS_AS(hdr_grid(m, 1.2), InputError);
}

TEST_CASE("HDR of a separated bimodal mixture is two intervals") {
  const auto m = pair_1d(-4, 4);
  const auto r = hdr_grid(m, 0.9);
  const auto iv = r.cells->intervals();
  REQUIRE(iv.size() == 2);
  CHECK(iv[0].first < -4);
  CHECK(iv[0].second > -4);
  CHECK(iv[1].first < 4);
  CHECK(iv[1].second > 4);
}

TEST_CASE("HDR achieved mass matches quadrature of the thresholded density") {
  std::mt19937_64 gen(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::uniform_real_distribution<double> var(0.2, 2.0);
    std::vector<GaussianComponent> cs;
    for (int k = 0; k < 3; ++k) cs.push_back(GaussianComponent::isotropic(v1(u(gen)), var(gen)));
    const LatentMixture m(support::random_weights(gen, 3), cs);
    const double mass = std::uniform_real_distribution<double>(0.5, 0.99)(gen);
    const auto r = hdr_grid(m, mass);
    const Grid g = default_grid(m);
    CHECK(std::abs(r.achieved_mass - mass) < 1e-3);
    CHECK(std::abs(mass_above(m, r.region.threshold, g.lo[0], g.hi[0]) - mass) < 1e-3);
  }
}

TEST_CASE("2-D HDR mass against quadrature") {
  Matrix cov(2, 2);
  cov << 1.0, 0.3, 0.3, 0.5;
  const LatentMixture m({0.4, 0.6}, {GaussianComponent::full(Vector::Zero(2), cov),
                                     GaussianComponent::isotropic(Vector::Constant(2, 2.0), 0.7)});
  const auto r = hdr_grid(m, 0.8);
  CHECK(std::abs(r.achieved_mass - 0.8) < 1e-3);
  const Grid g = default_grid(m);
  const double q = oracle::simpson2(
      [&](double x, double y) {
        Vector p(2);
        p << x, y;
        const double f = mixture_density(m, p);
        return f >= r.region.threshold ? f : 0.0;
      },
      g.lo[0], g.hi[0], g.lo[1], g.hi[1], 1200);
  CHECK(std::abs(q - 0.8) < 2e-3);
}

TEST_CASE("HDR nesting") {
  const auto m = pair_1d(-1, 2, 0.5, 1.5, 0.3);
  const double masses[] = {0.3, 0.5, 0.7, 0.9, 0.99};
  GridOptions fixed;
  fixed.boundary_mass = 0.0;
  for (int k = 0; k + 1 < 5; ++k) {
    const auto a = hdr_grid(m, masses[k], fixed);
    const auto b = hdr_grid(m, masses[k + 1], fixed);
    CHECK(a.region.threshold >= b.region.threshold);
    for (std::size_t i = 0; i < a.cells->member.size(); ++i) {
      if (a.cells->member[i]) CHECK(b.cells->member[i]);
    }
  }
}

TEST_CASE("sampled HDR is within two standard errors") {
  const auto m = pair_1d(-1.5, 1.5);
  for (double mass : {0.5, 0.8, 0.9}) {
    const auto r = hdr_sampled(m, mass, 100000, 42);
    CHECK(r.standard_error > 0.0);
    const double truth = mass_above(m, r.region.threshold, -12, 12);
    CHECK(std::abs(truth - mass) <= 2.0 * r.standard_error);
    CHECK(std::abs(r.achieved_mass - mass) <= 2.0 * r.standard_error);
  }
  std::mt19937_64 gen(2);
  const LatentMixture high({0.5, 0.5}, {GaussianComponent::isotropic(support::random_vector(gen, 4), 1.0),
                                        GaussianComponent::isotropic(support::random_vector(gen, 4), 1.0)});
  CHECK_THROWS_AS(hdr_grid(high, 0.9), InputError);
  const auto r = hdr_sampled(high, 0.9, 50000, 1);
  // Oracle: the true mass of {f >= t}, by 2e6 independent draws (its own error is ~2e-4).
  std::mt19937_64 draw(99);
  std::normal_distribution<double> z(0.0, 1.0);
  const int n = 2000000;
  int inside = 0;
  for (int t = 0; t < n; ++t) {
    const Vector& mu = high.component(draw() % 2).mean();
    Vector x(4);
    for (int k = 0; k < 4; ++k) x(k) = mu(k) + z(draw);
    inside += mixture_density(high, x) >= r.region.threshold ? 1 : 0;
  }
  const double truth = static_cast<double>(inside) / n;
  CHECK(std::abs(truth - 0.9) <= 2.0 * r.standard_error + 3.0 * std::sqrt(0.09 / n));
}

TEST_CASE("HCDR is the union of the conditional regions") {
  const auto m = pair_1d(-1.5, 1.5);
  const auto hcdr = hcdr_from_mass(m, {0.9, 0.9});
  REQUIRE(hcdr.per_state.size() == 2);
  for (double x = -6; x <= 6; x += 0.01) {
    const auto in = hcdr.state_membership(m, v1(x));
    CHECK(hcdr.contains(m, v1(x)) == (in[0] || in[1]));
  }
  // Each conditional region is N(±1.5, 1)'s central 90% interval.
  const double z = 1.6448536;
  CHECK(hcdr.state_membership(m, v1(-1.5 - z + 0.01))[0]);
  CHECK_FALSE(hcdr.state_membership(m, v1(-1.5 - z - 0.01))[0]);
  CHECK(hcdr.state_membership(m, v1(1.5 + z - 0.01))[1]);
  CHECK_FALSE(hcdr.state_membership(m, v1(1.5 + z + 0.01))[1]);
  CHECK_THROWS_AS(hcdr_from_mass(m, {0.9}), InputError);
}

TEST_CASE("points below delta everywhere are outside the HCDR") {
  const auto m = pair_1d(-4, 4);
  const double delta = 0.05;
  const auto hcdr = hcdr_from_delta(m, delta);
  CHECK(region_kind(hcdr.per_state[0]) == "analytic-ellipsoid");
  CHECK_FALSE(hcdr.contains(m, v1(0)));
  CHECK(delta_hallucinates(m, v1(0), delta).hallucinates);
  CHECK(hcdr.contains(m, v1(4.1)));

  ExactOptimumSpec spec;
  spec.dim = 2;
  spec.delta = 0.1;
  spec.weights = {0.3, 0.3, 0.4};
  spec.covariances = {GaussianComponent::isotropic(Vector::Zero(2), 1.0), GaussianComponent::isotropic(Vector::Zero(2), 0.5)};
  const auto report = construct_exact_optimum(spec);
  REQUIRE(report.mixture);
  CHECK_FALSE(hcdr_from_delta(*report.mixture, 0.1).contains(*report.mixture, bayes_estimator(*report.mixture)));
}

TEST_CASE("grid region CSV") {
  const LatentMixture m({1.0}, {GaussianComponent::isotropic(v1(0), 1.0)});
  GridOptions o;
  o.cells_1d = 8;
  o.boundary_mass = 0.0;
  const auto r = hdr_grid(m, 0.5, o);
  const std::string csv = grid_region_csv(*r.cells);
  CHECK(csv.rfind("x,member\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
}
