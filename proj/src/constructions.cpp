#include "hallu/constructions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hallu/errors.hpp"
#include "hallu/regions.hpp"

namespace hallu {

namespace {

constexpr double kOptimumTolerance = 1e-9;

void check_open_delta(double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) throw InputError("delta must lie in (0, 1], got " + std::to_string(delta));
}

void finish(ConstructionReport& report) {
  const auto verdict = delta_hallucinates(*report.mixture, report.estimator_value, report.delta);
  report.per_state_density = verdict.per_state_density;
  const double gap = (report.estimator_value - report.claimed_optimum).cwiseAbs().maxCoeff();
  report.passed = verdict.hallucinates && gap <= kOptimumTolerance;
  if (!verdict.hallucinates) report.note = "a conditional density exceeds delta";
  if (gap > kOptimumTolerance) report.note = "Bayes estimator differs from the claimed optimum";
}

}  // namespace

std::optional<double> exact_optimum_mean_scale(const GaussianComponent& covariance, double delta) {
  const double numerator = -2.0 * std::log(delta) - covariance.log_det();
  if (numerator < 0.0) return std::nullopt;
  const Vector ones = Vector::Ones(covariance.dim());
  const double quad = ones.dot(covariance.solve(ones));
  return std::sqrt(numerator / quad);
}

ConstructionReport construct_exact_optimum(const ExactOptimumSpec& spec) {
  check_open_delta(spec.delta);
  if (spec.dim < 1) throw InputError("output dimension must be positive");
  const std::size_t n = spec.weights.size();
  if (n < 2) throw InputError("the exact-optimum witness needs at least two latent states");
  check_probability_vector(spec.weights, "weights");
  if (spec.covariances.size() != n - 1) {
    throw InputError("need " + std::to_string(n - 1) + " covariances (one per non-final state)");
  }
  if (!(spec.weights.back() > 0.0)) throw InputError("the final state's weight must be positive");

  ConstructionReport report;
  report.kind = "exact-optimum";
  report.delta = spec.delta;
  report.claimed_optimum = Vector::Zero(spec.dim);

  std::vector<GaussianComponent> components;
  components.reserve(n);
  Vector last_mean = Vector::Zero(spec.dim);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const auto& cov = spec.covariances[i];
    if (cov.dim() != spec.dim) throw InputError("covariance dimension does not match dim");
    const auto scale = exact_optimum_mean_scale(cov, spec.delta);
    if (!scale) {
      report.feasible = false;
      report.note = "state " + std::to_string(i) + ": -2 ln(delta) - ln det(Sigma) < 0, no mean satisfies the bound";
      return report;
    }
    const Vector mean = Vector::Constant(spec.dim, *scale);
    components.push_back(cov.shifted(mean - cov.mean()));
    last_mean -= (spec.weights[i] / spec.weights.back()) * mean;
  }
  const double last_variance = std::pow(spec.delta, -2.0 / spec.dim);
  components.push_back(GaussianComponent::isotropic(last_mean, last_variance));

  report.mixture.emplace(spec.weights, std::move(components));
  report.estimator_value = bayes_estimator(*report.mixture);
  finish(report);
  return report;
}

std::vector<ConstructionReport> construct_multi_input(const std::vector<ExactOptimumSpec>& specs) {
  std::vector<ConstructionReport> reports;
  reports.reserve(specs.size());
  for (const auto& s : specs) reports.push_back(construct_exact_optimum(s));
  return reports;
}

EpsilonBallReport construct_epsilon_ball(const EpsilonBallSpec& spec, const Vector& center_in) {
  check_open_delta(spec.delta);
  if (spec.dim < 1) throw InputError("output dimension must be positive");
  if (!(spec.epsilon >= 0.0)) throw InputError("epsilon must be nonnegative");
  if (!(spec.scale >= 1.0)) throw InputError("scale must be at least 1");
  const std::size_t n = spec.weights.size();
  if (n < 2 || n % 2 != 0) throw InputError("the epsilon-ball witness needs an even number of states");
  check_probability_vector(spec.weights, "weights");
  const Vector center = center_in.size() == 0 ? Vector::Zero(spec.dim) : center_in;
  if (center.size() != spec.dim) throw InputError("centre dimension does not match dim");

  EpsilonBallReport out;
  out.required_norm = std::sqrt(-2.0 * std::log(spec.delta)) + spec.epsilon;
  out.center.kind = "epsilon-ball";
  out.center.delta = spec.delta;
  out.center.claimed_optimum = center;

  const double target = spec.scale * out.required_norm;
  const Vector direction = Vector::Constant(spec.dim, 1.0 / std::sqrt(static_cast<double>(spec.dim)));
  std::vector<Vector> means(n, Vector::Zero(spec.dim));
  for (std::size_t i = 0; i < n / 2; ++i) {
    const std::size_t j = n - 1 - i;
    const double pi = spec.weights[i];
    const double pj = spec.weights[j];
    if ((pi == 0.0) != (pj == 0.0)) {
      out.center.feasible = false;
      out.center.note = "states " + std::to_string(i) + " and " + std::to_string(j) +
                        ": one zero weight makes the pair unable to cancel";
      return out;
    }
    Vector mi = target * direction;
    Vector mj = pj == 0.0 ? Vector(-mi) : Vector(-(pi / pj) * mi);
    const double short_norm = std::min(mi.norm(), mj.norm());
    if (short_norm > 0.0 && short_norm < target) {
      mi *= target / short_norm;
      mj *= target / short_norm;
    }
    means[i] = mi;
    means[j] = mj;
  }

  std::vector<GaussianComponent> components;
  components.reserve(n);
  out.min_mean_norm = HUGE_VAL;
  for (const auto& m : means) {
    components.push_back(GaussianComponent::isotropic(center + m, 1.0));
    out.min_mean_norm = std::min(out.min_mean_norm, m.norm());
  }
  out.center.mixture.emplace(spec.weights, std::move(components));
  out.center.estimator_value = bayes_estimator(*out.center.mixture);
  finish(out.center);

  const double gap = std::max(0.0, out.min_mean_norm - spec.epsilon);
  out.analytic_ball_bound =
      std::pow(2.0 * std::numbers::pi, -0.5 * spec.dim) * std::exp(-0.5 * gap * gap);

  // uniform draws in the ε-ball: Gaussian direction, radius ε·U^{1/d}
  Rng rng = make_rng(spec.seed, "epsilon-ball");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t draws = spec.epsilon > 0.0 ? spec.ball_samples : 1;
  out.max_sampled_density = 0.0;
  for (std::size_t s = 0; s < draws; ++s) {
    Vector v = center;
    if (spec.epsilon > 0.0) {
      Vector dir(spec.dim);
      for (int k = 0; k < spec.dim; ++k) dir(k) = normal(rng);
      const double radius = spec.epsilon * std::pow(unit(rng), 1.0 / spec.dim);
      v += radius * dir.normalized();
    }
    out.max_sampled_density = std::max(out.max_sampled_density, max_conditional_density(*out.center.mixture, v));
  }
  out.ball_samples = draws;
  out.ball_passed = out.max_sampled_density <= spec.delta * (1.0 + 1e-9) && out.analytic_ball_bound <= spec.delta;
  out.passed = out.center.passed && out.ball_passed;
  return out;
}

double TiltedFamily::hint_bound() const {
  double bound = 0.0;
  for (const auto& h : hints) bound = std::max(bound, h.norm());
  return bound;
}

TiltedReport construct_tilted(const TiltedFamily& family, const EpsilonBallSpec& base, const Estimator& estimator) {
  if (!(family.lipschitz > 0.0) || !std::isfinite(family.lipschitz)) {
    throw InputError("Lipschitz constant must be positive and finite");
  }
  for (const auto& h : family.hints) {
    if (h.size() != family.base_input.size()) throw InputError("hint dimension does not match the base input");
    if (!h.allFinite()) throw InputError("hints must be finite");
  }

  TiltedReport report;
  report.epsilon = family.lipschitz * family.hint_bound();
  EpsilonBallSpec spec = base;
  spec.epsilon = report.epsilon;

  Vector center = Vector::Zero(spec.dim);
  if (estimator) {
    center = estimator(family.base_input);
    if (center.size() != spec.dim) throw InputError("estimator output dimension does not match dim");
  }
  report.ball = construct_epsilon_ball(spec, center);
  if (!report.ball.center.feasible) return report;

  bool all = report.ball.passed;
  const auto& mixture = *report.ball.center.mixture;
  for (std::size_t i = 0; i < family.hints.size(); ++i) {
    HintVerdict v;
    v.hint = i;
    if (estimator) {
      v.estimate = estimator(family.base_input + family.hints[i]);
      v.shift_norm = (v.estimate - center).norm();
      v.applicable = v.shift_norm <= report.epsilon * (1.0 + 1e-12) + 1e-15;
      const auto verdict = delta_hallucinates(mixture, v.estimate, spec.delta);
      v.per_state_density = verdict.per_state_density;
      v.hallucinates = verdict.hallucinates;
      if (v.applicable) all = all && v.hallucinates;
    } else {
      v.hallucinates = report.ball.ball_passed;
    }
    report.hints.push_back(std::move(v));
  }
  report.passed = all;
  return report;
}

double crossentropy_state_density(double variance, double distance_sq) {
  return std::exp(-distance_sq / (2.0 * variance)) / std::sqrt(2.0 * std::numbers::pi * variance);
}

CrossEntropyReport construct_crossentropy(int states, int classes, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw InputError("delta must lie in (0, 1) for the cross-entropy witness");
  if (states < 2) throw InputError("the cross-entropy witness needs at least two latent states");
  if (classes < states) throw InputError("class count must be at least the number of states");

  CrossEntropyReport r;
  r.states = states;
  r.classes = classes;
  r.delta = delta;

  std::vector<SimplexVector> targets;
  for (int i = 0; i < states; ++i) targets.push_back(SimplexVector::one_hot(classes, i));
  r.prediction = cross_entropy_optimal(targets);
  double farthest = 0.0;
  for (const auto& q : targets) {
    r.distance_sq.push_back((r.prediction.entries() - q.entries()).squaredNorm());
    farthest = std::max(farthest, r.distance_sq.back());
  }

  const double n = states;
  r.variance_bound = -(n - 1.0) / (n * std::log(delta * delta));
  auto worst = [&](double variance) {
    double f = 0.0;
    for (double dist : r.distance_sq) f = std::max(f, crossentropy_state_density(variance, dist));
    return f;
  };
  r.density_at_bound = worst(r.variance_bound);
  r.bound_passed = r.density_at_bound <= delta;

  r.variance_used = r.variance_bound;
  if (!r.bound_passed) {
    // density rises in d up to d = dist², so bisect on (0, min(bound, dist²)].
    // The 1e-12 margin keeps recomputations that round differently at or below delta.
    const double target = delta * (1.0 - 1e-12);
    double lo = 0.0;
    double hi = std::min(r.variance_bound, farthest);
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (worst(mid) <= target) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    r.variance_used = lo;
  }
  for (double dist : r.distance_sq) r.per_state_density.push_back(crossentropy_state_density(r.variance_used, dist));
  r.passed = r.variance_used > 0.0 &&
             std::all_of(r.per_state_density.begin(), r.per_state_density.end(), [&](double f) { return f <= delta; });
  return r;
}

}  // namespace hallu
