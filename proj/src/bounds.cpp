#include "hallu/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hallu/errors.hpp"
#include "hallu/kernels.hpp"
#include "hallu/mixture.hpp"
#include "hallu/regions.hpp"

namespace hallu {

namespace {

constexpr double kInvPhi = 0.6180339887498948482;  // 1/φ

void check_law(const MeanLaw& law) {
  if (!(law.param > 0.0) || !std::isfinite(law.param) || !std::isfinite(law.mu0)) {
    throw InputError("mean law parameter must be positive and finite (degenerate law)");
  }
}

}  // namespace

double MeanLaw::variance() const {
  check_law(*this);
  switch (family) {
    case MeanLawFamily::Gaussian:
    case MeanLawFamily::TwoPoint:
      return param * param;
    case MeanLawFamily::Uniform:
      return param * param / 3.0;
  }
  return 0.0;
}

double MeanLaw::fourth_central_moment() const {
  check_law(*this);
  const double p4 = std::pow(param, 4);
  switch (family) {
    case MeanLawFamily::Gaussian:
      return 3.0 * p4;
    case MeanLawFamily::TwoPoint:
      return p4;
    case MeanLawFamily::Uniform:
      return p4 / 5.0;
  }
  return 0.0;
}

double MeanLaw::sample(Rng& rng) const {
  switch (family) {
    case MeanLawFamily::Gaussian:
      return std::normal_distribution<double>(mu0, param)(rng);
    case MeanLawFamily::TwoPoint:
      return std::bernoulli_distribution(0.5)(rng) ? mu0 + param : mu0 - param;
    case MeanLawFamily::Uniform:
      return std::uniform_real_distribution<double>(mu0 - param, mu0 + param)(rng);
  }
  return mu0;
}

std::string family_name(MeanLawFamily family) {
  switch (family) {
    case MeanLawFamily::Gaussian:
      return "gaussian";
    case MeanLawFamily::TwoPoint:
      return "two_point";
    case MeanLawFamily::Uniform:
      return "uniform";
  }
  return "gaussian";
}

MeanLawFamily family_from_name(const std::string& name) {
  if (name == "gaussian") return MeanLawFamily::Gaussian;
  if (name == "two_point") return MeanLawFamily::TwoPoint;
  if (name == "uniform") return MeanLawFamily::Uniform;
  throw InputError("unknown mean-law family \"" + name + "\" (expected gaussian, two_point or uniform)");
}

double moment_ratio_K(const MeanLaw& law) {
  const double v = law.variance();
  return v * v / law.fourth_central_moment();
}

double aggregate_spread_d(const std::vector<double>& weights, const std::vector<double>& state_variances,
                          SpreadVariant variant) {
  if (weights.size() != state_variances.size()) throw InputError("weights and variances differ in length");
  for (double s : state_variances) {
    if (!(s > 0.0)) throw InputError("state variances must be positive");
  }
  if (variant == SpreadVariant::Statement) {
    double acc = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) acc += weights[j] * weights[j] * state_variances[j];
    return std::sqrt(acc);
  }
  double p2 = 0.0;
  for (double p : weights) p2 += p * p;
  const double total = std::accumulate(state_variances.begin(), state_variances.end(), 0.0);
  return std::sqrt(p2 * total);
}

void BoundInputs::validate() const {
  check_probability_vector(weights, "weights");
  if (mean_laws.size() != weights.size()) throw InputError("need one mean law per latent state");
  for (const auto& law : mean_laws) {
    check_law(law);
    if (law.mu0 != mean_laws.front().mu0) throw InputError("mean laws must share one centre mu0");
  }
  if (!(r_x >= 0.0) || !std::isfinite(r_x)) throw InputError("r_x must be finite and nonnegative");
  if (!(delta > 0.0 && delta <= 1.0)) throw InputError("delta must lie in (0, 1]");
}

double theta_of_alpha(double alpha, double state_variance, double d, double r_x) {
  const double t = alpha * d + r_x;
  return t * t / state_variance;
}

double alpha_objective(double alpha, double state_variance, double d, double r_x) {
  const double theta = theta_of_alpha(alpha, state_variance, d, r_x);
  const double gap = 1.0 - theta;
  return (1.0 - 1.0 / (alpha * alpha)) * gap * gap;
}

AlphaResult optimize_alpha(double state_variance, double d, double r_x) {
  if (!(d > 0.0)) throw InputError("aggregate spread d must be positive");
  if (!(state_variance > 0.0)) throw InputError("state variance must be positive");
  AlphaResult r;
  r.alpha_max = (std::sqrt(state_variance) - r_x) / d;
  if (!(r.alpha_max > 1.0)) return r;

  auto g = [&](double a) { return alpha_objective(a, state_variance, d, r_x); };
  double lo = 1.0;
  double hi = r.alpha_max;
  double x1 = hi - kInvPhi * (hi - lo);
  double x2 = lo + kInvPhi * (hi - lo);
  double g1 = g(x1);
  double g2 = g(x2);
  while (hi - lo > 1e-10) {
    if (g1 < g2) {
      lo = x1;
      x1 = x2;
      g1 = g2;
      x2 = lo + kInvPhi * (hi - lo);
      g2 = g(x2);
    } else {
      hi = x2;
      x2 = x1;
      g2 = g1;
      x1 = hi - kInvPhi * (hi - lo);
      g1 = g(x1);
    }
  }
  r.feasible = true;
  r.alpha = 0.5 * (lo + hi);
  r.theta = theta_of_alpha(r.alpha, state_variance, d, r_x);
  r.P = g(r.alpha);
  return r;
}

BoundReport hallucination_lower_bound(const BoundInputs& inputs) {
  inputs.validate();
  std::vector<double> variances;
  for (const auto& law : inputs.mean_laws) variances.push_back(law.variance());

  BoundReport report;
  report.d = aggregate_spread_d(inputs.weights, variances, inputs.variant);
  report.feasible = true;
  double product = 1.0;
  for (std::size_t i = 0; i < variances.size(); ++i) {
    StateBound s;
    s.alpha = optimize_alpha(variances[i], report.d, inputs.r_x);
    s.K = moment_ratio_K(inputs.mean_laws[i]);
    report.feasible = report.feasible && s.alpha.feasible;
    product *= s.alpha.P * s.K;
    report.states.push_back(s);
  }
  if (report.feasible) report.product_bound = product;
  return report;
}

Frequency wilson(std::uint64_t hits, std::uint64_t trials, double z) {
  Frequency f;
  f.hits = hits;
  f.trials = trials;
  if (trials == 0) {
    f.upper = 1.0;
    return f;
  }
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(hits) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  f.rate = p;
  f.lower = std::max(0.0, centre - half);
  f.upper = std::min(1.0, centre + half);
  return f;
}

McReport mc_verify_bound(const BoundInputs& inputs, const McOptions& options) {
  inputs.validate();
  if (!(options.component_variance >= kMinVariance)) throw InputError("component variance must be >= 1e-12");
  if (options.trials == 0) throw InputError("trials must be positive");

  McReport report;
  report.covering_radius =
      covering_radius(GaussianComponent::isotropic(Vector::Zero(1), options.component_variance), inputs.delta);
  if (report.covering_radius > inputs.r_x) {
    throw InfeasibleError("covering radius " + std::to_string(report.covering_radius) + " exceeds r_x " +
                          std::to_string(inputs.r_x) + "; lower the component variance");
  }

  const double radius = report.covering_radius;
  const kernels::TrialFn<2> trial = [&](Rng& rng) {
    std::vector<GaussianComponent> comps;
    comps.reserve(inputs.weights.size());
    double estimate = 0.0;
    for (std::size_t i = 0; i < inputs.weights.size(); ++i) {
      const double mu = inputs.mean_laws[i].sample(rng);
      estimate += inputs.weights[i] * mu;
      comps.push_back(GaussianComponent::isotropic(Vector::Constant(1, mu), options.component_variance));
    }
    const LatentMixture mixture(inputs.weights, std::move(comps));
    bool outside_balls = true;
    for (const auto& c : mixture.components()) outside_balls = outside_balls && std::abs(estimate - c.mean()(0)) > radius;
    const bool hallucinates = delta_hallucinates(mixture, Vector::Constant(1, estimate), inputs.delta).hallucinates;
    return std::array<bool, 2>{outside_balls, hallucinates};
  };

  const auto seed = derive_seed(options.seed, "mc-verify-bound");
  const auto counts = options.parallel ? kernels::parallel::partitioned_count<2>(options.trials, seed, trial)
                                       : kernels::serial::partitioned_count<2>(options.trials, seed, trial);
  report.geometric = wilson(counts[0], options.trials);
  report.hallucination = wilson(counts[1], options.trials);
  return report;
}

LemmaReport lemma_checks(const LemmaSpec& spec, std::size_t trials, std::uint64_t seed) {
  check_probability_vector(spec.weights, "weights");
  if (spec.mean_laws.size() != spec.weights.size()) throw InputError("need one mean law per latent state");
  for (const auto& law : spec.mean_laws) {
    check_law(law);
    if (law.mu0 != spec.mean_laws.front().mu0) throw InputError("mean laws must share one centre mu0");
  }
  if (!(spec.theta >= 0.0 && spec.theta <= 1.0)) throw InputError("theta must lie in [0, 1]");
  if (!(spec.chebyshev_a > 0.0) || !(spec.distance_d1 > 0.0)) throw InputError("lemma scales must be positive");
  if (trials == 0) throw InputError("trials must be positive");

  constexpr double z = 3.0;
  const std::size_t n = spec.weights.size();
  const double mu0 = spec.mean_laws.front().mu0;
  const MeanLaw& first = spec.mean_laws.front();
  const double var0 = first.variance();
  double p2 = 0.0;
  double total_var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p2 += spec.weights[i] * spec.weights[i];
    total_var += spec.mean_laws[i].variance();
  }
  const double d1 = spec.distance_d1 * std::sqrt(p2 * total_var);

  std::uint64_t pz = 0;
  std::uint64_t cheb = 0;
  std::uint64_t cauchy_ok = 0;
  std::uint64_t far_estimate = 0;
  std::vector<std::uint64_t> far_state(n, 0);
  Rng rng = make_rng(seed, "lemma-checks");
  std::vector<double> mu(n);
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t i = 0; i < n; ++i) mu[i] = spec.mean_laws[i].sample(rng);
    const double dev0 = mu[0] - mu0;
    if (dev0 * dev0 > spec.theta * var0) ++pz;
    if (std::abs(dev0) >= spec.chebyshev_a * std::sqrt(var0)) ++cheb;

    double xy = 0.0;
    double xx = 0.0;
    double yy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = mu[i] - mu0;
      xy += spec.weights[i] * y;
      xx += spec.weights[i] * spec.weights[i];
      yy += y * y;
    }
    if (xy * xy <= xx * yy * (1.0 + 1e-12) + 1e-300) ++cauchy_ok;
    // xy is exactly A* - mu0
    if (xy * xy >= d1 * d1) ++far_estimate;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = mu[i] - mu0;
      if (y * y >= spec.theta * spec.mean_laws[i].variance()) ++far_state[i];
    }
  }

  LemmaReport report;
  auto add = [&](std::string name, std::uint64_t hits, double bound, bool lower) {
    const Frequency f = wilson(hits, trials, z);
    LemmaCheck c{std::move(name), f.rate, bound, lower, lower ? f.upper >= bound : f.lower <= bound};
    report.checks.push_back(c);
  };
  const double gap = 1.0 - spec.theta;
  add("paley-zygmund", pz, gap * gap * moment_ratio_K(first), true);
  add("chebyshev", cheb, 1.0 / (spec.chebyshev_a * spec.chebyshev_a), false);
  report.checks.push_back(LemmaCheck{"cauchy-schwarz", static_cast<double>(cauchy_ok) / static_cast<double>(trials),
                                     1.0, true, cauchy_ok == trials});
  add("estimate-distance-upper", far_estimate, p2 * total_var / (d1 * d1), false);
  for (std::size_t i = 0; i < n; ++i) {
    add("state-distance-lower[" + std::to_string(i) + "]", far_state[i], gap * gap * moment_ratio_K(spec.mean_laws[i]),
        true);
  }
  report.passed = std::all_of(report.checks.begin(), report.checks.end(), [](const LemmaCheck& c) { return c.passed; });
  return report;
}

}  // namespace hallu
