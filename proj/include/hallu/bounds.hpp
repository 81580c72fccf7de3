#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hallu/rng.hpp"

namespace hallu {

enum class MeanLawFamily { Gaussian, TwoPoint, Uniform };

/// Law of one state's conditional mean μ_i around the shared centre mu0.
/// `param` is the standard deviation (gaussian), the offset s of mu0 ± s
/// (two_point) or the half-width a of [mu0 - a, mu0 + a] (uniform).
struct MeanLaw {
  MeanLawFamily family = MeanLawFamily::Gaussian;
  double mu0 = 0.0;
  double param = 1.0;

  double variance() const;
  double fourth_central_moment() const;
  double sample(Rng& rng) const;
};

std::string family_name(MeanLawFamily family);
MeanLawFamily family_from_name(const std::string& name);

/// (E[(μ-μ0)²])² / E[(μ-μ0)⁴]
double moment_ratio_K(const MeanLaw& law);

enum class SpreadVariant {
  Statement,  // d = sqrt(Σ_j p_j² σ_j)
  Proof,      // d = sqrt((Σ_j p_j²) · Σ_j σ_j)
};

double aggregate_spread_d(const std::vector<double>& weights, const std::vector<double>& state_variances,
                          SpreadVariant variant = SpreadVariant::Statement);

struct BoundInputs {
  std::vector<double> weights;
  std::vector<MeanLaw> mean_laws;
  double r_x = 0.0;
  double delta = 0.1;
  SpreadVariant variant = SpreadVariant::Statement;

  void validate() const;
};

struct AlphaResult {
  bool feasible = false;
  double alpha = 0.0;
  double theta = 0.0;
  double P = 0.0;          // (1 - α⁻²)(1 - θ(α))² at the optimum
  double alpha_max = 0.0;  // θ(alpha_max) = 1
};

/// θ(α) = (α d + r_x)² / σ
double theta_of_alpha(double alpha, double state_variance, double d, double r_x);
/// g(α) = (1 - α⁻²)(1 - θ(α))²
double alpha_objective(double alpha, double state_variance, double d, double r_x);

/// Golden-section maximization of g on (1, alpha_max]; infeasible when alpha_max <= 1.
AlphaResult optimize_alpha(double state_variance, double d, double r_x);

struct StateBound {
  AlphaResult alpha;
  double K = 0.0;
};

struct BoundReport {
  double d = 0.0;
  std::vector<StateBound> states;
  bool feasible = false;
  std::optional<double> product_bound;  // Π_i P_i K_i when every state is feasible
};

BoundReport hallucination_lower_bound(const BoundInputs& inputs);

/// Wilson score interval for k successes in n trials at z standard errors.
struct Frequency {
  std::uint64_t hits = 0;
  std::uint64_t trials = 0;
  double rate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

Frequency wilson(std::uint64_t hits, std::uint64_t trials, double z = 1.959963984540054);

struct McOptions {
  double component_variance = 1e-3;
  std::size_t trials = 100000;
  std::uint64_t seed = 0;
  bool parallel = true;
};

struct McReport {
  double covering_radius = 0.0;
  Frequency geometric;      // A* outside every covering ball B_i(r_i)
  Frequency hallucination;  // every conditional density at A* <= delta
};

/// Draws the state means from their laws, forms the 1-D mixture with isotropic
/// `component_variance`, and counts both events at A* = Σ p_i μ_i. Throws
/// InfeasibleError when the covering radius exceeds r_x.
McReport mc_verify_bound(const BoundInputs& inputs, const McOptions& options);

struct LemmaSpec {
  std::vector<double> weights;
  std::vector<MeanLaw> mean_laws;
  double theta = 0.5;         // Paley–Zygmund and distance lower bound
  double chebyshev_a = 2.0;   // in units of the state standard deviation
  double distance_d1 = 1.0;   // in units of sqrt((Σ p²) σ_total)
};

struct LemmaCheck {
  std::string name;
  double empirical = 0.0;
  double bound = 0.0;
  bool lower_bound = true;  // empirical should be >= bound (else <=)
  bool passed = false;
};

struct LemmaReport {
  std::vector<LemmaCheck> checks;
  bool passed = false;
};

/// Monte-Carlo checks of Paley–Zygmund, Chebyshev, Cauchy–Schwarz and the two
/// distance lemmas, each with 3-standard-error Wilson slack.
LemmaReport lemma_checks(const LemmaSpec& spec, std::size_t trials, std::uint64_t seed);

}  // namespace hallu
