#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hallu/mixture.hpp"

namespace hallu {

/// A hallucination witness: a mixture whose Bayes-optimal estimate has density
/// at most delta under every latent state.
struct ConstructionReport {
  std::string kind;
  bool feasible = true;
  std::optional<LatentMixture> mixture;
  double delta = 0.0;
  Vector claimed_optimum;
  Vector estimator_value;
  std::vector<double> per_state_density;
  bool passed = false;
  std::string note;
};

/// Exact-optimum witness. States 1..N-1 use the supplied covariances; the last
/// state's mean cancels the others and its covariance is δ^{-2/d}·I.
struct ExactOptimumSpec {
  int dim = 1;
  double delta = 0.1;
  std::vector<double> weights;                  // N entries, last one > 0
  std::vector<GaussianComponent> covariances;   // N-1 entries; means are ignored
};

/// m_i = sqrt((-2 ln δ - ln det Σ_i) / (1ᵀ Σ_i⁻¹ 1)); nullopt when the numerator is negative.
std::optional<double> exact_optimum_mean_scale(const GaussianComponent& covariance, double delta);

ConstructionReport construct_exact_optimum(const ExactOptimumSpec& spec);

/// One independent exact-optimum witness per input.
std::vector<ConstructionReport> construct_multi_input(const std::vector<ExactOptimumSpec>& specs);

/// ε-ball witness with unit covariances and paired means.
struct EpsilonBallSpec {
  int dim = 1;
  double delta = 0.1;
  double epsilon = 0.0;
  std::vector<double> weights;  // N even
  double scale = 1.0;           // C >= 1 multiplies the required norm
  std::size_t ball_samples = 1000;
  std::uint64_t seed = 0;
};

struct EpsilonBallReport {
  ConstructionReport center;
  double required_norm = 0.0;   // sqrt(-2 ln δ) + ε
  double min_mean_norm = 0.0;
  /// (2π)^{-d/2} exp(-½ (min‖μ_i‖ - ε)²): bounds every conditional density on the ball.
  double analytic_ball_bound = 0.0;
  double max_sampled_density = 0.0;
  std::size_t ball_samples = 0;
  bool ball_passed = false;
  bool passed = false;
};

/// Builds the paired-mean mixture centred at `center` (zero when empty).
EpsilonBallReport construct_epsilon_ball(const EpsilonBallSpec& spec, const Vector& center = {});

/// Inputs tilted by hint vectors, for an L-Lipschitz estimator.
struct TiltedFamily {
  Vector base_input;
  std::vector<Vector> hints;
  double lipschitz = 1.0;

  /// B = max_i ‖hint_i‖
  double hint_bound() const;
};

using Estimator = std::function<Vector(const Vector&)>;

struct HintVerdict {
  std::size_t hint = 0;
  bool applicable = true;
  double shift_norm = 0.0;   // ‖A(X + δ_i) - A(X)‖, when an estimator is supplied
  Vector estimate;
  std::vector<double> per_state_density;
  bool hallucinates = false;
};

struct TiltedReport {
  double epsilon = 0.0;
  EpsilonBallReport ball;
  std::vector<HintVerdict> hints;
  bool passed = false;
};

/// Applies the ε-ball witness with ε = L·B. With an estimator, the witness is
/// centred at estimator(X) and each tilted estimate is checked directly; hints
/// that break the Lipschitz bound are "not applicable" rather than failures.
TiltedReport construct_tilted(const TiltedFamily& family, const EpsilonBallSpec& base,
                              const Estimator& estimator = {});

/// Cross-entropy witness over C classes with N one-hot targets.
struct CrossEntropyReport {
  int states = 0;
  int classes = 0;
  double delta = 0.0;
  double variance_bound = 0.0;       // -(N-1) / (N ln δ²)
  double density_at_bound = 0.0;
  bool bound_passed = false;
  double variance_used = 0.0;        // bound when it passes, else largest passing d below it
  SimplexVector prediction = SimplexVector::uniform(1);
  std::vector<double> distance_sq;   // ‖p_X - q_i‖²
  std::vector<double> per_state_density;
  bool passed = false;
};

/// (2πd)^{-1/2} exp(-dist² / (2d))
double crossentropy_state_density(double variance, double distance_sq);

CrossEntropyReport construct_crossentropy(int states, int classes, double delta);

}  // namespace hallu
