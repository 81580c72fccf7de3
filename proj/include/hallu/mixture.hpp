#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "hallu/rng.hpp"

namespace hallu {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class CovarianceKind { Isotropic, Diagonal, Full };

/// Smallest admissible covariance eigenvalue (or diagonal entry).
inline constexpr double kMinVariance = 1e-12;

/// A multivariate normal law N(mean, Σ) with Σ stored in the cheapest form that
/// represents it. Factorizations are computed once at construction.
class GaussianComponent {
 public:
  static GaussianComponent isotropic(Vector mean, double variance);
  static GaussianComponent diagonal(Vector mean, Vector variances);
  static GaussianComponent full(Vector mean, Matrix covariance);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  CovarianceKind kind() const { return kind_; }

  /// Isotropic variance; only meaningful for CovarianceKind::Isotropic.
  double isotropic_variance() const { return variances_(0); }
  /// Per-axis variances for isotropic/diagonal kinds (isotropic is expanded).
  Vector diagonal_variances() const;
  Matrix covariance() const;

  double log_det() const { return log_det_; }
  double max_eigenvalue() const { return max_eigenvalue_; }
  double trace() const;

  /// (x - mean)ᵀ Σ⁻¹ (x - mean)
  double mahalanobis_sq(const Vector& point) const;
  /// Σ⁻¹ v
  Vector solve(const Vector& v) const;

  double log_density(const Vector& point) const;
  double density(const Vector& point) const;
  /// log of the density at the mean: -d/2 log(2π) - ½ log det Σ.
  double log_peak() const;

  Vector sample(Rng& rng) const;
  GaussianComponent shifted(const Vector& offset) const;

 private:
  GaussianComponent(Vector mean, CovarianceKind kind);

  Vector mean_;
  CovarianceKind kind_;
  Vector variances_;  // isotropic: size 1, diagonal: size d
  Matrix full_;
  Matrix chol_lower_;
  double log_det_ = 0.0;
  double max_eigenvalue_ = 0.0;
};

/// N weighted Gaussian conditional laws sharing one output dimension.
class LatentMixture {
 public:
  LatentMixture(std::vector<double> weights, std::vector<GaussianComponent> components);

  std::size_t size() const { return components_.size(); }
  int dim() const { return components_.front().dim(); }
  const std::vector<double>& weights() const { return weights_; }
  double weight(std::size_t i) const { return weights_.at(i); }
  const GaussianComponent& component(std::size_t i) const { return components_.at(i); }
  const std::vector<GaussianComponent>& components() const { return components_; }

 private:
  std::vector<double> weights_;
  std::vector<GaussianComponent> components_;
};

/// Validates a probability vector (nonnegative, sums to 1 within 1e-9).
void check_probability_vector(std::span<const double> weights, const char* what);

double component_density(const LatentMixture& mixture, std::size_t state, const Vector& point);
double mixture_density(const LatentMixture& mixture, const Vector& point);
double mixture_log_density(const LatentMixture& mixture, const Vector& point);

/// Quadratic-loss minimizer: Σ_i p_i μ_i.
Vector bayes_estimator(const LatentMixture& mixture);

/// E‖estimate - A‖² = Σ_i p_i (‖estimate - μ_i‖² + tr Σ_i).
double quadratic_loss(const LatentMixture& mixture, const Vector& estimate);

/// Two-stage draw: latent state by weight, then the state's Gaussian.
std::pair<std::size_t, Vector> sample_mixture(const LatentMixture& mixture, Rng& rng);

std::size_t sample_index(std::span<const double> weights, Rng& rng);

class SimplexVector {
 public:
  explicit SimplexVector(Vector entries);
  static SimplexVector one_hot(int classes, int index);
  static SimplexVector uniform(int classes);

  int size() const { return static_cast<int>(entries_.size()); }
  const Vector& entries() const { return entries_; }
  double operator[](int t) const { return entries_(t); }

 private:
  Vector entries_;
};

/// -Σ_t q(t) log p(t); 0·log 0 is taken as 0, q(t) > 0 with p(t) = 0 gives +inf.
double cross_entropy(const SimplexVector& target, const SimplexVector& predicted);

/// Expected cross-entropy of `predicted` against weighted targets.
double expected_cross_entropy(std::span<const SimplexVector> targets, std::span<const double> weights,
                              const SimplexVector& predicted);

/// Minimizer of expected cross-entropy: the entrywise weighted mean of the targets.
/// Empty `weights` means equal weights.
SimplexVector cross_entropy_optimal(std::span<const SimplexVector> targets,
                                    std::span<const double> weights = {});

}  // namespace hallu
