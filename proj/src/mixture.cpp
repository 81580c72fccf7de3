#include "hallu/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include "hallu/errors.hpp"

namespace hallu {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2π)

void check_mean(const Vector& mean) {
  if (mean.size() == 0) throw InputError("component mean must be nonempty");
  if (!mean.allFinite()) throw InputError("component mean has non-finite entries");
}

void check_point(const GaussianComponent& c, const Vector& point) {
  if (point.size() != c.dim()) {
    throw InputError("dimension mismatch: point has " + std::to_string(point.size()) +
                     " entries, component has dimension " + std::to_string(c.dim()));
  }
}

}  // namespace

GaussianComponent::GaussianComponent(Vector mean, CovarianceKind kind)
    : mean_(std::move(mean)), kind_(kind) {}

GaussianComponent GaussianComponent::isotropic(Vector mean, double variance) {
  check_mean(mean);
  if (!(variance >= kMinVariance) || !std::isfinite(variance)) {
    std::ostringstream msg;
    msg << "isotropic variance must be finite and >= 1e-12, got " << variance;
    throw ModelError(msg.str());
  }
  GaussianComponent c(std::move(mean), CovarianceKind::Isotropic);
  c.variances_ = Vector::Constant(1, variance);
  c.log_det_ = c.dim() * std::log(variance);
  c.max_eigenvalue_ = variance;
  return c;
}

GaussianComponent GaussianComponent::diagonal(Vector mean, Vector variances) {
  check_mean(mean);
  if (variances.size() != mean.size()) {
    throw InputError("diagonal covariance length " + std::to_string(variances.size()) +
                     " does not match mean length " + std::to_string(mean.size()));
  }
  for (Eigen::Index k = 0; k < variances.size(); ++k) {
    if (!(variances(k) >= kMinVariance) || !std::isfinite(variances(k))) {
      throw ModelError("diagonal variance entry " + std::to_string(k) + " must be finite and >= 1e-12");
    }
  }
  GaussianComponent c(std::move(mean), CovarianceKind::Diagonal);
  c.log_det_ = variances.array().log().sum();
  c.max_eigenvalue_ = variances.maxCoeff();
  c.variances_ = std::move(variances);
  return c;
}

GaussianComponent GaussianComponent::full(Vector mean, Matrix covariance) {
  check_mean(mean);
  const auto d = mean.size();
  if (covariance.rows() != d || covariance.cols() != d) {
    throw InputError("full covariance must be " + std::to_string(d) + "x" + std::to_string(d));
  }
  if (!covariance.allFinite()) throw ModelError("full covariance has non-finite entries");
  const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw ModelError("full covariance is not symmetric");
  }
  Matrix sym = 0.5 * (covariance + covariance.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < kMinVariance) {
    throw ModelError("full covariance is not positive definite (min eigenvalue below 1e-12)");
  }
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() != Eigen::Success) throw ModelError("Cholesky factorization of covariance failed");

  GaussianComponent c(std::move(mean), CovarianceKind::Full);
  c.chol_lower_ = llt.matrixL();
  c.log_det_ = 2.0 * c.chol_lower_.diagonal().array().log().sum();
  c.max_eigenvalue_ = eig.eigenvalues().maxCoeff();
  c.full_ = std::move(sym);
  return c;
}

Vector GaussianComponent::diagonal_variances() const {
  switch (kind_) {
    case CovarianceKind::Isotropic:
      return Vector::Constant(dim(), variances_(0));
    case CovarianceKind::Diagonal:
      return variances_;
    case CovarianceKind::Full:
      return full_.diagonal();
  }
  return {};
}

Matrix GaussianComponent::covariance() const {
  if (kind_ == CovarianceKind::Full) return full_;
  return diagonal_variances().asDiagonal();
}

double GaussianComponent::trace() const {
  switch (kind_) {
    case CovarianceKind::Isotropic:
      return dim() * variances_(0);
    case CovarianceKind::Diagonal:
      return variances_.sum();
    case CovarianceKind::Full:
      return full_.trace();
  }
  return 0.0;
}

double GaussianComponent::mahalanobis_sq(const Vector& point) const {
  check_point(*this, point);
  const Vector diff = point - mean_;
  switch (kind_) {
    case CovarianceKind::Isotropic:
      return diff.squaredNorm() / variances_(0);
    case CovarianceKind::Diagonal:
      return (diff.array().square() / variances_.array()).sum();
    case CovarianceKind::Full: {
      const Vector w = chol_lower_.triangularView<Eigen::Lower>().solve(diff);
      return w.squaredNorm();
    }
  }
  return 0.0;
}

Vector GaussianComponent::solve(const Vector& v) const {
  check_point(*this, v);
  switch (kind_) {
    case CovarianceKind::Isotropic:
      return v / variances_(0);
    case CovarianceKind::Diagonal:
      return (v.array() / variances_.array()).matrix();
    case CovarianceKind::Full: {
      const Vector w = chol_lower_.triangularView<Eigen::Lower>().solve(v);
      return chol_lower_.transpose().triangularView<Eigen::Upper>().solve(w);
    }
  }
  return {};
}

double GaussianComponent::log_peak() const { return -0.5 * (dim() * kLog2Pi + log_det_); }

double GaussianComponent::log_density(const Vector& point) const {
  return log_peak() - 0.5 * mahalanobis_sq(point);
}

double GaussianComponent::density(const Vector& point) const { return std::exp(log_density(point)); }

Vector GaussianComponent::sample(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(dim());
  for (int k = 0; k < dim(); ++k) z(k) = normal(rng);
  switch (kind_) {
    case CovarianceKind::Isotropic:
      return mean_ + std::sqrt(variances_(0)) * z;
    case CovarianceKind::Diagonal:
      return mean_ + (variances_.array().sqrt() * z.array()).matrix();
    case CovarianceKind::Full:
      return mean_ + chol_lower_ * z;
  }
  return mean_;
}

GaussianComponent GaussianComponent::shifted(const Vector& offset) const {
  check_point(*this, offset);
  GaussianComponent copy = *this;
  copy.mean_ += offset;
  return copy;
}

void check_probability_vector(std::span<const double> weights, const char* what) {
  if (weights.empty()) throw InputError(std::string(what) + " must be nonempty");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InputError(std::string(what) + " must be finite and nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InputError(std::string(what) + " must sum to 1 (got " + std::to_string(total) + ")");
  }
}

LatentMixture::LatentMixture(std::vector<double> weights, std::vector<GaussianComponent> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  if (components_.empty()) throw InputError("mixture needs at least one component");
  if (weights_.size() != components_.size()) {
    throw InputError("mixture has " + std::to_string(weights_.size()) + " weights for " +
                     std::to_string(components_.size()) + " components");
  }
  check_probability_vector(weights_, "mixture weights");
  const int d = components_.front().dim();
  for (const auto& c : components_) {
    if (c.dim() != d) throw InputError("mixture components must share one dimension");
  }
}

double component_density(const LatentMixture& mixture, std::size_t state, const Vector& point) {
  if (state >= mixture.size()) throw InputError("state index out of range");
  return mixture.component(state).density(point);
}

double mixture_density(const LatentMixture& mixture, const Vector& point) {
  double total = 0.0;
  for (std::size_t i = 0; i < mixture.size(); ++i) {
    total += mixture.weight(i) * mixture.component(i).density(point);
  }
  return total;
}

double mixture_log_density(const LatentMixture& mixture, const Vector& point) {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(mixture.size());
  for (std::size_t i = 0; i < mixture.size(); ++i) {
    terms[i] = std::log(mixture.weight(i)) + mixture.component(i).log_density(point);
    best = std::max(best, terms[i]);
  }
  if (!std::isfinite(best)) return best;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - best);
  return best + std::log(acc);
}

Vector bayes_estimator(const LatentMixture& mixture) {
  Vector out = Vector::Zero(mixture.dim());
  for (std::size_t i = 0; i < mixture.size(); ++i) out += mixture.weight(i) * mixture.component(i).mean();
  return out;
}

double quadratic_loss(const LatentMixture& mixture, const Vector& estimate) {
  if (estimate.size() != mixture.dim()) throw InputError("estimate dimension does not match mixture");
  double loss = 0.0;
  for (std::size_t i = 0; i < mixture.size(); ++i) {
    const auto& c = mixture.component(i);
    loss += mixture.weight(i) * ((estimate - c.mean()).squaredNorm() + c.trace());
  }
  return loss;
}

std::size_t sample_index(std::span<const double> weights, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // rounding: fall back to the last state with positive weight
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return weights.size() - 1;
}

std::pair<std::size_t, Vector> sample_mixture(const LatentMixture& mixture, Rng& rng) {
  const std::size_t state = sample_index(mixture.weights(), rng);
  return {state, mixture.component(state).sample(rng)};
}

SimplexVector::SimplexVector(Vector entries) : entries_(std::move(entries)) {
  if (entries_.size() == 0) throw InputError("simplex vector must be nonempty");
  if (!entries_.allFinite() || entries_.minCoeff() < 0.0) {
    throw InputError("simplex vector entries must be finite and nonnegative");
  }
  if (std::abs(entries_.sum() - 1.0) > 1e-9) throw InputError("simplex vector must sum to 1");
}

SimplexVector SimplexVector::one_hot(int classes, int index) {
  if (index < 0 || index >= classes) throw InputError("one-hot index out of range");
  Vector e = Vector::Zero(classes);
  e(index) = 1.0;
  return SimplexVector(std::move(e));
}

SimplexVector SimplexVector::uniform(int classes) {
  if (classes <= 0) throw InputError("class count must be positive");
  return SimplexVector(Vector::Constant(classes, 1.0 / classes));
}

double cross_entropy(const SimplexVector& target, const SimplexVector& predicted) {
  if (target.size() != predicted.size()) throw InputError("simplex vectors differ in class count");
  double loss = 0.0;
  for (int t = 0; t < target.size(); ++t) {
    if (target[t] == 0.0) continue;
    if (predicted[t] == 0.0) return std::numeric_limits<double>::infinity();
    loss -= target[t] * std::log(predicted[t]);
  }
  return loss;
}

double expected_cross_entropy(std::span<const SimplexVector> targets, std::span<const double> weights,
                              const SimplexVector& predicted) {
  if (targets.empty()) throw InputError("target set is empty");
  const bool equal = weights.empty();
  if (!equal && weights.size() != targets.size()) throw InputError("target weights length mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const double w = equal ? 1.0 / static_cast<double>(targets.size()) : weights[k];
    if (w == 0.0) continue;
    total += w * cross_entropy(targets[k], predicted);
  }
  return total;
}

SimplexVector cross_entropy_optimal(std::span<const SimplexVector> targets, std::span<const double> weights) {
  if (targets.empty()) throw InputError("target set is empty");
  const bool equal = weights.empty();
  if (!equal) {
    if (weights.size() != targets.size()) throw InputError("target weights length mismatch");
    check_probability_vector(weights, "target weights");
  }
  const int classes = targets.front().size();
  Vector mean = Vector::Zero(classes);
  for (std::size_t k = 0; k < targets.size(); ++k) {
    if (targets[k].size() != classes) throw InputError("simplex vectors differ in class count");
    const double w = equal ? 1.0 / static_cast<double>(targets.size()) : weights[k];
    mean += w * targets[k].entries();
  }
  // renormalize away accumulated rounding so the result stays on the simplex
  mean /= mean.sum();
  return SimplexVector(std::move(mean));
}

}  // namespace hallu
