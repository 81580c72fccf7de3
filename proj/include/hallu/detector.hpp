#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hallu/embeddings.hpp"
#include "hallu/json_io.hpp"
#include "hallu/mixture.hpp"

namespace hallu {

/// Per-class stratified split; each class keeps floor(fraction·n) rows (at least
/// one on each side) in the first part.
std::pair<EmbeddingMatrix, EmbeddingMatrix> split(const EmbeddingMatrix& matrix, double train_fraction,
                                                  std::uint64_t seed);

/// Exactly one of `components` (> 0) or `variance_fraction` (in (0, 1]) selects q.
struct PcaTarget {
  int components = 0;
  double variance_fraction = 0.0;
};

/// Row unit-normalization, PCA projection, per-dimension z-score.
struct PreprocessPipeline {
  Vector pca_mean;
  Matrix basis;          // D × q, orthonormal columns
  Vector eigenvalues;    // q leading eigenvalues, nonincreasing
  Vector z_mean;
  Vector z_std;
  double explained_fraction = 0.0;

  int input_dim() const { return static_cast<int>(basis.rows()); }
  int output_dim() const { return static_cast<int>(basis.cols()); }
  /// Rows in, standardized q-dimensional rows out.
  Matrix transform(const Matrix& rows) const;
  /// Inverse of transform up to the row normalization (exact when q = D).
  Matrix reconstruct(const Matrix& projected) const;
};

Matrix normalize_rows(const Matrix& rows);
PreprocessPipeline fit_preprocess(const Matrix& train, const PcaTarget& target);

enum class GmmCovariance { Diagonal, Full };

struct GmmOptions {
  int components = 5;
  int max_iter = 200;
  double tol = 1e-6;
  double reg = 1e-6;
  std::uint64_t seed = 0;
  GmmCovariance covariance = GmmCovariance::Diagonal;
  bool parallel = true;
};

/// One class's density model.
struct ClassGmm {
  std::vector<double> weights;
  std::vector<GaussianComponent> components;
  std::vector<double> loglik_trace;  // mean log-likelihood per EM iteration
  int iterations = 0;
  bool converged = false;
  int reseeds = 0;

  int dim() const { return components.front().dim(); }
  double log_density(const Vector& point) const;
  /// Log-densities of every row (data-parallel kernel).
  Vector log_density_rows(const Matrix& rows, bool parallel = true) const;
};

/// EM on `data` rows with k-means++ seeding. Variances are floored at `reg`.
ClassGmm fit_gmm(const Matrix& data, const GmmOptions& options);

struct ClassThreshold {
  double cutoff = 0.0;
  double percentile = 10.0;
  std::size_t count = 0;
};

/// Lower-interpolation percentile of `values`: sorted[floor(p/100 · (n-1))].
double lower_percentile(std::vector<double> values, double percentile);

ClassThreshold calibrate(const ClassGmm& model, const Matrix& calibration, double percentile, bool parallel = true);

struct DetectionReport {
  std::vector<std::string> classes;
  Matrix log_density;                          // samples × classes
  std::vector<std::vector<std::uint8_t>> in_hdr;  // per sample, per class
  std::vector<std::uint8_t> in_hcdr;
  double hallucination_rate = 0.0;
};

/// A sentinel cutoff that admits every sample.
inline constexpr double kAdmitAll = -std::numeric_limits<double>::infinity();

DetectionReport detect(const std::vector<ClassGmm>& models, const std::vector<ClassThreshold>& thresholds,
                       const PreprocessPipeline& pipeline, const Matrix& raw, std::vector<std::string> classes = {},
                       bool parallel = true);

struct TracePoint {
  int checkpoint = 0;
  double hallucination_rate = 0.0;
  double training_loss = std::numeric_limits<double>::quiet_NaN();
};

/// CSV `checkpoint,hallucination_rate,training_loss` in checkpoint order; no smoothing.
std::string hallucination_rate_trace(std::vector<TracePoint> points);

/// Everything a fitted detector persists.
struct DetectorBundle {
  PreprocessPipeline pipeline;
  std::vector<std::string> classes;
  std::vector<ClassGmm> models;
  std::vector<ClassThreshold> thresholds;
  Json manifest;
};

Json pipeline_to_json(const PreprocessPipeline& p);
PreprocessPipeline pipeline_from_json(const Json& j);
Json models_to_json(const std::vector<std::string>& classes, const std::vector<ClassGmm>& models);
std::pair<std::vector<std::string>, std::vector<ClassGmm>> models_from_json(const Json& j);
Json thresholds_to_json(const std::vector<std::string>& classes, const std::vector<ClassThreshold>& t);
std::vector<ClassThreshold> thresholds_from_json(const Json& j);
Json report_to_json(const DetectionReport& report);

/// Writes pipeline.json, model.json, thresholds.json and manifest.json into `dir`.
void write_bundle(const std::string& dir, const DetectorBundle& bundle);
/// Throws MissingArtifactError naming the first absent piece.
DetectorBundle read_bundle(const std::string& dir, bool require_thresholds = true);

}  // namespace hallu
