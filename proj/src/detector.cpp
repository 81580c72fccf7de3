#include "hallu/detector.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "hallu/errors.hpp"
#include "hallu/kernels.hpp"
#include "hallu/rng.hpp"

namespace hallu {

namespace {

Vector row_logsumexp(const Matrix& terms) {
  Vector out(terms.rows());
  for (Eigen::Index s = 0; s < terms.rows(); ++s) {
    const double best = terms.row(s).maxCoeff();
    if (!std::isfinite(best)) {
      out(s) = best;
      continue;
    }
    out(s) = best + std::log((terms.row(s).array() - best).exp().sum());
  }
  return out;
}

Vector log_weights_of(const std::vector<double>& w) {
  Vector lw(static_cast<Eigen::Index>(w.size()));
  for (std::size_t k = 0; k < w.size(); ++k) lw(static_cast<Eigen::Index>(k)) = std::log(w[k]);
  return lw;
}

GaussianComponent make_component(const Vector& mean, const Matrix& scatter, GmmCovariance kind, double reg) {
  if (kind == GmmCovariance::Diagonal) {
    return GaussianComponent::diagonal(mean, scatter.diagonal().array() + reg);
  }
  Matrix cov = scatter;
  cov.diagonal().array() += reg;
  return GaussianComponent::full(mean, 0.5 * (cov + cov.transpose()));
}

/// k-means++ seeding: first centre uniform, then proportional to squared distance.
std::vector<Vector> seed_centres(const Matrix& data, int k, Rng& rng) {
  const auto n = data.rows();
  std::vector<Vector> centres;
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centres.push_back(data.row(pick(rng)).transpose());
  Vector dist2 = (data.rowwise() - centres.back().transpose()).rowwise().squaredNorm();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (static_cast<int>(centres.size()) < k) {
    const double total = dist2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      const double u = unit(rng) * total;
      double acc = 0.0;
      chosen = n - 1;
      for (Eigen::Index s = 0; s < n; ++s) {
        acc += dist2(s);
        if (u < acc) {
          chosen = s;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    centres.push_back(data.row(chosen).transpose());
    dist2 = dist2.cwiseMin((data.rowwise() - centres.back().transpose()).rowwise().squaredNorm());
  }
  return centres;
}

}  // namespace

std::pair<EmbeddingMatrix, EmbeddingMatrix> split(const EmbeddingMatrix& matrix, double train_fraction,
                                                  std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InputError("train fraction must lie in (0, 1)");
  matrix.validate();
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  for (int c = 0; c < static_cast<int>(matrix.classes.size()); ++c) {
    std::vector<std::size_t> rows = matrix.rows_of(c);
    if (rows.empty()) continue;
    if (rows.size() < 2) {
      throw InputError("class \"" + matrix.classes[static_cast<std::size_t>(c)] + "\" has fewer than 2 samples");
    }
    Rng rng = make_rng(seed, "split", static_cast<std::uint64_t>(c));
    std::shuffle(rows.begin(), rows.end(), rng);
    auto keep = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(rows.size())));
    keep = std::clamp<std::size_t>(keep, 1, rows.size() - 1);
    first.insert(first.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(keep));
    second.insert(second.end(), rows.begin() + static_cast<std::ptrdiff_t>(keep), rows.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {matrix.select(first), matrix.select(second)};
}

Matrix normalize_rows(const Matrix& rows) {
  Matrix out = rows;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double norm = out.row(r).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) throw InputError("cannot unit-normalize a zero or non-finite row");
    out.row(r) /= norm;
  }
  return out;
}

PreprocessPipeline fit_preprocess(const Matrix& train, const PcaTarget& target) {
  if (!train.allFinite()) throw InputError("training embeddings have non-finite entries");
  const auto s = train.rows();
  const auto d = train.cols();
  if (s < 2 || d < 1) throw InputError("PCA needs at least two samples");
  const Matrix x = normalize_rows(train);

  PreprocessPipeline p;
  p.pca_mean = x.colwise().mean().transpose();
  const Matrix centred = x.rowwise() - p.pca_mean.transpose();
  const Matrix cov = (centred.transpose() * centred) / static_cast<double>(s - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw ModelError("PCA eigendecomposition failed");
  const Vector values = eig.eigenvalues().reverse();
  const Matrix vectors = eig.eigenvectors().rowwise().reverse();

  const double total = std::max(values.sum(), 0.0);
  const double floor = 1e-10 * std::max(values(0), 1e-300);
  int rank = 0;
  for (Eigen::Index k = 0; k < values.size(); ++k) rank += values(k) > floor ? 1 : 0;

  const int limit = static_cast<int>(std::min<Eigen::Index>(s - 1, d));
  int q = target.components;
  if (q <= 0) {
    if (!(target.variance_fraction > 0.0 && target.variance_fraction <= 1.0)) {
      throw InputError("PCA target needs components > 0 or a variance fraction in (0, 1]");
    }
    double acc = 0.0;
    q = 0;
    while (q < values.size()) {
      acc += std::max(values(q), 0.0);
      ++q;
      if (acc >= target.variance_fraction * total * (1.0 - 1e-12)) break;
    }
    q = std::min(q, std::min(limit, rank));
  }
  if (q > limit) {
    throw InputError("PCA components " + std::to_string(q) + " exceed min(samples - 1, dim) = " + std::to_string(limit));
  }
  if (q > rank) {
    throw InputError("data rank is " + std::to_string(rank) + "; cannot extract " + std::to_string(q) + " components");
  }

  p.eigenvalues = values.head(q);
  p.basis = vectors.leftCols(q);
  for (int k = 0; k < q; ++k) {
    Eigen::Index arg = 0;
    p.basis.col(k).cwiseAbs().maxCoeff(&arg);
    if (p.basis(arg, k) < 0.0) p.basis.col(k) *= -1.0;
  }
  p.explained_fraction = total > 0.0 ? p.eigenvalues.sum() / total : 1.0;

  const Matrix projected = centred * p.basis;
  p.z_mean = projected.colwise().mean().transpose();
  const Matrix dev = projected.rowwise() - p.z_mean.transpose();
  p.z_std = (dev.array().square().colwise().sum() / static_cast<double>(s)).sqrt().transpose();
  if (p.z_std.minCoeff() <= 0.0) throw ModelError("a projected dimension has zero spread");
  return p;
}

Matrix PreprocessPipeline::transform(const Matrix& rows) const {
  if (rows.cols() != input_dim()) {
    throw InputError("embedding dimension " + std::to_string(rows.cols()) + " does not match pipeline input " +
                     std::to_string(input_dim()));
  }
  const Matrix projected = (normalize_rows(rows).rowwise() - pca_mean.transpose()) * basis;
  return (projected.rowwise() - z_mean.transpose()).array().rowwise() / z_std.transpose().array();
}

Matrix PreprocessPipeline::reconstruct(const Matrix& projected) const {
  const Matrix unscaled = (projected.array().rowwise() * z_std.transpose().array()).matrix().rowwise() + z_mean.transpose();
  return (unscaled * basis.transpose()).rowwise() + pca_mean.transpose();
}

double ClassGmm::log_density(const Vector& point) const {
  if (point.size() != dim()) throw InputError("point dimension does not match the class model");
  double best = -HUGE_VAL;
  std::vector<double> terms(components.size());
  for (std::size_t k = 0; k < components.size(); ++k) {
    terms[k] = std::log(weights[k]) + components[k].log_density(point);
    best = std::max(best, terms[k]);
  }
  if (!std::isfinite(best)) return best;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - best);
  return best + std::log(acc);
}

Vector ClassGmm::log_density_rows(const Matrix& rows, bool parallel) const {
  if (rows.cols() != dim()) throw InputError("row dimension does not match the class model");
  const Vector lw = log_weights_of(weights);
  const Matrix terms = parallel ? kernels::parallel::weighted_log_densities(components, lw, rows)
                                : kernels::serial::weighted_log_densities(components, lw, rows);
  return row_logsumexp(terms);
}

ClassGmm fit_gmm(const Matrix& data, const GmmOptions& options) {
  const int k = options.components;
  if (k < 1) throw InputError("GMM needs at least one component");
  if (data.rows() < k) {
    throw InputError("class has " + std::to_string(data.rows()) + " samples, fewer than K = " + std::to_string(k));
  }
  if (!data.allFinite()) throw InputError("GMM data has non-finite entries");
  if (!(options.reg > 0.0)) throw InputError("regularization must be positive");
  const auto n = data.rows();
  const auto q = data.cols();
  const double nd = static_cast<double>(n);

  const Vector global_mean = data.colwise().mean().transpose();
  const Matrix global_dev = data.rowwise() - global_mean.transpose();
  const Matrix global_scatter = (global_dev.transpose() * global_dev) / nd;

  Rng rng = make_rng(options.seed, "gmm-init");
  ClassGmm model;
  for (const auto& c : seed_centres(data, k, rng)) {
    model.components.push_back(make_component(c, global_scatter, options.covariance, options.reg));
    model.weights.push_back(1.0 / k);
  }

  Matrix resp(n, k);
  for (int iter = 0;; ++iter) {
    const Vector lw = log_weights_of(model.weights);
    const Matrix terms = options.parallel ? kernels::parallel::weighted_log_densities(model.components, lw, data)
                                          : kernels::serial::weighted_log_densities(model.components, lw, data);
    const Vector ll = row_logsumexp(terms);
    const double mean_ll = ll.mean();
    if (!std::isfinite(mean_ll)) throw ModelError("GMM log-likelihood is not finite");
    if (!model.loglik_trace.empty()) {
      const double prev = model.loglik_trace.back();
      model.loglik_trace.push_back(mean_ll);
      if (mean_ll - prev <= options.tol * std::abs(prev)) {
        model.converged = true;
        break;
      }
    } else {
      model.loglik_trace.push_back(mean_ll);
    }
    if (iter >= options.max_iter) break;

    resp = (terms.colwise() - ll).array().exp();
    const Vector nk = resp.colwise().sum().transpose();
    bool reseeded = false;
    for (int c = 0; c < k; ++c) {
      if (nk(c) > 1e-8 * nd) {
        const Vector mean = (resp.col(c).transpose() * data).transpose() / nk(c);
        const Matrix dev = data.rowwise() - mean.transpose();
        Matrix scatter;
        if (options.covariance == GmmCovariance::Diagonal) {
          scatter = Matrix::Zero(q, q);
          scatter.diagonal() = (dev.array().square().colwise() * resp.col(c).array()).colwise().sum().transpose() / nk(c);
        } else {
          scatter = (dev.transpose() * resp.col(c).asDiagonal() * dev) / nk(c);
        }
        model.components[static_cast<std::size_t>(c)] = make_component(mean, scatter, options.covariance, options.reg);
        model.weights[static_cast<std::size_t>(c)] = nk(c) / nd;
        continue;
      }
      if (model.reseeds >= 1) throw ModelError("GMM component emptied again after re-seeding");
      Eigen::Index worst = 0;
      ll.minCoeff(&worst);
      model.components[static_cast<std::size_t>(c)] =
          make_component(data.row(worst).transpose(), global_scatter, options.covariance, options.reg);
      model.weights[static_cast<std::size_t>(c)] = 1.0 / nd;
      ++model.reseeds;
      reseeded = true;
    }
    if (reseeded) {
      const double total = std::accumulate(model.weights.begin(), model.weights.end(), 0.0);
      for (auto& w : model.weights) w /= total;
    }
    model.iterations = iter + 1;
  }
  return model;
}

double lower_percentile(std::vector<double> values, double percentile) {
  if (values.empty()) throw InputError("calibration set is empty");
  if (!(percentile >= 0.0 && percentile < 100.0)) throw InputError("percentile must lie in [0, 100)");
  std::sort(values.begin(), values.end());
  const auto idx = static_cast<std::size_t>(std::floor(percentile / 100.0 * static_cast<double>(values.size() - 1)));
  return values[idx];
}

ClassThreshold calibrate(const ClassGmm& model, const Matrix& calibration, double percentile, bool parallel) {
  if (calibration.rows() == 0) throw InputError("calibration set is empty");
  const Vector ld = model.log_density_rows(calibration, parallel);
  ClassThreshold t;
  t.cutoff = lower_percentile(std::vector<double>(ld.data(), ld.data() + ld.size()), percentile);
  t.percentile = percentile;
  t.count = static_cast<std::size_t>(calibration.rows());
  return t;
}

DetectionReport detect(const std::vector<ClassGmm>& models, const std::vector<ClassThreshold>& thresholds,
                       const PreprocessPipeline& pipeline, const Matrix& raw, std::vector<std::string> classes,
                       bool parallel) {
  if (models.empty()) throw InputError("no class models supplied");
  if (models.size() != thresholds.size()) throw InputError("need one threshold per class model");
  if (!raw.allFinite()) throw InputError("embeddings to score have non-finite entries");
  for (const auto& m : models) {
    if (m.dim() != pipeline.output_dim()) throw InputError("class model dimension does not match the pipeline");
  }
  if (classes.empty()) {
    for (std::size_t c = 0; c < models.size(); ++c) classes.push_back("class" + std::to_string(c));
  }
  const Matrix z = pipeline.transform(raw);
  DetectionReport r;
  r.classes = std::move(classes);
  r.log_density.resize(z.rows(), static_cast<Eigen::Index>(models.size()));
  for (std::size_t c = 0; c < models.size(); ++c) {
    r.log_density.col(static_cast<Eigen::Index>(c)) = models[c].log_density_rows(z, parallel);
  }
  r.in_hdr.assign(static_cast<std::size_t>(z.rows()), std::vector<std::uint8_t>(models.size(), 0));
  r.in_hcdr.assign(static_cast<std::size_t>(z.rows()), 0);
  std::size_t outside = 0;
  for (Eigen::Index s = 0; s < z.rows(); ++s) {
    auto& flags = r.in_hdr[static_cast<std::size_t>(s)];
    for (std::size_t c = 0; c < models.size(); ++c) {
      flags[c] = r.log_density(s, static_cast<Eigen::Index>(c)) >= thresholds[c].cutoff ? 1 : 0;
    }
    const bool inside = std::find(flags.begin(), flags.end(), std::uint8_t{1}) != flags.end();
    r.in_hcdr[static_cast<std::size_t>(s)] = inside ? 1 : 0;
    outside += inside ? 0 : 1;
  }
  r.hallucination_rate = z.rows() > 0 ? static_cast<double>(outside) / static_cast<double>(z.rows()) : 0.0;
  return r;
}

std::string hallucination_rate_trace(std::vector<TracePoint> points) {
  std::stable_sort(points.begin(), points.end(),
                   [](const TracePoint& a, const TracePoint& b) { return a.checkpoint < b.checkpoint; });
  std::ostringstream out;
  out.precision(17);
  out << "checkpoint,hallucination_rate,training_loss\n";
  for (const auto& p : points) {
    out << p.checkpoint << ',' << p.hallucination_rate << ',';
    if (std::isfinite(p.training_loss)) out << p.training_loss;
    out << '\n';
  }
  return out.str();
}

Json pipeline_to_json(const PreprocessPipeline& p) {
  return {{"schema", "v1"},
          {"pca_mean", vector_to_json(p.pca_mean)},
          {"basis", matrix_to_json(p.basis)},
          {"eigenvalues", vector_to_json(p.eigenvalues)},
          {"z_mean", vector_to_json(p.z_mean)},
          {"z_std", vector_to_json(p.z_std)},
          {"explained_fraction", p.explained_fraction}};
}

PreprocessPipeline pipeline_from_json(const Json& j) {
  PreprocessPipeline p;
  p.pca_mean = vector_from_json(j.at("pca_mean"), "pca_mean");
  p.basis = matrix_from_json(j.at("basis"), "basis");
  p.eigenvalues = vector_from_json(j.at("eigenvalues"), "eigenvalues");
  p.z_mean = vector_from_json(j.at("z_mean"), "z_mean");
  p.z_std = vector_from_json(j.at("z_std"), "z_std");
  p.explained_fraction = j.value("explained_fraction", 0.0);
  if (p.basis.rows() != p.pca_mean.size() || p.basis.cols() != p.z_std.size() || p.z_mean.size() != p.z_std.size()) {
    throw InputError("pipeline.json has inconsistent shapes");
  }
  return p;
}

Json models_to_json(const std::vector<std::string>& classes, const std::vector<ClassGmm>& models) {
  Json arr = Json::array();
  for (std::size_t c = 0; c < models.size(); ++c) {
    Json comps = Json::array();
    for (const auto& comp : models[c].components) comps.push_back(component_to_json(comp));
    arr.push_back({{"class", classes[c]},
                   {"weights", models[c].weights},
                   {"components", comps},
                   {"iterations", models[c].iterations},
                   {"converged", models[c].converged},
                   {"reseeds", models[c].reseeds},
                   {"loglik_trace", models[c].loglik_trace}});
  }
  return {{"schema", "v1"}, {"classes", arr}};
}

std::pair<std::vector<std::string>, std::vector<ClassGmm>> models_from_json(const Json& j) {
  std::vector<std::string> classes;
  std::vector<ClassGmm> models;
  for (const auto& entry : j.at("classes")) {
    classes.push_back(entry.at("class").get<std::string>());
    ClassGmm m;
    m.weights = entry.at("weights").get<std::vector<double>>();
    for (const auto& comp : entry.at("components")) m.components.push_back(component_from_json(comp));
    if (m.components.empty() || m.components.size() != m.weights.size()) throw InputError("model.json entry malformed");
    m.iterations = entry.value("iterations", 0);
    m.converged = entry.value("converged", false);
    m.reseeds = entry.value("reseeds", 0);
    m.loglik_trace = entry.value("loglik_trace", std::vector<double>{});
    models.push_back(std::move(m));
  }
  return {classes, models};
}

Json thresholds_to_json(const std::vector<std::string>& classes, const std::vector<ClassThreshold>& t) {
  Json arr = Json::array();
  for (std::size_t c = 0; c < t.size(); ++c) {
    Json cutoff = std::isfinite(t[c].cutoff) ? Json(t[c].cutoff) : Json(nullptr);
    arr.push_back({{"class", classes[c]}, {"cutoff", cutoff}, {"percentile", t[c].percentile}, {"count", t[c].count}});
  }
  return {{"schema", "v1"}, {"classes", arr}};
}

std::vector<ClassThreshold> thresholds_from_json(const Json& j) {
  std::vector<ClassThreshold> out;
  for (const auto& entry : j.at("classes")) {
    ClassThreshold t;
    t.cutoff = entry.at("cutoff").is_null() ? kAdmitAll : entry.at("cutoff").get<double>();
    t.percentile = entry.at("percentile").get<double>();
    t.count = entry.at("count").get<std::size_t>();
    out.push_back(t);
  }
  return out;
}

Json report_to_json(const DetectionReport& report) {
  Json samples = Json::array();
  for (std::size_t s = 0; s < report.in_hcdr.size(); ++s) {
    std::vector<double> ld;
    for (Eigen::Index c = 0; c < report.log_density.cols(); ++c) ld.push_back(report.log_density(static_cast<Eigen::Index>(s), c));
    std::vector<int> hdr(report.in_hdr[s].begin(), report.in_hdr[s].end());
    samples.push_back({{"log_density", ld}, {"in_hdr", hdr}, {"in_hcdr", report.in_hcdr[s] != 0}});
  }
  return {{"classes", report.classes}, {"hallucination_rate", report.hallucination_rate}, {"samples", samples}};
}

void write_bundle(const std::string& dir, const DetectorBundle& bundle) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  write_json_file((root / "pipeline.json").string(), pipeline_to_json(bundle.pipeline));
  write_json_file((root / "model.json").string(), models_to_json(bundle.classes, bundle.models));
  if (!bundle.thresholds.empty()) {
    write_json_file((root / "thresholds.json").string(), thresholds_to_json(bundle.classes, bundle.thresholds));
  }
  write_json_file((root / "manifest.json").string(), bundle.manifest);
}

DetectorBundle read_bundle(const std::string& dir, bool require_thresholds) {
  const std::filesystem::path root(dir);
  auto need = [&](const char* name) {
    const auto path = root / name;
    if (!std::filesystem::exists(path)) throw MissingArtifactError("bundle is missing " + path.string());
    return read_json_file(path.string());
  };
  DetectorBundle b;
  try {
    b.pipeline = pipeline_from_json(need("pipeline.json"));
    std::tie(b.classes, b.models) = models_from_json(need("model.json"));
    if (require_thresholds || std::filesystem::exists(root / "thresholds.json")) {
      b.thresholds = thresholds_from_json(need("thresholds.json"));
    }
    b.manifest = need("manifest.json");
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed bundle: ") + e.what());
  }
  return b;
}

}  // namespace hallu
