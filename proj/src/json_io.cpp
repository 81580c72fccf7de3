#include "hallu/json_io.hpp"

#include <fstream>
#include <sstream>

#include "hallu/errors.hpp"

namespace hallu {

void throw_missing_field(const char* key) { throw InputError(std::string("missing field \"") + key + "\""); }

void throw_bad_field(const char* key) { throw InputError(std::string("field \"") + key + "\" has the wrong type"); }

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v(k));
  return out;
}

Vector vector_from_json(const Json& j, const char* what) {
  if (!j.is_array()) throw InputError(std::string(what) + " must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw InputError(std::string(what) + " must be an array of numbers");
    v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
  }
  return v;
}

Json matrix_to_json(const Matrix& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vector_to_json(m.row(r).transpose()));
  return out;
}

Matrix matrix_from_json(const Json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw InputError(std::string(what) + " must be a nonempty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Vector first = vector_from_json(j[0], what);
  Matrix m(rows, first.size());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vector row = vector_from_json(j[static_cast<std::size_t>(r)], what);
    if (row.size() != first.size()) throw InputError(std::string(what) + " rows differ in length");
    m.row(r) = row.transpose();
  }
  return m;
}

GaussianComponent covariance_from_json(const Json& cov, Vector mean) {
  const auto kind = required<std::string>(cov, "kind");
  if (!cov.contains("value")) throw_missing_field("value");
  const Json& value = cov.at("value");
  if (kind == "iso") {
    if (!value.is_number()) throw InputError("iso covariance value must be a number");
    return GaussianComponent::isotropic(std::move(mean), value.get<double>());
  }
  if (kind == "diag") return GaussianComponent::diagonal(std::move(mean), vector_from_json(value, "diag covariance"));
  if (kind == "full") return GaussianComponent::full(std::move(mean), matrix_from_json(value, "full covariance"));
  throw InputError("unknown covariance kind \"" + kind + "\" (expected iso, diag or full)");
}

Json component_to_json(const GaussianComponent& c) {
  Json cov;
  switch (c.kind()) {
    case CovarianceKind::Isotropic:
      cov = {{"kind", "iso"}, {"value", c.isotropic_variance()}};
      break;
    case CovarianceKind::Diagonal:
      cov = {{"kind", "diag"}, {"value", vector_to_json(c.diagonal_variances())}};
      break;
    case CovarianceKind::Full:
      cov = {{"kind", "full"}, {"value", matrix_to_json(c.covariance())}};
      break;
  }
  return {{"mean", vector_to_json(c.mean())}, {"cov", cov}};
}

GaussianComponent component_from_json(const Json& j) {
  if (!j.is_object()) throw InputError("component must be an object");
  if (!j.contains("mean")) throw_missing_field("mean");
  if (!j.contains("cov")) throw_missing_field("cov");
  return covariance_from_json(j.at("cov"), vector_from_json(j.at("mean"), "mean"));
}

Json mixture_to_json(const LatentMixture& mixture) {
  Json comps = Json::array();
  for (const auto& c : mixture.components()) comps.push_back(component_to_json(c));
  return {{"weights", mixture.weights()}, {"components", comps}};
}

LatentMixture mixture_from_json(const Json& j) {
  if (!j.is_object()) throw InputError("mixture must be a JSON object");
  if (!j.contains("weights")) throw_missing_field("weights");
  if (!j.contains("components")) throw_missing_field("components");
  const Vector w = vector_from_json(j.at("weights"), "weights");
  const Json& comps = j.at("components");
  if (!comps.is_array()) throw InputError("components must be an array");
  std::vector<GaussianComponent> components;
  components.reserve(comps.size());
  for (const auto& c : comps) components.push_back(component_from_json(c));
  return LatentMixture(std::vector<double>(w.data(), w.data() + w.size()), std::move(components));
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InputError("malformed JSON in " + path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace hallu
