#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "hallu/mixture.hpp"

namespace hallu {

using Json = nlohmann::json;

Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j, const char* what);
Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j, const char* what);

/// { "weights": [...], "components": [{ "mean": [...], "cov": {"kind": "iso"|"diag"|"full", "value": ...} }] }
Json mixture_to_json(const LatentMixture& mixture);
LatentMixture mixture_from_json(const Json& j);

Json component_to_json(const GaussianComponent& component);
GaussianComponent component_from_json(const Json& j);
/// Parses only the "cov" object, placing the component at `mean`.
GaussianComponent covariance_from_json(const Json& cov, Vector mean);

Json read_json_file(const std::string& path);
/// Writes `j` with 2-space indentation and a trailing newline.
void write_json_file(const std::string& path, const Json& j);

[[noreturn]] void throw_missing_field(const char* key);
[[noreturn]] void throw_bad_field(const char* key);

/// Reads a required field, converting nlohmann type errors into InputError.
template <class T>
T required(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw_missing_field(key);
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw_bad_field(key);
  }
}

template <class T>
T optional_field(const Json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw_bad_field(key);
  }
}


}  // namespace hallu
