#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "hallu/mixture.hpp"

namespace support {

using hallu::Matrix;
using hallu::Vector;

inline Vector random_vector(std::mt19937_64& rng, int d, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = n(rng);
  return v;
}

/// A random covariance with eigenvalues in [lo, hi].
inline Matrix random_spd(std::mt19937_64& rng, int d, double lo = 0.2, double hi = 3.0) {
  const Matrix q = Eigen::HouseholderQR<Matrix>(Matrix::NullaryExpr(d, d, [&] {
                     return std::normal_distribution<double>(0.0, 1.0)(rng);
                   })).householderQ();
  std::uniform_real_distribution<double> u(lo, hi);
  Vector ev(d);
  for (int i = 0; i < d; ++i) ev(i) = u(rng);
  return q * ev.asDiagonal() * q.transpose();
}

inline std::vector<double> random_weights(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::vector<double> w(n);
  double s = 0.0;
  for (auto& x : w) s += (x = u(rng));
  for (auto& x : w) x /= s;
  return w;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("hallu-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace support
