#include "hallu/kernels.hpp"

#include <omp.h>

namespace hallu::kernels {

void set_workers(int n) {
  if (n > 0) omp_set_num_threads(n);
}

int max_workers() { return omp_get_max_threads(); }

namespace {

void fill_row(std::span<const GaussianComponent> components, const Vector& log_weights, const Matrix& data,
              Eigen::Index s, Matrix& out) {
  const Vector x = data.row(s).transpose();
  for (std::size_t k = 0; k < components.size(); ++k) {
    out(s, static_cast<Eigen::Index>(k)) =
        log_weights(static_cast<Eigen::Index>(k)) + components[k].log_density(x);
  }
}

}  // namespace

namespace serial {

std::vector<double> evaluate_grid(const DensityFn& density, const Grid& grid) {
  std::vector<double> values(grid.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = density(grid.center(i));
  return values;
}

Matrix weighted_log_densities(std::span<const GaussianComponent> components, const Vector& log_weights,
                              const Matrix& data) {
  Matrix out(data.rows(), static_cast<Eigen::Index>(components.size()));
  for (Eigen::Index s = 0; s < data.rows(); ++s) fill_row(components, log_weights, data, s, out);
  return out;
}

}  // namespace serial

namespace parallel {

std::vector<double> evaluate_grid(const DensityFn& density, const Grid& grid) {
  std::vector<double> values(grid.size());
  const auto n = static_cast<std::ptrdiff_t>(values.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    values[static_cast<std::size_t>(i)] = density(grid.center(static_cast<std::size_t>(i)));
  }
  return values;
}

Matrix weighted_log_densities(std::span<const GaussianComponent> components, const Vector& log_weights,
                              const Matrix& data) {
  Matrix out(data.rows(), static_cast<Eigen::Index>(components.size()));
#pragma omp parallel for schedule(static)
  for (Eigen::Index s = 0; s < data.rows(); ++s) fill_row(components, log_weights, data, s, out);
  return out;
}

}  // namespace parallel

}  // namespace hallu::kernels
