#pragma once

// Data-parallel inner loops. Every kernel has a plain serial reference in
// `serial::` and an OpenMP version in `parallel::` with identical results;
// tests compare the two and bench/ times them.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hallu/grid.hpp"
#include "hallu/mixture.hpp"
#include "hallu/rng.hpp"

namespace hallu::kernels {

using DensityFn = std::function<double(const Vector&)>;

/// Trials per Monte-Carlo partition. Each partition owns a generator derived from
/// (seed, partition index), so counts do not depend on the worker count.
inline constexpr std::size_t kTrialsPerPartition = 1024;

template <std::size_t Events>
using EventCounts = std::array<std::uint64_t, Events>;

/// A trial draws from the generator and reports which events occurred.
template <std::size_t Events>
using TrialFn = std::function<std::array<bool, Events>(Rng&)>;

/// Sets the OpenMP worker count; n <= 0 keeps the runtime default.
void set_workers(int n);
int max_workers();

namespace serial {

std::vector<double> evaluate_grid(const DensityFn& density, const Grid& grid);

/// S×K matrix of log w_k + log N_k(row_s). Rows of `data` are samples.
Matrix weighted_log_densities(std::span<const GaussianComponent> components, const Vector& log_weights,
                              const Matrix& data);

template <std::size_t Events>
EventCounts<Events> partitioned_count(std::size_t trials, std::uint64_t seed, const TrialFn<Events>& trial) {
  EventCounts<Events> counts{};
  const std::size_t partitions = (trials + kTrialsPerPartition - 1) / kTrialsPerPartition;
  for (std::size_t p = 0; p < partitions; ++p) {
    Rng rng = make_rng(seed, "mc-partition", p);
    const std::size_t begin = p * kTrialsPerPartition;
    const std::size_t end = std::min(trials, begin + kTrialsPerPartition);
    for (std::size_t t = begin; t < end; ++t) {
      const auto hit = trial(rng);
      for (std::size_t e = 0; e < Events; ++e) counts[e] += hit[e] ? 1 : 0;
    }
  }
  return counts;
}

}  // namespace serial

namespace parallel {

std::vector<double> evaluate_grid(const DensityFn& density, const Grid& grid);

Matrix weighted_log_densities(std::span<const GaussianComponent> components, const Vector& log_weights,
                              const Matrix& data);

template <std::size_t Events>
EventCounts<Events> partitioned_count(std::size_t trials, std::uint64_t seed, const TrialFn<Events>& trial) {
  const std::size_t partitions = (trials + kTrialsPerPartition - 1) / kTrialsPerPartition;
  std::vector<EventCounts<Events>> per_partition(partitions);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(partitions); ++p) {
    const auto part = static_cast<std::size_t>(p);
    Rng rng = make_rng(seed, "mc-partition", part);
    EventCounts<Events> local{};
    const std::size_t begin = part * kTrialsPerPartition;
    const std::size_t end = std::min(trials, begin + kTrialsPerPartition);
    for (std::size_t t = begin; t < end; ++t) {
      const auto hit = trial(rng);
      for (std::size_t e = 0; e < Events; ++e) local[e] += hit[e] ? 1 : 0;
    }
    per_partition[part] = local;
  }
  EventCounts<Events> counts{};
  for (const auto& local : per_partition) {
    for (std::size_t e = 0; e < Events; ++e) counts[e] += local[e];
  }
  return counts;
}

}  // namespace parallel

}  // namespace hallu::kernels
