#include "hallu/regions.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hallu/errors.hpp"

namespace hallu {

namespace {

void check_delta(double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) {
    throw InputError("delta must lie in (0, 1], got " + std::to_string(delta));
  }
}

void check_mass(double mass) {
  if (!(mass > 0.0 && mass <= 1.0)) throw InputError("HDR mass must lie in (0, 1]");
}

LatentMixture single(const GaussianComponent& component) { return LatentMixture({1.0}, {component}); }

}  // namespace

HallucinationVerdict delta_hallucinates(const LatentMixture& mixture, const Vector& estimate, double delta) {
  check_delta(delta);
  if (estimate.size() != mixture.dim()) throw InputError("estimate dimension does not match mixture");
  HallucinationVerdict verdict;
  verdict.per_state_density.reserve(mixture.size());
  double peak = 0.0;
  for (std::size_t i = 0; i < mixture.size(); ++i) {
    const double f = component_density(mixture, i, estimate);
    verdict.per_state_density.push_back(f);
    peak = std::max(peak, f);
  }
  verdict.margin = peak - delta;
  verdict.hallucinates = verdict.margin <= 0.0;
  return verdict;
}

double max_conditional_density(const LatentMixture& mixture, const Vector& point) {
  double best = 0.0;
  for (std::size_t i = 0; i < mixture.size(); ++i) best = std::max(best, component_density(mixture, i, point));
  return best;
}

bool EllipsoidRegion::contains(const Vector& point) const {
  if (empty()) return false;
  return component.mahalanobis_sq(point) < 2.0 * level;
}

std::size_t GridRegion::count() const {
  return static_cast<std::size_t>(std::count(member.begin(), member.end(), std::uint8_t{1}));
}

std::vector<std::pair<double, double>> GridRegion::intervals() const {
  if (grid.dims != 1) throw InputError("intervals are defined for 1-D grids only");
  std::vector<std::pair<double, double>> out;
  const double h = grid.step(0);
  int start = -1;
  for (int k = 0; k <= grid.cells[0]; ++k) {
    const bool in = k < grid.cells[0] && member[static_cast<std::size_t>(k)] != 0;
    if (in && start < 0) start = k;
    if (!in && start >= 0) {
      out.emplace_back(grid.lo[0] + start * h, grid.lo[0] + k * h);
      start = -1;
    }
  }
  return out;
}

double covering_radius(const GaussianComponent& component, double delta) {
  if (!(delta > 0.0)) throw InputError("delta must be positive");
  const double level = component.log_peak() - std::log(delta);
  if (level <= 0.0) return 0.0;
  return std::sqrt(2.0 * level) * std::sqrt(component.max_eigenvalue());
}

CoveringRadii covering_radii(const LatentMixture& mixture, double delta) {
  CoveringRadii radii;
  for (const auto& c : mixture.components()) {
    radii.per_state.push_back(covering_radius(c, delta));
    radii.uniform = std::max(radii.uniform, radii.per_state.back());
  }
  return radii;
}

Grid default_grid(const LatentMixture& mixture, const GridOptions& options) {
  const int d = mixture.dim();
  if (d > 2) throw InputError("grid method supports 1-D and 2-D densities only (got dimension " +
                              std::to_string(d) + ")");
  std::array<double, 2> lo{HUGE_VAL, HUGE_VAL};
  std::array<double, 2> hi{-HUGE_VAL, -HUGE_VAL};
  for (const auto& c : mixture.components()) {
    const Vector sd = c.diagonal_variances().array().sqrt();
    for (int a = 0; a < d; ++a) {
      lo[a] = std::min(lo[a], c.mean()(a) - options.sigmas * sd(a));
      hi[a] = std::max(hi[a], c.mean()(a) + options.sigmas * sd(a));
    }
  }
  if (d == 1) return Grid::line(lo[0], hi[0], options.cells_1d);
  return Grid::plane(lo, hi, {options.cells_2d, options.cells_2d});
}

HdrResult hdr_grid(const kernels::DensityFn& density, const Grid& grid, double mass, bool parallel) {
  check_mass(mass);
  const std::vector<double> values =
      parallel ? kernels::parallel::evaluate_grid(density, grid) : kernels::serial::evaluate_grid(density, grid);
  const double volume = grid.cell_volume();

  HdrResult result;
  result.requested_mass = mass;
  GridRegion cells{grid, std::vector<std::uint8_t>(values.size(), 0)};

  double threshold = 0.0;
  if (mass < 1.0) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    double acc = 0.0;
    threshold = values[order.back()];
    for (std::size_t idx : order) {
      acc += values[idx] * volume;
      if (acc >= mass) {
        threshold = values[idx];
        break;
      }
    }
  }
  double achieved = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] >= threshold) {
      cells.member[i] = 1;
      achieved += values[i] * volume;
    }
  }
  result.region = ThresholdRegion{threshold, false};
  result.achieved_mass = achieved;
  result.cells = std::move(cells);
  return result;
}

HdrResult hdr_grid(const LatentMixture& mixture, double mass, const GridOptions& options) {
  const auto density = [&mixture](const Vector& p) { return mixture_density(mixture, p); };
  GridOptions o = options;
  for (;;) {
    const Grid grid = default_grid(mixture, o);
    HdrResult r = hdr_grid(density, grid, mass, o.parallel);
    const bool capped = grid.dims == 1 ? o.cells_1d >= (1 << 20) : o.cells_2d >= 4096;
    if (o.boundary_mass <= 0.0 || capped || r.region.threshold * grid.cell_volume() <= o.boundary_mass) return r;
    o.cells_1d *= 2;
    o.cells_2d *= 2;
  }
}

HdrResult hdr_grid(const GaussianComponent& component, double mass, const GridOptions& options) {
  return hdr_grid(single(component), mass, options);
}

HdrResult hdr_sampled(const LatentMixture& mixture, double mass, std::size_t samples, std::uint64_t seed) {
  check_mass(mass);
  if (samples < 2) throw InputError("sampling HDR needs at least 2 samples");
  auto draw_densities = [&](std::string_view label) {
    Rng rng = make_rng(seed, label);
    std::vector<double> f(samples);
    for (auto& v : f) v = mixture_density(mixture, sample_mixture(mixture, rng).second);
    return f;
  };
  std::vector<double> fit = draw_densities("hdr-threshold");
  std::sort(fit.begin(), fit.end());
  const auto idx = static_cast<std::size_t>(std::floor((1.0 - mass) * static_cast<double>(samples)));
  const double threshold = mass >= 1.0 ? 0.0 : fit[std::min(idx, samples - 1)];

  const std::vector<double> check = draw_densities("hdr-check");
  const auto inside = std::count_if(check.begin(), check.end(), [&](double v) { return v >= threshold; });
  HdrResult result;
  result.requested_mass = mass;
  result.region = ThresholdRegion{threshold, false};
  result.achieved_mass = static_cast<double>(inside) / static_cast<double>(samples);
  result.standard_error =
      std::sqrt(result.achieved_mass * (1.0 - result.achieved_mass) / static_cast<double>(samples));
  return result;
}

std::vector<bool> HcdrRegions::state_membership(const LatentMixture& mixture, const Vector& point) const {
  if (per_state.size() != mixture.size()) throw InputError("HCDR region count does not match mixture states");
  std::vector<bool> in(per_state.size(), false);
  for (std::size_t i = 0; i < per_state.size(); ++i) {
    in[i] = std::visit(
        [&](const auto& r) -> bool {
          using R = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<R, EllipsoidRegion>) {
            return r.contains(point);
          } else if constexpr (std::is_same_v<R, ThresholdRegion>) {
            return r.admits(component_density(mixture, i, point));
          } else {
            throw InputError("grid regions cannot answer point membership");
          }
        },
        per_state[i]);
  }
  return in;
}

bool HcdrRegions::contains(const LatentMixture& mixture, const Vector& point) const {
  const auto in = state_membership(mixture, point);
  return std::find(in.begin(), in.end(), true) != in.end();
}

HcdrRegions hcdr_from_delta(const LatentMixture& mixture, double delta) {
  check_delta(delta);
  HcdrRegions regions;
  for (const auto& c : mixture.components()) {
    regions.per_state.emplace_back(EllipsoidRegion{c, c.log_peak() - std::log(delta)});
  }
  return regions;
}

HcdrRegions hcdr_from_mass(const LatentMixture& mixture, const std::vector<double>& mass,
                           const GridOptions& options, std::size_t samples, std::uint64_t seed) {
  if (mass.size() != mixture.size()) throw InputError("need one HDR mass per latent state");
  HcdrRegions regions;
  for (std::size_t i = 0; i < mixture.size(); ++i) {
    const LatentMixture conditional = single(mixture.component(i));
    const HdrResult r = mixture.dim() <= 2 ? hdr_grid(conditional, mass[i], options)
                                           : hdr_sampled(conditional, mass[i], samples, derive_seed(seed, "hcdr", i));
    regions.per_state.emplace_back(r.region);
  }
  return regions;
}

std::string region_kind(const DensityRegion& region) {
  switch (region.index()) {
    case 0:
      return "analytic-ellipsoid";
    case 1:
      return "grid";
    default:
      return "threshold";
  }
}

std::string grid_region_csv(const GridRegion& region) {
  std::ostringstream out;
  out.precision(17);
  out << (region.grid.dims == 1 ? "x,member\n" : "x,y,member\n");
  for (std::size_t i = 0; i < region.member.size(); ++i) {
    const Vector c = region.grid.center(i);
    for (int a = 0; a < region.grid.dims; ++a) out << c(a) << ',';
    out << static_cast<int>(region.member[i]) << '\n';
  }
  return out.str();
}

}  // namespace hallu
