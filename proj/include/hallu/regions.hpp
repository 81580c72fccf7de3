#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "hallu/grid.hpp"
#include "hallu/kernels.hpp"
#include "hallu/mixture.hpp"

namespace hallu {

struct HallucinationVerdict {
  bool hallucinates = false;
  std::vector<double> per_state_density;
  /// max_i per_state_density - delta; hallucinates ⇔ margin <= 0.
  double margin = 0.0;
};

/// True iff the estimate's density under every latent state is at most delta.
HallucinationVerdict delta_hallucinates(const LatentMixture& mixture, const Vector& estimate, double delta);

double max_conditional_density(const LatentMixture& mixture, const Vector& point);

/// {a : f(a) > delta} for a Gaussian: the open ellipsoid (a-c)ᵀΣ⁻¹(a-c) < 2·level,
/// level = ln(peak / delta). Empty when level <= 0.
struct EllipsoidRegion {
  GaussianComponent component;
  double level = 0.0;

  bool empty() const { return level <= 0.0; }
  bool contains(const Vector& point) const;
};

struct GridRegion {
  Grid grid;
  std::vector<std::uint8_t> member;

  std::size_t count() const;
  /// Maximal runs of member cells along a 1-D grid, as [left edge, right edge].
  std::vector<std::pair<double, double>> intervals() const;
};

/// Density cutoff over a referenced density; `strict` selects f > t instead of f >= t.
struct ThresholdRegion {
  double threshold = 0.0;
  bool strict = false;

  bool admits(double density) const { return strict ? density > threshold : density >= threshold; }
};

using DensityRegion = std::variant<EllipsoidRegion, GridRegion, ThresholdRegion>;

struct CoveringRadii {
  std::vector<double> per_state;
  double uniform = 0.0;
};

/// Radius of the smallest ball centred at the mean containing {a : f(a) > delta}:
/// sqrt(2 ln(peak/delta) · λ_max(Σ)), or 0 when delta >= peak.
double covering_radius(const GaussianComponent& component, double delta);
CoveringRadii covering_radii(const LatentMixture& mixture, double delta);

struct GridOptions {
  double sigmas = 8.0;
  int cells_1d = 4096;
  int cells_2d = 512;
  /// Cells per axis double until a threshold cell carries at most this mass
  /// (caps: 2^20 cells in 1-D, 4096 per axis in 2-D). <= 0 keeps the grid as given.
  double boundary_mass = 2.5e-4;
  bool parallel = true;
};

/// Bounding grid covering mean ± sigmas·sd of every component (1-D or 2-D only).
Grid default_grid(const LatentMixture& mixture, const GridOptions& options = {});

struct HdrResult {
  ThresholdRegion region;
  double requested_mass = 0.0;
  double achieved_mass = 0.0;
  /// Grid membership (grid method) or empty (sampling method).
  std::optional<GridRegion> cells;
  /// Binomial standard error of achieved_mass (sampling method), 0 for grids.
  double standard_error = 0.0;
};

/// Highest-density region on a grid: the smallest density cutoff whose super-level
/// set carries at least `mass`. mass == 1 returns threshold 0 (whole grid).
HdrResult hdr_grid(const kernels::DensityFn& density, const Grid& grid, double mass, bool parallel = true);
HdrResult hdr_grid(const LatentMixture& mixture, double mass, const GridOptions& options = {});
HdrResult hdr_grid(const GaussianComponent& component, double mass, const GridOptions& options = {});

/// Any dimension: threshold is the (1 - mass) quantile of the density at draws from
/// the density itself; achieved mass is measured on an independent draw.
HdrResult hdr_sampled(const LatentMixture& mixture, double mass, std::size_t samples, std::uint64_t seed);

/// Per-state regions of a highest-conditional-density region; a point is a member
/// iff it lies in at least one of them.
struct HcdrRegions {
  std::vector<DensityRegion> per_state;

  bool contains(const LatentMixture& mixture, const Vector& point) const;
  std::vector<bool> state_membership(const LatentMixture& mixture, const Vector& point) const;
};

/// U_i^delta for every state (analytic ellipsoids).
HcdrRegions hcdr_from_delta(const LatentMixture& mixture, double delta);

/// Per-state HDR of the given mass on each conditional law (grid for d <= 2,
/// sampling otherwise).
HcdrRegions hcdr_from_mass(const LatentMixture& mixture, const std::vector<double>& mass,
                           const GridOptions& options = {}, std::size_t samples = 200000,
                           std::uint64_t seed = 0);

std::string region_kind(const DensityRegion& region);

/// Grid membership as CSV: coordinates of cell centres then the flag.
std::string grid_region_csv(const GridRegion& region);

}  // namespace hallu
