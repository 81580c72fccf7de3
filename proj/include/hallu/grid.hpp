#pragma once

#include <array>
#include <cstddef>

#include "hallu/mixture.hpp"

namespace hallu {

/// Axis-aligned 1-D or 2-D grid of equal cells; flat index is row-major with x fastest.
struct Grid {
  int dims = 1;
  std::array<double, 2> lo{0.0, 0.0};
  std::array<double, 2> hi{1.0, 1.0};
  std::array<int, 2> cells{1, 1};

  static Grid line(double lo, double hi, int cells);
  static Grid plane(std::array<double, 2> lo, std::array<double, 2> hi, std::array<int, 2> cells);

  std::size_t size() const;
  double step(int axis) const { return (hi[axis] - lo[axis]) / cells[axis]; }
  double cell_volume() const;
  Vector center(std::size_t flat) const;
  std::array<int, 2> unflatten(std::size_t flat) const;
};

}  // namespace hallu
