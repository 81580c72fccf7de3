#include "hallu/grid.hpp"

#include "hallu/errors.hpp"

namespace hallu {

Grid Grid::line(double lo, double hi, int cells) {
  if (!(hi > lo) || cells < 1) throw InputError("grid needs hi > lo and at least one cell");
  Grid g;
  g.dims = 1;
  g.lo = {lo, 0.0};
  g.hi = {hi, 1.0};
  g.cells = {cells, 1};
  return g;
}

Grid Grid::plane(std::array<double, 2> lo, std::array<double, 2> hi, std::array<int, 2> cells) {
  for (int a = 0; a < 2; ++a) {
    if (!(hi[a] > lo[a]) || cells[a] < 1) throw InputError("grid needs hi > lo and at least one cell per axis");
  }
  Grid g;
  g.dims = 2;
  g.lo = lo;
  g.hi = hi;
  g.cells = cells;
  return g;
}

std::size_t Grid::size() const {
  return dims == 1 ? static_cast<std::size_t>(cells[0])
                   : static_cast<std::size_t>(cells[0]) * static_cast<std::size_t>(cells[1]);
}

double Grid::cell_volume() const { return dims == 1 ? step(0) : step(0) * step(1); }

std::array<int, 2> Grid::unflatten(std::size_t flat) const {
  const auto nx = static_cast<std::size_t>(cells[0]);
  return {static_cast<int>(flat % nx), static_cast<int>(flat / nx)};
}

Vector Grid::center(std::size_t flat) const {
  const auto idx = unflatten(flat);
  Vector p(dims);
  for (int a = 0; a < dims; ++a) p(a) = lo[a] + (idx[a] + 0.5) * step(a);
  return p;
}

}  // namespace hallu
