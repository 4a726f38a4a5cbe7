#include "oescn/grid.hpp"

#include <cmath>

namespace oescn {

std::size_t shape_numel(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

Grid::Grid(std::vector<std::size_t> s) : shape(std::move(s)) {
  values.assign(shape_numel(shape), 0.0);
}

Grid::Grid(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
  values.assign(shape_numel(shape), fill);
}

Grid Grid::from_matrix(const Matrix& m) {
  Grid g({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      g.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
  return g;
}

std::size_t Grid::numel() const { return values.size(); }

bool Grid::all_finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix Grid::to_matrix() const {
  if (ndim() != 2) throw InvalidArgument("to_matrix: grid is not 2-D");
  Matrix m(rows(), cols());
  for (std::size_t r = 0; r < rows(); ++r)
    for (std::size_t c = 0; c < cols(); ++c) m(r, c) = at(r, c);
  return m;
}

}  // namespace oescn
