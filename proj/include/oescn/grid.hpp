#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "oescn/common.hpp"

namespace oescn {

// Dense numeric grid with up to 4 axes (batch, depth, height, width) and flat
// row-major storage. Parameters, activations and gradients all live in Grids.
struct Grid {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Grid() = default;
  explicit Grid(std::vector<std::size_t> s);
  Grid(std::vector<std::size_t> s, double fill);

  static Grid zeros(std::vector<std::size_t> s) { return Grid(std::move(s)); }
  static Grid scalar(double v) { return Grid({1}, v); }
  static Grid from_matrix(const Matrix& m);

  std::size_t numel() const;
  std::size_t ndim() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return i < shape.size() ? shape[i] : 1; }

  bool same_shape(const Grid& o) const { return shape == o.shape; }
  bool all_finite() const;

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  // 2-D accessors (row-major).
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  // Copies into a column-major Eigen matrix (2-D grids only).
  Matrix to_matrix() const;
};

std::size_t shape_numel(const std::vector<std::size_t>& s);

}  // namespace oescn
