#pragma once

#include <cstddef>
#include <vector>

namespace pmrf {

// Dense row-major scalar field on a rows x cols lattice. Row index is the
// y direction, column index the x direction; lattice point (iy, ix) sits at
// the cell center ((ix + 0.5) / cols, (iy + 0.5) / rows) of the unit square.
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), v_(static_cast<std::size_t>(rows) * cols, fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }

  double& operator()(int iy, int ix) { return v_[static_cast<std::size_t>(iy) * cols_ + ix]; }
  double operator()(int iy, int ix) const { return v_[static_cast<std::size_t>(iy) * cols_ + ix]; }

  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  bool same_shape(const Grid2D& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  void fill(double value) { v_.assign(v_.size(), value); }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> v_;
};

}  // namespace pmrf
