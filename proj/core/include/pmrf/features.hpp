#pragma once

#include <vector>

#include "pmrf/microstructure.hpp"

namespace pmrf {

// Per-coarse-cell topology features, stored cell-major: value(cell, j) with
// cells ordered cy * kx + cx. Column 0 is the bias and is identically 1.
struct FeatureMatrix {
  int kx = 0;
  int ky = 0;
  int n_features = 0;
  std::vector<double> values;

  int n_cells() const { return kx * ky; }
  double at(int cell, int j) const {
    return values[static_cast<std::size_t>(cell) * n_features + j];
  }
  double& at(int cell, int j) {
    return values[static_cast<std::size_t>(cell) * n_features + j];
  }
};

inline constexpr int kFeatureCount = 5;

// Features per cell: [1, porosity, log(porosity + 1e-6), solid-fluid
// interface length per cell area, mean fluid distance-to-solid], computed
// from the voxelization at `resolution` restricted to the cell.
FeatureMatrix extract_features(const Microstructure& ms, int kx, int ky, int resolution);

}  // namespace pmrf
