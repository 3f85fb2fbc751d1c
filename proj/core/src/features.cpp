#include "pmrf/features.hpp"

#include <cmath>

#include "pmrf/errors.hpp"

namespace pmrf {

FeatureMatrix extract_features(const Microstructure& ms, int kx, int ky, int resolution) {
  if (kx < 1 || ky < 1) {
    throw InvalidArgument("extract_features: coarse grid must be at least 1x1");
  }
  const SolidMask mask = voxelize(ms, resolution);
  const Grid2D dist = distance_to_solid(mask);
  const int g = resolution;

  FeatureMatrix phi;
  phi.kx = kx;
  phi.ky = ky;
  phi.n_features = kFeatureCount;
  phi.values.assign(static_cast<std::size_t>(kx) * ky * kFeatureCount, 0.0);

  const int n_cells = kx * ky;
  std::vector<long> voxels(n_cells, 0);
  std::vector<long> fluid(n_cells, 0);
  std::vector<long> interface_faces(n_cells, 0);
  std::vector<double> dist_sum(n_cells, 0.0);

  const auto cell_of = [&](int ix, int iy) {
    const int cx = static_cast<int>(static_cast<long>(ix) * kx / g);
    const int cy = static_cast<int>(static_cast<long>(iy) * ky / g);
    return cy * kx + cx;
  };

  for (int iy = 0; iy < g; ++iy) {
    for (int ix = 0; ix < g; ++ix) {
      const int cell = cell_of(ix, iy);
      ++voxels[cell];
      if (mask.solid(ix, iy)) continue;
      ++fluid[cell];
      dist_sum[cell] += dist(iy, ix);
      // Faces between this fluid voxel and solid neighbours, attributed to
      // the fluid voxel's cell.
      if (ix + 1 < g && mask.solid(ix + 1, iy)) ++interface_faces[cell];
      if (ix > 0 && mask.solid(ix - 1, iy)) ++interface_faces[cell];
      if (iy + 1 < g && mask.solid(ix, iy + 1)) ++interface_faces[cell];
      if (iy > 0 && mask.solid(ix, iy - 1)) ++interface_faces[cell];
    }
  }

  const double face_length = 1.0 / g;
  for (int cell = 0; cell < n_cells; ++cell) {
    const double cell_area = static_cast<double>(voxels[cell]) / (static_cast<double>(g) * g);
    const double por = voxels[cell] > 0 ? static_cast<double>(fluid[cell]) / voxels[cell] : 0.0;
    phi.at(cell, 0) = 1.0;
    phi.at(cell, 1) = por;
    phi.at(cell, 2) = std::log(por + 1e-6);
    phi.at(cell, 3) = cell_area > 0.0 ? interface_faces[cell] * face_length / cell_area : 0.0;
    phi.at(cell, 4) = fluid[cell] > 0 ? dist_sum[cell] / fluid[cell] : 0.0;
  }
  return phi;
}

}  // namespace pmrf
