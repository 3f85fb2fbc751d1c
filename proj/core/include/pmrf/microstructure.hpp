#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pmrf/grid.hpp"

namespace pmrf {

struct Exclusion {
  std::array<double, 2> center{0.0, 0.0};
  double radius = 0.0;
};

// Random porous microstructure in the unit square: a list of impenetrable
// (non-overlapping) circular exclusions. Exclusions may protrude through the
// top and bottom walls but keep clear of the inlet/outlet margin strips.
struct Microstructure {
  std::vector<Exclusion> exclusions;

  bool contains(double x, double y) const;
  void validate() const;  // throws InvalidArgument on broken invariants
};

struct LogNormalParams {
  double mu = 0.0;
  double sigma = 1.0;
};

struct MicrostructureConfig {
  // Distribution of the exclusion count (rounded to the nearest non-negative
  // integer) and of the radii (quantized to kRadiusGridPoints values on
  // [min_radius, 0.5]).
  LogNormalParams count_lognormal{3.1780538303479458, 0.5};  // median 24
  LogNormalParams radius_lognormal{-3.2188758248682006, 0.35};  // median 0.04
  bool lognormal_count = true;  // false: use fixed_count instead
  int fixed_count = 0;
  double margin = 0.03;
  int max_placement_attempts = 10000;
  double min_radius = 0.01;

  void validate() const;
};

inline constexpr int kRadiusGridPoints = 1000;
inline constexpr double kMaxRadius = 0.5;

// Boolean raster of the microstructure: true cells are solid. Cell (iy, ix)
// covers [ix/G, (ix+1)/G] x [iy/G, (iy+1)/G].
struct SolidMask {
  int resolution = 0;
  std::vector<std::uint8_t> cells;  // row-major, iy * resolution + ix

  bool solid(int ix, int iy) const {
    return cells[static_cast<std::size_t>(iy) * resolution + ix] != 0;
  }
  bool fluid(int ix, int iy) const { return !solid(ix, iy); }
};

// Random sequential addition with rejection. Draws the count, then radii
// (placed largest-first), each center uniformly until it neither overlaps a
// placed exclusion nor intersects the inlet/outlet margin strips. Throws
// PlacementFailure when an exclusion exhausts max_placement_attempts.
Microstructure sample_exclusions(const MicrostructureConfig& config, std::uint64_t seed);

// Center-sampling rasterization: a cell is solid iff its center lies inside
// any exclusion disk.
SolidMask voxelize(const Microstructure& ms, int resolution);

// True iff a 4-connected fluid path joins the x=0 column to the x=1 column.
bool percolates(const SolidMask& mask);

// Fraction of fluid cells.
double porosity(const SolidMask& mask);

// Exact Euclidean distance (in domain units, between cell centers) from every
// cell to the nearest solid cell. Fully fluid masks get the domain diagonal.
Grid2D distance_to_solid(const SolidMask& mask);

// JSON record {"centers": [[x, y], ...], "radii": [...]}; round-trip identity.
std::string to_json(const Microstructure& ms);
Microstructure microstructure_from_json(const std::string& text);

}  // namespace pmrf
