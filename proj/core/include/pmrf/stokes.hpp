#pragma once

#include <array>
#include <string>

#include "pmrf/grid.hpp"
#include "pmrf/microstructure.hpp"

namespace pmrf {

// Pressure-driven channel setup: traction -inlet_pressure * n on the left
// face, -outlet_pressure * n on the right face, Dirichlet wall_velocity on
// the top and bottom faces, no-slip on all solid-fluid interfaces.
struct BoundaryConditions {
  double inlet_pressure = 1.0;
  double outlet_pressure = 0.0;
  std::array<double, 2> wall_velocity{0.0, 0.0};
  double viscosity = 1.0;  // the model is posed at unit viscosity

  void validate() const;
};

// Pressure and velocity components sampled on the regular G x G lattice of
// cell centers. Velocity and pressure are exactly zero at lattice points
// inside solid cells.
struct FineField {
  int grid_size = 0;
  Grid2D pressure;
  Grid2D velocity_x;
  Grid2D velocity_y;

  void validate() const;
};

struct SolveDiagnostics {
  double relative_residual = 0.0;
  int velocity_dofs = 0;
  int pressure_dofs = 0;
  int mesh_resolution = 0;
  double wall_seconds = 0.0;
};

// Full-order mixed finite element solve of steady Stokes flow in the
// voxelized pore domain (biquadratic velocity, linear pressure per cell),
// sampled onto the output lattice. mesh_resolution >= 8.
FineField solve_stokes(const Microstructure& ms, const BoundaryConditions& bc,
                       int mesh_resolution, int output_grid,
                       SolveDiagnostics* diagnostics = nullptr);

// Trapezoidal integral of velocity_x over the lattice column nearest
// x_station, with the no-slip walls contributing exact zeros at y=0 and y=1.
double mass_flux(const FineField& field, double x_station);

}  // namespace pmrf
