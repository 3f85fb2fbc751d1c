#pragma once

#include <memory>
#include <vector>

#include "pmrf/grid.hpp"
#include "pmrf/stokes.hpp"

namespace pmrf {

// Piecewise-constant effective diffusivity on a Kx x Ky coarse grid.
struct CoarseDiffusivity {
  int kx = 0;
  int ky = 0;
  std::vector<double> values;  // row-major, cy * kx + cx

  double at(int cx, int cy) const { return values[static_cast<std::size_t>(cy) * kx + cx]; }
  double& at(int cx, int cy) { return values[static_cast<std::size_t>(cy) * kx + cx]; }
  void validate() const;
};

// Darcy pressure and flux interpolated to the fine output lattice.
struct CoarseSolution {
  int grid_size = 0;
  Grid2D pressure;
  Grid2D flux_x;
  Grid2D flux_y;
};

// One assembled and factorized Darcy solve. Keeps the factorization so that
// adjoint (vjp) and linearized (jvp) solves against the same diffusivity are
// back-substitutions. Single-threaded reuse only.
class DarcyOperator {
 public:
  // flow_axis 0 drives the pressure drop along x (the default used by the
  // surrogate); axis 1 is the transposed setup, kept for symmetry checks.
  DarcyOperator(const CoarseDiffusivity& lam, const BoundaryConditions& bc, int output_grid,
                int flow_axis = 0);
  ~DarcyOperator();
  DarcyOperator(DarcyOperator&&) noexcept;
  DarcyOperator& operator=(DarcyOperator&&) noexcept;

  const CoarseSolution& solution() const;

  // Gradient of <cotangent, output fields> with respect to the diffusivity
  // vector, via one adjoint solve.
  std::vector<double> vjp(const CoarseSolution& cotangent) const;

  // Directional derivative of the output fields along a diffusivity
  // perturbation, via one linearized solve.
  CoarseSolution jvp(const std::vector<double>& dlambda) const;

  // Variationally consistent boundary fluxes (reaction sums); equal for any
  // converged solve.
  double inlet_flux() const;
  double outlet_flux() const;
  double relative_residual() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

CoarseSolution solve_darcy(const CoarseDiffusivity& lam, const BoundaryConditions& bc,
                           int output_grid);

// Gradient of <cotangent, U_c(lambda)> with the output grid taken from the
// cotangent shape.
std::vector<double> darcy_vjp(const CoarseDiffusivity& lam, const BoundaryConditions& bc,
                              const CoarseSolution& cotangent);

}  // namespace pmrf
