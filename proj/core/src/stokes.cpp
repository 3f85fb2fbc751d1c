#include "pmrf/stokes.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <chrono>
#include <cmath>
#include <queue>
#include <utility>
#include <vector>

#include "pmrf/errors.hpp"

namespace pmrf {

namespace {

// 1D quadratic nodal basis on [-1,1], nodes at t = -1, 0, 1.
double q1d(int j, double t) {
  switch (j) {
    case 0: return 0.5 * t * (t - 1.0);
    case 1: return 1.0 - t * t;
    default: return 0.5 * t * (t + 1.0);
  }
}

double dq1d(int j, double t) {
  switch (j) {
    case 0: return t - 0.5;
    case 1: return -2.0 * t;
    default: return t + 0.5;
  }
}

// Biquadratic velocity shape function a = jy*3 + jx on the reference square.
double q2(int a, double xi, double eta) {
  return q1d(a % 3, xi) * q1d(a / 3, eta);
}

// Reference-cell integrals for the Q2 velocity / per-cell linear pressure
// pair. The Laplacian block is scale-free in 2D; the divergence blocks carry
// a factor h/2 applied at assembly.
struct ElementMatrices {
  double lap[9][9] = {};   // ∫ grad(phi_i) . grad(phi_j) over the reference cell
  double div_x[3][9] = {}; // ∫ q_m dphi_i/dxi,  q in {1, xi, eta}
  double div_y[3][9] = {}; // ∫ q_m dphi_i/deta
  double edge[3] = {};     // 1D basis integrals along a cell edge (unit h)

  ElementMatrices() {
    const double gp[3] = {-std::sqrt(3.0 / 5.0), 0.0, std::sqrt(3.0 / 5.0)};
    const double gw[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    for (int qx = 0; qx < 3; ++qx) {
      for (int qy = 0; qy < 3; ++qy) {
        const double xi = gp[qx];
        const double eta = gp[qy];
        const double w = gw[qx] * gw[qy];
        const double qmode[3] = {1.0, xi, eta};
        double dphix[9];
        double dphiy[9];
        for (int a = 0; a < 9; ++a) {
          dphix[a] = dq1d(a % 3, xi) * q1d(a / 3, eta);
          dphiy[a] = q1d(a % 3, xi) * dq1d(a / 3, eta);
        }
        for (int a = 0; a < 9; ++a) {
          for (int b = 0; b < 9; ++b) {
            lap[a][b] += w * (dphix[a] * dphix[b] + dphiy[a] * dphiy[b]);
          }
          for (int m = 0; m < 3; ++m) {
            div_x[m][a] += w * qmode[m] * dphix[a];
            div_y[m][a] += w * qmode[m] * dphiy[a];
          }
        }
      }
    }
    // 1D integrals of the quadratic basis: (1/6, 4/6, 1/6) * h.
    edge[0] = 1.0 / 6.0;
    edge[1] = 4.0 / 6.0;
    edge[2] = 1.0 / 6.0;
  }
};

const ElementMatrices& element_matrices() {
  static const ElementMatrices m;
  return m;
}

// Fluid cells that belong to a connected component touching the inlet or
// outlet column. Enclosed pockets are excluded: they carry no flow and would
// leave their pressure modes unconstrained.
struct FlowDomain {
  int m = 0;
  std::vector<std::uint8_t> active;
  bool percolating = false;

  bool is_active(int cx, int cy) const {
    return active[static_cast<std::size_t>(cy) * m + cx] != 0;
  }
};

FlowDomain flow_domain(const SolidMask& mask) {
  const int m = mask.resolution;
  FlowDomain dom;
  dom.m = m;
  dom.active.assign(static_cast<std::size_t>(m) * m, 0);
  std::vector<int> comp(static_cast<std::size_t>(m) * m, -1);
  int ncomp = 0;
  std::vector<std::pair<bool, bool>> touches;  // (left, right) per component
  for (int start = 0; start < m * m; ++start) {
    if (mask.cells[start] != 0 || comp[start] >= 0) {
      continue;
    }
    const int id = ncomp++;
    touches.emplace_back(false, false);
    std::queue<int> frontier;
    comp[start] = id;
    frontier.push(start);
    while (!frontier.empty()) {
      const int cell = frontier.front();
      frontier.pop();
      const int cx = cell % m;
      const int cy = cell / m;
      if (cx == 0) touches[id].first = true;
      if (cx == m - 1) touches[id].second = true;
      constexpr int dx[4] = {1, -1, 0, 0};
      constexpr int dy[4] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        const int nx = cx + dx[k];
        const int ny = cy + dy[k];
        if (nx < 0 || nx >= m || ny < 0 || ny >= m) continue;
        const int ncell = ny * m + nx;
        if (mask.cells[ncell] == 0 && comp[ncell] < 0) {
          comp[ncell] = id;
          frontier.push(ncell);
        }
      }
    }
  }
  for (int cell = 0; cell < m * m; ++cell) {
    const int id = comp[cell];
    if (id < 0) continue;
    if (touches[id].first && touches[id].second) dom.percolating = true;
    if (touches[id].first || touches[id].second) dom.active[cell] = 1;
  }
  return dom;
}

}  // namespace

void BoundaryConditions::validate() const {
  if (viscosity != 1.0) {
    throw InvalidArgument("boundary conditions: the model is posed at unit viscosity");
  }
  if (!std::isfinite(inlet_pressure) || !std::isfinite(outlet_pressure) ||
      !std::isfinite(wall_velocity[0]) || !std::isfinite(wall_velocity[1])) {
    throw InvalidArgument("boundary conditions: non-finite value");
  }
}

void FineField::validate() const {
  if (pressure.rows() != grid_size || pressure.cols() != grid_size ||
      !pressure.same_shape(velocity_x) || !pressure.same_shape(velocity_y)) {
    throw InvalidArgument("fine field: inconsistent lattice shapes");
  }
  for (std::size_t i = 0; i < pressure.size(); ++i) {
    if (!std::isfinite(pressure[i]) || !std::isfinite(velocity_x[i]) ||
        !std::isfinite(velocity_y[i])) {
      throw InvalidArgument("fine field: non-finite entry");
    }
  }
}

FineField solve_stokes(const Microstructure& ms, const BoundaryConditions& bc,
                       int mesh_resolution, int output_grid, SolveDiagnostics* diagnostics) {
  const auto t_start = std::chrono::steady_clock::now();
  bc.validate();
  if (mesh_resolution < 8) {
    throw InvalidArgument("solve_stokes: mesh_resolution must be >= 8");
  }
  if (output_grid < 2) {
    throw InvalidArgument("solve_stokes: output_grid must be >= 2");
  }

  const int m = mesh_resolution;
  const SolidMask mesh_mask = voxelize(ms, m);
  const FlowDomain dom = flow_domain(mesh_mask);
  if (!dom.percolating) {
    throw NonPercolating("solve_stokes: no fluid path from inlet to outlet");
  }

  const int nx_nodes = 2 * m + 1;
  const auto node_id = [nx_nodes](int gx, int gy) { return gy * nx_nodes + gx; };
  const std::size_t n_nodes = static_cast<std::size_t>(nx_nodes) * nx_nodes;

  // Velocity node classification: -2 unused, -1 Dirichlet, >=0 free dof pair.
  std::vector<std::int8_t> used(n_nodes, 0);
  std::vector<std::int8_t> dirichlet(n_nodes, 0);
  std::vector<std::int8_t> interface(n_nodes, 0);
  for (int gy = 0; gy < nx_nodes; ++gy) {
    for (int gx = 0; gx < nx_nodes; ++gx) {
      bool touches_active = false;
      bool touches_inactive = false;
      for (int cy = std::max(0, gy / 2 - 1); cy <= std::min(m - 1, gy / 2); ++cy) {
        if (2 * cy > gy || gy > 2 * cy + 2) continue;
        for (int cx = std::max(0, gx / 2 - 1); cx <= std::min(m - 1, gx / 2); ++cx) {
          if (2 * cx > gx || gx > 2 * cx + 2) continue;
          if (dom.is_active(cx, cy)) {
            touches_active = true;
          } else {
            touches_inactive = true;
          }
        }
      }
      const std::size_t id = node_id(gx, gy);
      if (!touches_active) continue;
      used[id] = 1;
      if (touches_inactive) {
        dirichlet[id] = 1;
        interface[id] = 1;  // no-slip wins over wall velocity
      } else if (gy == 0 || gy == 2 * m) {
        dirichlet[id] = 1;
      }
    }
  }

  std::vector<int> vdof(n_nodes, -1);
  int n_free_nodes = 0;
  for (std::size_t id = 0; id < n_nodes; ++id) {
    if (used[id] && !dirichlet[id]) {
      vdof[id] = n_free_nodes++;
    }
  }
  const int nu = 2 * n_free_nodes;

  std::vector<int> cell_pdof(static_cast<std::size_t>(m) * m, -1);
  int n_active_cells = 0;
  for (int cy = 0; cy < m; ++cy) {
    for (int cx = 0; cx < m; ++cx) {
      if (dom.is_active(cx, cy)) {
        cell_pdof[static_cast<std::size_t>(cy) * m + cx] = 3 * n_active_cells++;
      }
    }
  }
  const int np = 3 * n_active_cells;
  const int n_unknowns = nu + np;

  // Dirichlet nodal values (interfaces pinned to zero, walls to wall_velocity).
  const auto dirichlet_value = [&](std::size_t id, int comp) -> double {
    if (interface[id]) return 0.0;
    return bc.wall_velocity[comp];
  };

  const ElementMatrices& em = element_matrices();
  const double h = 1.0 / m;

  // Symmetric saddle system [[A, -B^T], [-B, 0]] with the traction terms on
  // the right-hand side.
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(n_active_cells) * 280 + 16);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_unknowns);

  for (int cy = 0; cy < m; ++cy) {
    for (int cx = 0; cx < m; ++cx) {
      if (!dom.is_active(cx, cy)) continue;
      std::size_t nodes[9];
      for (int a = 0; a < 9; ++a) {
        nodes[a] = node_id(2 * cx + a % 3, 2 * cy + a / 3);
      }
      const int pbase = nu + cell_pdof[static_cast<std::size_t>(cy) * m + cx];

      for (int a = 0; a < 9; ++a) {
        for (int comp = 0; comp < 2; ++comp) {
          const int row = vdof[nodes[a]] < 0 ? -1 : 2 * vdof[nodes[a]] + comp;
          if (row < 0) continue;
          // Viscous block (components uncoupled under the gradient form).
          for (int b = 0; b < 9; ++b) {
            const double val = bc.viscosity * em.lap[a][b];
            const int coldof = vdof[nodes[b]];
            if (coldof >= 0) {
              triplets.emplace_back(row, 2 * coldof + comp, val);
            } else {
              rhs[row] -= val * dirichlet_value(nodes[b], comp);
            }
          }
          // -B^T block.
          for (int mm = 0; mm < 3; ++mm) {
            const double val = -(h / 2.0) * (comp == 0 ? em.div_x[mm][a] : em.div_y[mm][a]);
            triplets.emplace_back(row, pbase + mm, val);
          }
        }
      }
      // -B block (constraint rows).
      for (int mm = 0; mm < 3; ++mm) {
        for (int a = 0; a < 9; ++a) {
          for (int comp = 0; comp < 2; ++comp) {
            const double val = -(h / 2.0) * (comp == 0 ? em.div_x[mm][a] : em.div_y[mm][a]);
            const int coldof = vdof[nodes[a]];
            if (coldof >= 0) {
              triplets.emplace_back(pbase + mm, 2 * coldof + comp, val);
            } else {
              rhs[pbase + mm] -= val * dirichlet_value(nodes[a], comp);
            }
          }
        }
      }
      // Traction terms on the inlet/outlet faces (natural conditions).
      if (cx == 0) {
        for (int jy = 0; jy < 3; ++jy) {
          const std::size_t id = node_id(0, 2 * cy + jy);
          if (vdof[id] >= 0) {
            rhs[2 * vdof[id]] += bc.inlet_pressure * em.edge[jy] * h;
          }
        }
      }
      if (cx == m - 1) {
        for (int jy = 0; jy < 3; ++jy) {
          const std::size_t id = node_id(2 * m, 2 * cy + jy);
          if (vdof[id] >= 0) {
            rhs[2 * vdof[id]] -= bc.outlet_pressure * em.edge[jy] * h;
          }
        }
      }
    }
  }

  Eigen::VectorXd solution = Eigen::VectorXd::Zero(n_unknowns);
  double rel_residual = 0.0;
  const double rhs_norm = rhs.norm();
  if (rhs_norm > 0.0) {
    Eigen::SparseMatrix<double> system(n_unknowns, n_unknowns);
    system.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.analyzePattern(system);
    lu.factorize(system);
    if (lu.info() != Eigen::Success) {
      throw SingularSystem("solve_stokes: factorization failed");
    }
    solution = lu.solve(rhs);
    rel_residual = (system * solution - rhs).norm() / rhs_norm;
    if (rel_residual > 1e-10) {
      // One step of iterative refinement before giving up.
      const Eigen::VectorXd correction = lu.solve(rhs - system * solution);
      solution += correction;
      rel_residual = (system * solution - rhs).norm() / rhs_norm;
    }
    if (!(rel_residual <= 1e-10)) {
      throw SolverDivergence("solve_stokes: relative residual above 1e-10");
    }
  }

  // Full nodal velocity values (free dofs plus Dirichlet data).
  std::vector<double> ux(n_nodes, 0.0);
  std::vector<double> uy(n_nodes, 0.0);
  for (std::size_t id = 0; id < n_nodes; ++id) {
    if (!used[id]) continue;
    if (vdof[id] >= 0) {
      ux[id] = solution[2 * vdof[id]];
      uy[id] = solution[2 * vdof[id] + 1];
    } else {
      ux[id] = dirichlet_value(id, 0);
      uy[id] = dirichlet_value(id, 1);
    }
  }

  const int g = output_grid;
  const SolidMask out_mask = voxelize(ms, g);
  FineField field;
  field.grid_size = g;
  field.pressure = Grid2D(g, g, 0.0);
  field.velocity_x = Grid2D(g, g, 0.0);
  field.velocity_y = Grid2D(g, g, 0.0);

  for (int iy = 0; iy < g; ++iy) {
    const double y = (iy + 0.5) / g;
    for (int ix = 0; ix < g; ++ix) {
      if (out_mask.solid(ix, iy)) continue;
      const double x = (ix + 0.5) / g;
      const int cx = std::min(static_cast<int>(x * m), m - 1);
      const int cy = std::min(static_cast<int>(y * m), m - 1);
      if (!dom.is_active(cx, cy)) continue;
      const double xi = 2.0 * (x * m - cx) - 1.0;
      const double eta = 2.0 * (y * m - cy) - 1.0;
      double vx = 0.0;
      double vy = 0.0;
      for (int a = 0; a < 9; ++a) {
        const std::size_t id = node_id(2 * cx + a % 3, 2 * cy + a / 3);
        const double phi = q2(a, xi, eta);
        vx += phi * ux[id];
        vy += phi * uy[id];
      }
      const int pbase = nu + cell_pdof[static_cast<std::size_t>(cy) * m + cx];
      field.velocity_x(iy, ix) = vx;
      field.velocity_y(iy, ix) = vy;
      field.pressure(iy, ix) =
          solution[pbase] + solution[pbase + 1] * xi + solution[pbase + 2] * eta;
    }
  }

  if (diagnostics != nullptr) {
    diagnostics->relative_residual = rel_residual;
    diagnostics->velocity_dofs = nu;
    diagnostics->pressure_dofs = np;
    diagnostics->mesh_resolution = m;
    diagnostics->wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  }
  return field;
}

double mass_flux(const FineField& field, double x_station) {
  if (x_station < 0.0 || x_station > 1.0) {
    throw InvalidArgument("mass_flux: x_station must lie in [0, 1]");
  }
  const int g = field.grid_size;
  int ix = static_cast<int>(std::lround(x_station * g - 0.5));
  ix = std::clamp(ix, 0, g - 1);
  const double h = 1.0 / g;
  double integral = 0.0;
  for (int iy = 0; iy + 1 < g; ++iy) {
    integral += 0.5 * (field.velocity_x(iy, ix) + field.velocity_x(iy + 1, ix)) * h;
  }
  // Wall segments: no-slip makes v_x vanish at y=0 and y=1.
  integral += 0.5 * field.velocity_x(0, ix) * (h / 2.0);
  integral += 0.5 * field.velocity_x(g - 1, ix) * (h / 2.0);
  return integral;
}

}  // namespace pmrf
