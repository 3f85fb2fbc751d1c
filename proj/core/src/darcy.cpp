#include "pmrf/darcy.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>

#include "pmrf/errors.hpp"

namespace pmrf {

namespace {

// Q1 reference integrals on [-1,1]^2, node order (-,-), (+,-), (+,+), (-,+).
// The physical stiffness on an hx x hy rectangle is
//   (hy/hx) * kxx + (hx/hy) * kyy.
struct Q1Reference {
  double kxx[4][4] = {};
  double kyy[4][4] = {};

  Q1Reference() {
    const double gp[2] = {-1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0)};
    const double sx[4] = {-1.0, 1.0, 1.0, -1.0};
    const double sy[4] = {-1.0, -1.0, 1.0, 1.0};
    for (double xi : gp) {
      for (double eta : gp) {
        double dphix[4];
        double dphiy[4];
        for (int a = 0; a < 4; ++a) {
          dphix[a] = 0.25 * sx[a] * (1.0 + sy[a] * eta);
          dphiy[a] = 0.25 * sy[a] * (1.0 + sx[a] * xi);
        }
        for (int a = 0; a < 4; ++a) {
          for (int b = 0; b < 4; ++b) {
            kxx[a][b] += dphix[a] * dphix[b];
            kyy[a][b] += dphiy[a] * dphiy[b];
          }
        }
      }
    }
  }
};

const Q1Reference& q1_reference() {
  static const Q1Reference r;
  return r;
}

int internal_mesh(int k) { return std::max(8 * k, 16); }

}  // namespace

void CoarseDiffusivity::validate() const {
  if (kx < 1 || ky < 1 || values.size() != static_cast<std::size_t>(kx) * ky) {
    throw InvalidArgument("coarse diffusivity: grid/value size mismatch");
  }
  for (const double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw NonPositiveDiffusivity("coarse diffusivity: values must be positive and finite");
    }
  }
}

struct DarcyOperator::Impl {
  CoarseDiffusivity lam;
  BoundaryConditions bc;
  int axis = 0;
  int nx = 0;
  int ny = 0;
  int g = 0;
  double hx = 0.0;
  double hy = 0.0;

  std::vector<int> free_dof;        // node -> free index or -1
  std::vector<int> free_nodes;      // free index -> node
  Eigen::VectorXd nodal_pressure;   // full node vector, Dirichlet included
  Eigen::SparseMatrix<double> k_free;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> factorization;
  CoarseSolution solution;
  double residual = 0.0;
  double reaction_inlet = 0.0;
  double reaction_outlet = 0.0;

  int node(int gx, int gy) const { return gy * (nx + 1) + gx; }

  int coarse_cell(int ex, int ey) const {
    const int cx = ex * lam.kx / nx;
    const int cy = ey * lam.ky / ny;
    return cy * lam.kx + cx;
  }

  void element_nodes(int ex, int ey, std::array<int, 4>& out) const {
    out[0] = node(ex, ey);
    out[1] = node(ex + 1, ey);
    out[2] = node(ex + 1, ey + 1);
    out[3] = node(ex, ey + 1);
  }

  // (unit-diffusivity stiffness) * nodal values of one element.
  void unit_stiffness_apply(const std::array<int, 4>& nodes, const Eigen::VectorXd& values,
                            std::array<double, 4>& out) const {
    const Q1Reference& ref = q1_reference();
    const double cx = hy / hx;
    const double cy = hx / hy;
    for (int a = 0; a < 4; ++a) {
      double acc = 0.0;
      for (int b = 0; b < 4; ++b) {
        acc += (cx * ref.kxx[a][b] + cy * ref.kyy[a][b]) * values[nodes[b]];
      }
      out[a] = acc;
    }
  }

  bool is_dirichlet(int gx, int gy, double& value) const {
    if (axis == 0) {
      if (gx == 0) {
        value = bc.inlet_pressure;
        return true;
      }
      if (gx == nx) {
        value = bc.outlet_pressure;
        return true;
      }
    } else {
      if (gy == 0) {
        value = bc.inlet_pressure;
        return true;
      }
      if (gy == ny) {
        value = bc.outlet_pressure;
        return true;
      }
    }
    return false;
  }

  struct PointLocation {
    int ex, ey;
    double xi, eta;
  };

  PointLocation locate(double x, double y) const {
    PointLocation loc;
    loc.ex = std::min(static_cast<int>(x * nx), nx - 1);
    loc.ey = std::min(static_cast<int>(y * ny), ny - 1);
    loc.xi = 2.0 * (x * nx - loc.ex) - 1.0;
    loc.eta = 2.0 * (y * ny - loc.ey) - 1.0;
    return loc;
  }

  static void shape(const PointLocation& loc, std::array<double, 4>& n,
                    std::array<double, 4>& dxi, std::array<double, 4>& deta) {
    const double sx[4] = {-1.0, 1.0, 1.0, -1.0};
    const double sy[4] = {-1.0, -1.0, 1.0, 1.0};
    for (int a = 0; a < 4; ++a) {
      n[a] = 0.25 * (1.0 + sx[a] * loc.xi) * (1.0 + sy[a] * loc.eta);
      dxi[a] = 0.25 * sx[a] * (1.0 + sy[a] * loc.eta);
      deta[a] = 0.25 * sy[a] * (1.0 + sx[a] * loc.xi);
    }
  }

  // Interpolate a full nodal vector (and its flux, relative to base lambda and
  // an optional diffusivity perturbation) onto the output lattice.
  void interpolate(const Eigen::VectorXd& nodal, const std::vector<double>* dlambda,
                   CoarseSolution& out) const {
    out.grid_size = g;
    if (out.pressure.rows() != g) {
      out.pressure = Grid2D(g, g);
      out.flux_x = Grid2D(g, g);
      out.flux_y = Grid2D(g, g);
    }
    std::array<double, 4> n, dxi, deta;
    std::array<int, 4> nodes;
    for (int iy = 0; iy < g; ++iy) {
      const double y = (iy + 0.5) / g;
      for (int ix = 0; ix < g; ++ix) {
        const double x = (ix + 0.5) / g;
        const PointLocation loc = locate(x, y);
        shape(loc, n, dxi, deta);
        element_nodes(loc.ex, loc.ey, nodes);
        const int cell = coarse_cell(loc.ex, loc.ey);
        const double lam_e = lam.values[cell];
        double p = 0.0;
        double gx = 0.0;
        double gy = 0.0;
        for (int a = 0; a < 4; ++a) {
          const double v = nodal[nodes[a]];
          p += n[a] * v;
          gx += dxi[a] * v;
          gy += deta[a] * v;
        }
        gx *= 2.0 / hx;
        gy *= 2.0 / hy;
        out.pressure(iy, ix) = p;
        out.flux_x(iy, ix) = -lam_e * gx;
        out.flux_y(iy, ix) = -lam_e * gy;
        if (dlambda != nullptr) {
          // Perturbation part of the product rule: -dlambda * grad(P_base).
          double bx = 0.0;
          double by = 0.0;
          for (int a = 0; a < 4; ++a) {
            const double v = nodal_pressure[nodes[a]];
            bx += dxi[a] * v;
            by += deta[a] * v;
          }
          out.flux_x(iy, ix) -= (*dlambda)[cell] * bx * 2.0 / hx;
          out.flux_y(iy, ix) -= (*dlambda)[cell] * by * 2.0 / hy;
        }
      }
    }
  }
};

DarcyOperator::DarcyOperator(const CoarseDiffusivity& lam, const BoundaryConditions& bc,
                             int output_grid, int flow_axis)
    : impl_(std::make_unique<Impl>()) {
  lam.validate();
  bc.validate();
  if (output_grid < 2) {
    throw InvalidArgument("darcy: output_grid must be >= 2");
  }
  if (flow_axis != 0 && flow_axis != 1) {
    throw InvalidArgument("darcy: flow_axis must be 0 or 1");
  }
  Impl& s = *impl_;
  s.lam = lam;
  s.bc = bc;
  s.axis = flow_axis;
  s.nx = internal_mesh(lam.kx);
  s.ny = internal_mesh(lam.ky);
  s.g = output_grid;
  s.hx = 1.0 / s.nx;
  s.hy = 1.0 / s.ny;

  const int n_nodes = (s.nx + 1) * (s.ny + 1);
  s.free_dof.assign(n_nodes, -1);
  Eigen::VectorXd dirichlet = Eigen::VectorXd::Zero(n_nodes);
  std::vector<std::uint8_t> is_fixed(n_nodes, 0);
  for (int gy = 0; gy <= s.ny; ++gy) {
    for (int gx = 0; gx <= s.nx; ++gx) {
      double value = 0.0;
      const int id = s.node(gx, gy);
      if (s.is_dirichlet(gx, gy, value)) {
        is_fixed[id] = 1;
        dirichlet[id] = value;
      }
    }
  }
  for (int id = 0; id < n_nodes; ++id) {
    if (!is_fixed[id]) {
      s.free_dof[id] = static_cast<int>(s.free_nodes.size());
      s.free_nodes.push_back(id);
    }
  }
  const int n_free = static_cast<int>(s.free_nodes.size());

  const Q1Reference& ref = q1_reference();
  const double cxx = s.hy / s.hx;
  const double cyy = s.hx / s.hy;
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(s.nx) * s.ny * 16);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_free);
  std::array<int, 4> nodes;
  for (int ey = 0; ey < s.ny; ++ey) {
    for (int ex = 0; ex < s.nx; ++ex) {
      s.element_nodes(ex, ey, nodes);
      const double lam_e = lam.values[s.coarse_cell(ex, ey)];
      for (int a = 0; a < 4; ++a) {
        const int ra = s.free_dof[nodes[a]];
        if (ra < 0) continue;
        for (int b = 0; b < 4; ++b) {
          const double val = lam_e * (cxx * ref.kxx[a][b] + cyy * ref.kyy[a][b]);
          const int cb = s.free_dof[nodes[b]];
          if (cb >= 0) {
            triplets.emplace_back(ra, cb, val);
          } else {
            rhs[ra] -= val * dirichlet[nodes[b]];
          }
        }
      }
    }
  }
  s.k_free.resize(n_free, n_free);
  s.k_free.setFromTriplets(triplets.begin(), triplets.end());
  s.factorization.compute(s.k_free);
  if (s.factorization.info() != Eigen::Success) {
    throw SingularSystem("darcy: factorization failed");
  }
  Eigen::VectorXd p_free = s.factorization.solve(rhs);
  const double rhs_norm = rhs.norm();
  if (rhs_norm > 0.0) {
    s.residual = (s.k_free * p_free - rhs).norm() / rhs_norm;
    if (s.residual > 1e-12) {
      p_free += s.factorization.solve(rhs - s.k_free * p_free);
      s.residual = (s.k_free * p_free - rhs).norm() / rhs_norm;
    }
    if (!(s.residual <= 1e-12)) {
      throw SolverDivergence("darcy: relative residual above 1e-12");
    }
  }

  s.nodal_pressure = dirichlet;
  for (int i = 0; i < n_free; ++i) {
    s.nodal_pressure[s.free_nodes[i]] = p_free[i];
  }

  // Reaction fluxes on the Dirichlet boundaries.
  std::array<double, 4> local;
  Eigen::VectorXd reaction = Eigen::VectorXd::Zero(n_nodes);
  for (int ey = 0; ey < s.ny; ++ey) {
    for (int ex = 0; ex < s.nx; ++ex) {
      s.element_nodes(ex, ey, nodes);
      s.unit_stiffness_apply(nodes, s.nodal_pressure, local);
      const double lam_e = lam.values[s.coarse_cell(ex, ey)];
      for (int a = 0; a < 4; ++a) {
        reaction[nodes[a]] += lam_e * local[a];
      }
    }
  }
  s.reaction_inlet = 0.0;
  s.reaction_outlet = 0.0;
  if (s.axis == 0) {
    for (int gy = 0; gy <= s.ny; ++gy) {
      s.reaction_inlet += reaction[s.node(0, gy)];
      s.reaction_outlet -= reaction[s.node(s.nx, gy)];
    }
  } else {
    for (int gx = 0; gx <= s.nx; ++gx) {
      s.reaction_inlet += reaction[s.node(gx, 0)];
      s.reaction_outlet -= reaction[s.node(gx, s.ny)];
    }
  }

  s.interpolate(s.nodal_pressure, nullptr, s.solution);
}

DarcyOperator::~DarcyOperator() = default;
DarcyOperator::DarcyOperator(DarcyOperator&&) noexcept = default;
DarcyOperator& DarcyOperator::operator=(DarcyOperator&&) noexcept = default;

const CoarseSolution& DarcyOperator::solution() const { return impl_->solution; }
double DarcyOperator::inlet_flux() const { return impl_->reaction_inlet; }
double DarcyOperator::outlet_flux() const { return impl_->reaction_outlet; }
double DarcyOperator::relative_residual() const { return impl_->residual; }

std::vector<double> DarcyOperator::vjp(const CoarseSolution& cotangent) const {
  const Impl& s = *impl_;
  if (cotangent.grid_size != s.g) {
    throw DimensionMismatch("darcy vjp: cotangent lattice does not match output grid");
  }
  const int n_nodes = (s.nx + 1) * (s.ny + 1);
  const int n_cells = s.lam.kx * s.lam.ky;
  Eigen::VectorXd dj_dp = Eigen::VectorXd::Zero(n_nodes);
  std::vector<double> grad(n_cells, 0.0);

  std::array<double, 4> n, dxi, deta;
  std::array<int, 4> nodes;
  for (int iy = 0; iy < s.g; ++iy) {
    const double y = (iy + 0.5) / s.g;
    for (int ix = 0; ix < s.g; ++ix) {
      const double wp = cotangent.pressure(iy, ix);
      const double wx = cotangent.flux_x(iy, ix);
      const double wy = cotangent.flux_y(iy, ix);
      if (wp == 0.0 && wx == 0.0 && wy == 0.0) continue;
      const double x = (ix + 0.5) / s.g;
      const Impl::PointLocation loc = s.locate(x, y);
      Impl::shape(loc, n, dxi, deta);
      s.element_nodes(loc.ex, loc.ey, nodes);
      const int cell = s.coarse_cell(loc.ex, loc.ey);
      const double lam_e = s.lam.values[cell];
      double gx = 0.0;
      double gy = 0.0;
      for (int a = 0; a < 4; ++a) {
        const double v = s.nodal_pressure[nodes[a]];
        gx += dxi[a] * v;
        gy += deta[a] * v;
        dj_dp[nodes[a]] += wp * n[a] - lam_e * (wx * dxi[a] * 2.0 / s.hx + wy * deta[a] * 2.0 / s.hy);
      }
      // Explicit dependence of the flux on the cell diffusivity.
      grad[cell] -= wx * gx * 2.0 / s.hx + wy * gy * 2.0 / s.hy;
    }
  }

  const int n_free = static_cast<int>(s.free_nodes.size());
  Eigen::VectorXd g_free(n_free);
  for (int i = 0; i < n_free; ++i) {
    g_free[i] = dj_dp[s.free_nodes[i]];
  }
  const Eigen::VectorXd adjoint_free = s.factorization.solve(g_free);
  Eigen::VectorXd adjoint = Eigen::VectorXd::Zero(n_nodes);
  for (int i = 0; i < n_free; ++i) {
    adjoint[s.free_nodes[i]] = adjoint_free[i];
  }

  std::array<double, 4> local;
  for (int ey = 0; ey < s.ny; ++ey) {
    for (int ex = 0; ex < s.nx; ++ex) {
      s.element_nodes(ex, ey, nodes);
      s.unit_stiffness_apply(nodes, s.nodal_pressure, local);
      double dot = 0.0;
      for (int a = 0; a < 4; ++a) {
        if (s.free_dof[nodes[a]] >= 0) {
          dot += adjoint[nodes[a]] * local[a];
        }
      }
      grad[s.coarse_cell(ex, ey)] -= dot;
    }
  }
  return grad;
}

CoarseSolution DarcyOperator::jvp(const std::vector<double>& dlambda) const {
  const Impl& s = *impl_;
  if (dlambda.size() != s.lam.values.size()) {
    throw DimensionMismatch("darcy jvp: perturbation size does not match diffusivity");
  }
  const int n_free = static_cast<int>(s.free_nodes.size());
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_free);
  std::array<int, 4> nodes;
  std::array<double, 4> local;
  for (int ey = 0; ey < s.ny; ++ey) {
    for (int ex = 0; ex < s.nx; ++ex) {
      const double dl = dlambda[s.coarse_cell(ex, ey)];
      if (dl == 0.0) continue;
      s.element_nodes(ex, ey, nodes);
      s.unit_stiffness_apply(nodes, s.nodal_pressure, local);
      for (int a = 0; a < 4; ++a) {
        const int ra = s.free_dof[nodes[a]];
        if (ra >= 0) {
          rhs[ra] -= dl * local[a];
        }
      }
    }
  }
  const Eigen::VectorXd dp_free = s.factorization.solve(rhs);
  const int n_nodes = (s.nx + 1) * (s.ny + 1);
  Eigen::VectorXd dp = Eigen::VectorXd::Zero(n_nodes);
  for (int i = 0; i < n_free; ++i) {
    dp[s.free_nodes[i]] = dp_free[i];
  }
  CoarseSolution out;
  s.interpolate(dp, &dlambda, out);
  return out;
}

CoarseSolution solve_darcy(const CoarseDiffusivity& lam, const BoundaryConditions& bc,
                           int output_grid) {
  return DarcyOperator(lam, bc, output_grid).solution();
}

std::vector<double> darcy_vjp(const CoarseDiffusivity& lam, const BoundaryConditions& bc,
                              const CoarseSolution& cotangent) {
  return DarcyOperator(lam, bc, cotangent.grid_size).vjp(cotangent);
}

}  // namespace pmrf
