#include "dragopt/flowsim.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <queue>
#include <sstream>

#include "dragopt/error.hpp"

namespace dragopt::flowsim {

namespace {

enum FaceType : std::uint8_t {
  kActive = 0,
  kInlet = 1,
  kOutlet = 2,
  kWall = 3,    // exactly one adjacent cell is solid, or a slip wall
  kBuried = 4,  // both adjacent cells solid
};

struct FaceLayout {
  std::vector<std::uint8_t> u_type;
  std::vector<std::uint8_t> v_type;
};

FaceLayout classify_faces(const Grid& g, const CellMask& m) {
  FaceLayout f;
  f.u_type.assign(static_cast<std::size_t>(g.nx + 1) * g.ny, kActive);
  f.v_type.assign(static_cast<std::size_t>(g.nx) * (g.ny + 1), kActive);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i <= g.nx; ++i) {
      auto& t = f.u_type[static_cast<std::size_t>(j) * (g.nx + 1) + i];
      if (i == 0) {
        t = kInlet;
      } else if (i == g.nx) {
        t = kOutlet;
      } else {
        const int solid = m.is_solid(i - 1, j) + m.is_solid(i, j);
        t = solid == 2 ? kBuried : solid == 1 ? kWall : kActive;
      }
    }
  }
  for (int j = 0; j <= g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      auto& t = f.v_type[static_cast<std::size_t>(j) * g.nx + i];
      if (j == 0 || j == g.ny) {
        t = kWall;
      } else {
        const int solid = m.is_solid(i, j - 1) + m.is_solid(i, j);
        t = solid == 2 ? kBuried : solid == 1 ? kWall : kActive;
      }
    }
  }
  return f;
}

// Pressure-correction operator on fluid cells with homogeneous Neumann
// conditions on every wall and object face. One cell is pinned to remove the
// constant null space; the gauge is reset to zero mean afterwards.
class PoissonSolver {
 public:
  PoissonSolver(const Grid& g, const CellMask& m) : grid_(g), mask_(m) {
    unknown_.assign(g.cells(), -1);
    int count = 0;
    pinned_ = -1;
    for (std::size_t c = 0; c < g.cells(); ++c) {
      if (m.solid[c]) continue;
      if (pinned_ < 0) {
        pinned_ = static_cast<int>(c);
        continue;
      }
      unknown_[c] = count++;
    }
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(count) * 5);
    for (int j = 0; j < g.ny; ++j) {
      for (int i = 0; i < g.nx; ++i) {
        const std::size_t c = g.cell(i, j);
        if (m.solid[c] || unknown_[c] < 0) continue;
        const int row = unknown_[c];
        double diag = 0.0;
        auto couple = [&](int ni, int nj) {
          if (ni < 0 || nj < 0 || ni >= g.nx || nj >= g.ny) return;
          const std::size_t n = g.cell(ni, nj);
          if (m.solid[n]) return;
          diag += 1.0;
          if (unknown_[n] >= 0) triplets.emplace_back(row, unknown_[n], -1.0);
        };
        couple(i - 1, j);
        couple(i + 1, j);
        couple(i, j - 1);
        couple(i, j + 1);
        triplets.emplace_back(row, row, diag);
      }
    }
    Eigen::SparseMatrix<double> a(count, count);
    a.setFromTriplets(triplets.begin(), triplets.end());
    solver_.compute(a);
    if (solver_.info() != Eigen::Success) throw Error(ErrorCode::kFactorization, "pressure operator factorization failed");
    rhs_.resize(count);
  }

  // Solves lap(phi) = div on fluid cells (dx = dy) and returns phi with zero mean.
  void solve(const std::vector<double>& divergence, std::vector<double>& phi) {
    const double h2 = grid_.dx * grid_.dx;
    for (std::size_t c = 0; c < grid_.cells(); ++c) {
      if (unknown_[c] >= 0) rhs_[unknown_[c]] = -h2 * divergence[c];
    }
    const Eigen::VectorXd x = solver_.solve(rhs_);
    phi.assign(grid_.cells(), 0.0);
    double sum = 0.0;
    std::size_t fluid = 0;
    for (std::size_t c = 0; c < grid_.cells(); ++c) {
      if (mask_.solid[c]) continue;
      phi[c] = unknown_[c] >= 0 ? x[unknown_[c]] : 0.0;
      sum += phi[c];
      ++fluid;
    }
    const double mean = sum / static_cast<double>(fluid);
    for (std::size_t c = 0; c < grid_.cells(); ++c) {
      if (!mask_.solid[c]) phi[c] -= mean;
    }
  }

 private:
  const Grid& grid_;
  const CellMask& mask_;
  std::vector<int> unknown_;
  int pinned_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
  Eigen::VectorXd rhs_;
};

void apply_face_conditions(FlowField& f, const FaceLayout& layout) {
  const Grid& g = f.grid;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i <= g.nx; ++i) {
      const auto t = layout.u_type[static_cast<std::size_t>(j) * (g.nx + 1) + i];
      if (t == kInlet) f.u_at(i, j) = f.params.v_in;
      if (t == kWall || t == kBuried) f.u_at(i, j) = 0.0;
    }
  }
  for (int j = 0; j <= g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const auto t = layout.v_type[static_cast<std::size_t>(j) * g.nx + i];
      if (t == kWall || t == kBuried) f.v_at(i, j) = 0.0;
    }
  }
}

// Zero-gradient outflow rescaled so the outlet carries exactly the inflow;
// this keeps the all-Neumann pressure problem compatible.
void apply_outlet(FlowField& f) {
  const Grid& g = f.grid;
  double inflow = 0.0;
  double outflow = 0.0;
  for (int j = 0; j < g.ny; ++j) {
    f.u_at(g.nx, j) = f.u_at(g.nx - 1, j);
    inflow += f.u_at(0, j);
    outflow += f.u_at(g.nx, j);
  }
  if (outflow > 0.0) {
    const double scale = inflow / outflow;
    for (int j = 0; j < g.ny; ++j) f.u_at(g.nx, j) *= scale;
  } else {
    for (int j = 0; j < g.ny; ++j) f.u_at(g.nx, j) = f.params.v_in;
  }
}

double upwind(double vel, double back, double centre, double fwd, double h) {
  return vel > 0.0 ? vel * (centre - back) / h : vel * (fwd - centre) / h;
}

void compute_divergence(const FlowField& f, std::vector<double>& div) {
  const Grid& g = f.grid;
  div.assign(g.cells(), 0.0);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      if (f.mask.is_solid(i, j)) continue;
      div[g.cell(i, j)] = (f.u_at(i + 1, j) - f.u_at(i, j)) / g.dx + (f.v_at(i, j + 1) - f.v_at(i, j)) / g.dy;
    }
  }
}

}  // namespace

void FluidParams::validate() const {
  if (!(rho > 0) || !(nu > 0) || !(v_in > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "fluid parameters must be strictly positive");
  }
}

std::size_t CellMask::solid_count() const {
  return static_cast<std::size_t>(std::count(solid.begin(), solid.end(), std::uint8_t{1}));
}

CellMask CellMask::empty(const Grid& grid) {
  return CellMask{grid.nx, grid.ny, std::vector<std::uint8_t>(grid.cells(), 0)};
}

CellMask CellMask::mirrored() const {
  CellMask out{nx, ny, std::vector<std::uint8_t>(solid.size(), 0)};
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      out.solid[static_cast<std::size_t>(ny - 1 - j) * nx + i] = solid[static_cast<std::size_t>(j) * nx + i];
    }
  }
  return out;
}

FlowField FlowField::uniform(const Grid& grid, const CellMask& mask, const FluidParams& params) {
  FlowField f;
  f.grid = grid;
  f.mask = mask;
  f.params = params;
  f.u.assign(static_cast<std::size_t>(grid.nx + 1) * grid.ny, params.v_in);
  f.v.assign(static_cast<std::size_t>(grid.nx) * (grid.ny + 1), 0.0);
  f.p.assign(grid.cells(), 0.0);
  apply_face_conditions(f, classify_faces(grid, mask));
  return f;
}

Grid build_grid(double lx, double ly, double resolution) {
  if (!(lx > 0) || !(ly > 0) || !(resolution > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "domain extents and resolution must be positive");
  }
  Grid g;
  g.nx = static_cast<int>(std::lround(lx * resolution));
  g.ny = static_cast<int>(std::lround(ly * resolution));
  if (g.nx < 32 || g.ny < 32) {
    throw Error(ErrorCode::kInvalidArgument,
                "grid " + std::to_string(g.nx) + "x" + std::to_string(g.ny) + " is below 32 cells per direction");
  }
  g.dx = lx / g.nx;
  g.dy = ly / g.ny;
  if (std::abs(g.dx - g.dy) > 1e-12 * g.dx) throw Error(ErrorCode::kInvalidArgument, "cells are not square after rounding");
  g.dy = g.dx;
  return g;
}

CellMask mask_object(const Grid& grid, const shapegen::ShapeContour& contour) {
  constexpr int kClearance = 4;
  const auto& poly = contour.polyline;
  if (poly.size() < 3) throw Error(ErrorCode::kInvalidShape, "contour has fewer than 3 points");
  double xmin = poly[0].x, xmax = poly[0].x, ymin = poly[0].y, ymax = poly[0].y;
  for (const auto& pt : poly) {
    xmin = std::min(xmin, pt.x);
    xmax = std::max(xmax, pt.x);
    ymin = std::min(ymin, pt.y);
    ymax = std::max(ymax, pt.y);
  }
  const double margin = kClearance * grid.dx;
  if (xmin < margin || ymin < margin || xmax > grid.lx() - margin || ymax > grid.ly() - margin) {
    throw Error(ErrorCode::kClearance, "object closer than 4 cells to a wall");
  }
  if ((xmax - xmin) < kClearance * grid.dx || (ymax - ymin) < kClearance * grid.dy) {
    throw Error(ErrorCode::kDegenerate, "object spans fewer than 4 cells");
  }

  CellMask mask{grid.nx, grid.ny,
                shapegen::fill_lattice(poly, grid.nx, grid.ny, 0.5 * grid.dx, 0.5 * grid.dy, grid.dx, grid.dy)};
  if (mask.solid_count() == 0) throw Error(ErrorCode::kDegenerate, "no cell centre inside the object");

  // Solid cells must form one 4-connected component; fluid pockets cut off
  // from the outer flow are absorbed into the object.
  auto flood = [&](std::uint8_t value, std::size_t seed, std::vector<std::uint8_t>& seen) {
    std::queue<std::size_t> q;
    q.push(seed);
    seen[seed] = 1;
    std::size_t size = 0;
    while (!q.empty()) {
      const std::size_t c = q.front();
      q.pop();
      ++size;
      const int i = static_cast<int>(c % grid.nx);
      const int j = static_cast<int>(c / grid.nx);
      const int nb[4][2] = {{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= grid.nx || n[1] >= grid.ny) continue;
        const std::size_t k = grid.cell(n[0], n[1]);
        if (!seen[k] && mask.solid[k] == value) {
          seen[k] = 1;
          q.push(k);
        }
      }
    }
    return size;
  };
  std::vector<std::uint8_t> seen(grid.cells(), 0);
  const std::size_t first_solid =
      static_cast<std::size_t>(std::find(mask.solid.begin(), mask.solid.end(), std::uint8_t{1}) - mask.solid.begin());
  if (flood(1, first_solid, seen) != mask.solid_count()) {
    throw Error(ErrorCode::kMultipleComponents, "object rasterizes into several solid components");
  }
  std::fill(seen.begin(), seen.end(), 0);
  flood(0, 0, seen);  // cell (0,0) is fluid by clearance
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    if (!mask.solid[c] && !seen[c]) mask.solid[c] = 1;
  }
  return mask;
}

FlowField solve_steady(const Grid& grid, const CellMask& mask, const FluidParams& params, const SolverConfig& cfg,
                       const FlowField* initial) {
  params.validate();
  if (mask.nx != grid.nx || mask.ny != grid.ny || mask.solid.size() != grid.cells()) {
    throw Error(ErrorCode::kInvalidArgument, "mask does not match grid");
  }
  const FaceLayout layout = classify_faces(grid, mask);
  FlowField f;
  if (initial) {
    if (initial->grid.nx != grid.nx || initial->grid.ny != grid.ny) {
      throw Error(ErrorCode::kInvalidArgument, "initial field lives on a different grid");
    }
    f = *initial;
    f.mask = mask;
    f.params = params;
    f.residual_history.clear();
    apply_face_conditions(f, layout);
  } else {
    f = FlowField::uniform(grid, mask, params);
  }
  apply_outlet(f);

  PoissonSolver poisson(grid, mask);
  const int nx = grid.nx;
  const int ny = grid.ny;
  const double dx = grid.dx;
  const double dy = grid.dy;
  const double nu = params.nu;
  const double diffusive_dt = dx * dx / (4.0 * nu);

  std::vector<double> u_star = f.u;
  std::vector<double> v_star = f.v;
  std::vector<double> div;
  std::vector<double> phi(grid.cells(), 0.0);
  double dt = 0.0;

  auto U = [&](int i, int j) { return f.u[static_cast<std::size_t>(j) * (nx + 1) + i]; };
  auto V = [&](int i, int j) { return f.v[static_cast<std::size_t>(j) * nx + i]; };
  auto ut = [&](int i, int j) { return layout.u_type[static_cast<std::size_t>(j) * (nx + 1) + i]; };
  auto vt = [&](int i, int j) { return layout.v_type[static_cast<std::size_t>(j) * nx + i]; };

  f.converged = false;
  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    double vmax = params.v_in;
    for (double x : f.u) vmax = std::max(vmax, std::abs(x));
    for (double x : f.v) vmax = std::max(vmax, std::abs(x));
    dt = cfg.cfl * std::min(dx / vmax, diffusive_dt);

    // Momentum predictor: first-order upwind advection, central diffusion.
    u_star = f.u;
    for (int j = 0; j < ny; ++j) {
      for (int i = 1; i < nx; ++i) {
        if (ut(i, j) != kActive) continue;
        const double uc = U(i, j);
        const double ue = U(i + 1, j);
        const double uw = U(i - 1, j);
        const double un = j + 1 < ny ? (ut(i, j + 1) == kBuried ? -uc : U(i, j + 1)) : uc;
        const double us = j > 0 ? (ut(i, j - 1) == kBuried ? -uc : U(i, j - 1)) : uc;
        const double va = 0.25 * (V(i - 1, j) + V(i, j) + V(i - 1, j + 1) + V(i, j + 1));
        const double adv = upwind(uc, uw, uc, ue, dx) + upwind(va, us, uc, un, dy);
        const double lap = (ue - 2.0 * uc + uw) / (dx * dx) + (un - 2.0 * uc + us) / (dy * dy);
        u_star[static_cast<std::size_t>(j) * (nx + 1) + i] = uc + dt * (nu * lap - adv);
      }
    }
    v_star = f.v;
    for (int j = 1; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        if (vt(i, j) != kActive) continue;
        const double vc = V(i, j);
        const double vn = V(i, j + 1);
        const double vs = V(i, j - 1);
        const double ve = i + 1 < nx ? (vt(i + 1, j) == kBuried ? -vc : V(i + 1, j)) : vc;
        const double vw = i > 0 ? (vt(i - 1, j) == kBuried ? -vc : V(i - 1, j)) : -vc;
        const double ua = 0.25 * (U(i, j - 1) + U(i + 1, j - 1) + U(i, j) + U(i + 1, j));
        const double adv = upwind(ua, vw, vc, ve, dx) + upwind(vc, vs, vc, vn, dy);
        const double lap = (ve - 2.0 * vc + vw) / (dx * dx) + (vn - 2.0 * vc + vs) / (dy * dy);
        v_star[static_cast<std::size_t>(j) * nx + i] = vc + dt * (nu * lap - adv);
      }
    }

    // Projection.
    std::swap(f.u, u_star);  // f.u <- predicted, u_star <- previous
    std::swap(f.v, v_star);
    apply_outlet(f);
    compute_divergence(f, div);
    poisson.solve(div, phi);
    for (int j = 0; j < ny; ++j) {
      for (int i = 1; i < nx; ++i) {
        if (ut(i, j) == kActive) f.u[static_cast<std::size_t>(j) * (nx + 1) + i] -= (phi[grid.cell(i, j)] - phi[grid.cell(i - 1, j)]) / dx;
      }
    }
    for (int j = 1; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        if (vt(i, j) == kActive) f.v[static_cast<std::size_t>(j) * nx + i] -= (phi[grid.cell(i, j)] - phi[grid.cell(i, j - 1)]) / dy;
      }
    }

    double change = 0.0;
    double scale = 0.0;
    for (std::size_t k = 0; k < f.u.size(); ++k) {
      change = std::max(change, std::abs(f.u[k] - u_star[k]));
      scale = std::max(scale, std::abs(f.u[k]));
    }
    for (std::size_t k = 0; k < f.v.size(); ++k) {
      change = std::max(change, std::abs(f.v[k] - v_star[k]));
      scale = std::max(scale, std::abs(f.v[k]));
    }
    if (!std::isfinite(change) || !std::isfinite(scale) || scale > cfg.divergence_factor * params.v_in) {
      std::ostringstream msg;
      msg << "velocity blew up at iteration " << iter << " (dt=" << dt << ", dx=" << dx << ", nu=" << nu
          << ", v_in=" << params.v_in << ", cfl=" << cfg.cfl << ")";
      throw Error(ErrorCode::kDiverged, msg.str());
    }
    const double rel = change / scale;
    if (cfg.history_stride > 0 && (iter % cfg.history_stride == 0 || iter == 1)) f.residual_history.push_back(rel);
    f.iterations = iter;
    if (rel < cfg.steady_tol) {
      f.converged = true;
      f.residual_history.push_back(rel);
      break;
    }
  }

  f.p.assign(grid.cells(), 0.0);
  if (dt > 0.0) {
    for (std::size_t c = 0; c < grid.cells(); ++c) f.p[c] = params.rho * phi[c] / dt;
  }
  return f;
}

FlowField resample_field(const FlowField& src, const Grid& grid, const CellMask& mask) {
  if (std::abs(src.grid.lx() - grid.lx()) > 1e-9 || std::abs(src.grid.ly() - grid.ly()) > 1e-9) {
    throw Error(ErrorCode::kInvalidArgument, "resample_field needs grids over the same domain");
  }
  // Bilinear lookup of a staggered array whose sample (a, b) sits at
  // ((a + ox) h, (b + oy) h).
  auto sample = [](const std::vector<double>& data, int na, int nb, double ox, double oy, double h, double x, double y) {
    const double a = std::clamp(x / h - ox, 0.0, na - 1.0);
    const double b = std::clamp(y / h - oy, 0.0, nb - 1.0);
    const int a0 = std::min(static_cast<int>(a), na - 2);
    const int b0 = std::min(static_cast<int>(b), nb - 2);
    const double fa = a - a0;
    const double fb = b - b0;
    auto at = [&](int i, int j) { return data[static_cast<std::size_t>(j) * na + i]; };
    return (1 - fb) * ((1 - fa) * at(a0, b0) + fa * at(a0 + 1, b0)) + fb * ((1 - fa) * at(a0, b0 + 1) + fa * at(a0 + 1, b0 + 1));
  };
  FlowField f = FlowField::uniform(grid, mask, src.params);
  const double h = src.grid.dx;
  for (int j = 0; j < grid.ny; ++j) {
    for (int i = 0; i <= grid.nx; ++i) {
      f.u_at(i, j) = sample(src.u, src.grid.nx + 1, src.grid.ny, 0.0, 0.5, h, i * grid.dx, (j + 0.5) * grid.dy);
    }
  }
  for (int j = 0; j <= grid.ny; ++j) {
    for (int i = 0; i < grid.nx; ++i) {
      f.v_at(i, j) = sample(src.v, src.grid.nx, src.grid.ny + 1, 0.5, 0.0, h, (i + 0.5) * grid.dx, j * grid.dy);
    }
  }
  apply_face_conditions(f, classify_faces(grid, mask));
  return f;
}

Forces drag_force(const FlowField& flow) {
  if (!flow.converged) throw Error(ErrorCode::kNotConverged, "forces requested on an unconverged flow");
  const Grid& g = flow.grid;
  const CellMask& m = flow.mask;
  const double eta = flow.params.eta();
  Forces f;
  auto fluid = [&](int i, int j) { return i >= 0 && j >= 0 && i < g.nx && j < g.ny && !m.is_solid(i, j); };
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      if (!m.is_solid(i, j)) continue;
      // Pressure acts along -n on each exposed face; shear from a one-sided
      // difference between the wall (velocity zero) and the adjacent cell centre.
      if (fluid(i + 1, j)) {
        f.drag -= flow.p_at(i + 1, j) * g.dy;
        const double vt = 0.5 * (flow.v_at(i + 1, j) + flow.v_at(i + 1, j + 1));
        f.lift += eta * vt / (0.5 * g.dx) * g.dy;
      }
      if (fluid(i - 1, j)) {
        f.drag += flow.p_at(i - 1, j) * g.dy;
        const double vt = 0.5 * (flow.v_at(i - 1, j) + flow.v_at(i - 1, j + 1));
        f.lift += eta * vt / (0.5 * g.dx) * g.dy;
      }
      if (fluid(i, j + 1)) {
        f.lift -= flow.p_at(i, j + 1) * g.dx;
        const double ut = 0.5 * (flow.u_at(i, j + 1) + flow.u_at(i + 1, j + 1));
        f.drag += eta * ut / (0.5 * g.dy) * g.dx;
      }
      if (fluid(i, j - 1)) {
        f.lift += flow.p_at(i, j - 1) * g.dx;
        const double ut = 0.5 * (flow.u_at(i, j - 1) + flow.u_at(i + 1, j - 1));
        f.drag += eta * ut / (0.5 * g.dy) * g.dx;
      }
    }
  }
  return f;
}

double drag_coefficient(double drag_force, const FluidParams& params, double frontal_area) {
  if (!(frontal_area > 0)) throw Error(ErrorCode::kInvalidArgument, "frontal area must be positive");
  if (!(params.v_in > 0) || !(params.rho > 0)) throw Error(ErrorCode::kInvalidArgument, "rho and v_in must be positive");
  return 2.0 * drag_force / (params.rho * params.v_in * params.v_in * frontal_area);
}

double divergence_max(const FlowField& flow) {
  std::vector<double> div;
  compute_divergence(flow, div);
  double worst = 0.0;
  for (double d : div) worst = std::max(worst, std::abs(d));
  return worst;
}

DragRecord simulate_contour(const std::string& shape_id, const shapegen::ShapeContour& contour, const Grid& grid,
                            const FluidParams& params, const SolverConfig& cfg, FlowField* field_out) {
  DragRecord rec;
  rec.shape_id = shape_id;
  rec.frontal_area = shapegen::frontal_area(contour);
  const CellMask mask = mask_object(grid, contour);
  FlowField flow = solve_steady(grid, mask, params, cfg);
  rec.converged = flow.converged;
  rec.iterations = flow.iterations;
  if (flow.converged) {
    const Forces forces = drag_force(flow);
    rec.drag_force = forces.drag;
    rec.lift_force = forces.lift;
    rec.cd = drag_coefficient(forces.drag, params, rec.frontal_area);
  } else {
    rec.drag_force = rec.lift_force = rec.cd = std::numeric_limits<double>::quiet_NaN();
  }
  if (field_out) *field_out = std::move(flow);
  return rec;
}

std::vector<double> velocity_magnitude(const FlowField& flow) {
  const Grid& g = flow.grid;
  std::vector<double> out(g.cells(), 0.0);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const double uc = 0.5 * (flow.u_at(i, j) + flow.u_at(i + 1, j));
      const double vc = 0.5 * (flow.v_at(i, j) + flow.v_at(i, j + 1));
      out[static_cast<std::size_t>(g.ny - 1 - j) * g.nx + i] = std::hypot(uc, vc);
    }
  }
  return out;
}

namespace {

void write_le(std::ofstream& out, const std::vector<double>& data) {
  static_assert(std::endian::native == std::endian::little, "field dumps assume a little-endian host");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
}

void read_le(std::ifstream& in, std::vector<double>& data) {
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
}

}  // namespace

void write_field_dump(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  char header[160];
  std::snprintf(header, sizeof header, "%d %d %.17g %.17g\n", flow.grid.nx, flow.grid.ny, flow.grid.dx, flow.grid.dy);
  out << header;
  write_le(out, flow.u);
  write_le(out, flow.v);
  write_le(out, flow.p);
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

FlowField read_field_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  FlowField f;
  if (!(hs >> f.grid.nx >> f.grid.ny >> f.grid.dx >> f.grid.dy) || f.grid.nx <= 0 || f.grid.ny <= 0) {
    throw Error(ErrorCode::kFormat, "bad field dump header in " + path.string());
  }
  f.mask = CellMask::empty(f.grid);
  f.u.resize(static_cast<std::size_t>(f.grid.nx + 1) * f.grid.ny);
  f.v.resize(static_cast<std::size_t>(f.grid.nx) * (f.grid.ny + 1));
  f.p.resize(f.grid.cells());
  read_le(in, f.u);
  read_le(in, f.v);
  read_le(in, f.p);
  if (!in) throw Error(ErrorCode::kFormat, "truncated field dump " + path.string());
  f.converged = true;
  return f;
}

}  // namespace dragopt::flowsim
