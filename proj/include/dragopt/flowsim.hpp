#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dragopt/shapegen.hpp"

namespace dragopt::flowsim {

struct FluidParams {
  double rho = 1.0;
  double nu = 0.02;
  double v_in = 1.0;

  double eta() const { return rho * nu; }
  void validate() const;
};

// Uniform square-cell grid over [0, nx*dx] x [0, ny*dy]; cell (i, j) has
// its centre at ((i + 0.5) dx, (j + 0.5) dy), j = 0 at the bottom wall.
struct Grid {
  int nx = 0;
  int ny = 0;
  double dx = 0.0;
  double dy = 0.0;

  double lx() const { return nx * dx; }
  double ly() const { return ny * dy; }
  std::size_t cells() const { return static_cast<std::size_t>(nx) * ny; }
  std::size_t cell(int i, int j) const { return static_cast<std::size_t>(j) * nx + i; }
};

struct CellMask {
  int nx = 0;
  int ny = 0;
  std::vector<std::uint8_t> solid;  // indexed like Grid::cell

  bool is_solid(int i, int j) const { return solid[static_cast<std::size_t>(j) * nx + i] != 0; }
  std::size_t solid_count() const;
  static CellMask empty(const Grid& grid);
  // Reflection about the horizontal centreline.
  CellMask mirrored() const;
};

struct SolverConfig {
  double steady_tol = 1e-6;
  int max_iters = 200000;
  double cfl = 0.4;
  double divergence_factor = 1e3;  // abort once |velocity| exceeds this times v_in
  int history_stride = 100;        // residual history sampling
};

// Staggered MAC layout: u on vertical faces ((nx+1) x ny), v on horizontal
// faces (nx x (ny+1)), p at cell centres.
struct FlowField {
  Grid grid;
  CellMask mask;
  FluidParams params;
  std::vector<double> u;
  std::vector<double> v;
  std::vector<double> p;
  std::vector<double> residual_history;
  int iterations = 0;
  bool converged = false;

  double& u_at(int i, int j) { return u[static_cast<std::size_t>(j) * (grid.nx + 1) + i]; }
  double u_at(int i, int j) const { return u[static_cast<std::size_t>(j) * (grid.nx + 1) + i]; }
  double& v_at(int i, int j) { return v[static_cast<std::size_t>(j) * grid.nx + i]; }
  double v_at(int i, int j) const { return v[static_cast<std::size_t>(j) * grid.nx + i]; }
  double p_at(int i, int j) const { return p[grid.cell(i, j)]; }

  // Uniform inflow with the mask applied (solid faces zeroed).
  static FlowField uniform(const Grid& grid, const CellMask& mask, const FluidParams& params);
};

struct Forces {
  double drag = 0.0;  // x-component
  double lift = 0.0;  // y-component
};

struct DragRecord {
  std::string shape_id;
  double frontal_area = 0.0;
  double drag_force = 0.0;
  double lift_force = 0.0;
  double cd = 0.0;
  bool converged = false;
  int iterations = 0;
};

Grid build_grid(double lx, double ly, double resolution);

// Cells whose centre lies inside the contour are solid. Requires a clearance
// of at least four cells from every wall and a single solid component.
CellMask mask_object(const Grid& grid, const shapegen::ShapeContour& contour);

// Pseudo-time Chorin projection to steady state. `initial`, if given, seeds
// the iteration (it must live on the same grid); the steady solution does
// not depend on it.
FlowField solve_steady(const Grid& grid, const CellMask& mask, const FluidParams& params, const SolverConfig& cfg = {},
                       const FlowField* initial = nullptr);

// Interpolate a field onto another grid covering the same domain; used to
// warm-start fine-grid runs from coarse solutions.
FlowField resample_field(const FlowField& source, const Grid& grid, const CellMask& mask);

Forces drag_force(const FlowField& flow);

double drag_coefficient(double drag_force, const FluidParams& params, double frontal_area);

double divergence_max(const FlowField& flow);

// Full oracle: mask, solve, integrate forces and normalise by the frontal extent.
DragRecord simulate_contour(const std::string& shape_id, const shapegen::ShapeContour& contour, const Grid& grid,
                            const FluidParams& params, const SolverConfig& cfg, FlowField* field_out = nullptr);

// Velocity magnitude at cell centres (zero inside the object), row-major with
// row 0 at the top of the domain.
std::vector<double> velocity_magnitude(const FlowField& flow);

// Header "nx ny dx dy\n" followed by little-endian float64 u, v, p.
void write_field_dump(const std::filesystem::path& path, const FlowField& flow);
FlowField read_field_dump(const std::filesystem::path& path);

}  // namespace dragopt::flowsim
