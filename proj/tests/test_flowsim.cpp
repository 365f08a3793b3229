#include <cmath>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "dragopt/error.hpp"
#include "dragopt/flowsim.hpp"

using namespace dragopt;
using namespace dragopt::flowsim;

namespace {

shapegen::ShapeContour circle(double r, shapegen::Point c = {1.25, 1.5}, int n = 256) {
  shapegen::ShapeContour s;
  for (int j = 0; j < n; ++j) {
    const double t = 2.0 * std::numbers::pi * j / n;
    s.polyline.push_back({c.x + r * std::cos(t), c.y + r * std::sin(t)});
  }
  return s;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

// Coarse but converged run shared by several cases.
const FlowField& coarse_cylinder() {
  static const FlowField flow = [] {
    const Grid g = build_grid(4.0, 3.0, 12.0);
    return solve_steady(g, mask_object(g, circle(0.5)), FluidParams{});
  }();
  return flow;
}

}  // namespace

TEST_CASE("build_grid sizes and limits") {
  const Grid g = build_grid(4.0, 3.0, 64.0);
  CHECK(g.nx == 256);
  CHECK(g.ny == 192);
  CHECK(g.dx == doctest::Approx(1.0 / 64));
  CHECK(build_grid(4.0, 3.0, 128.0).cells() == 4 * g.cells());
  CHECK(code_of([] { build_grid(4.0, 3.0, 8.0); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { build_grid(4.0, 3.0, -1.0); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("mask_object: area, clearance, degenerate") {
  const Grid g = build_grid(4.0, 3.0, 64.0);
  const auto m = mask_object(g, circle(0.5));
  const double expect = std::numbers::pi * 0.25 * 64 * 64;
  CHECK(std::abs(static_cast<double>(m.solid_count()) - expect) < 0.03 * expect);
  CHECK(m.is_solid(80, 96));
  CHECK_FALSE(m.is_solid(0, 0));
  CHECK(code_of([&] { mask_object(g, circle(0.5, {0.55, 1.5})); }) == ErrorCode::kClearance);
  CHECK(code_of([&] { mask_object(g, circle(0.02)); }) == ErrorCode::kDegenerate);

  const auto mm = m.mirrored();
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) CHECK(mm.is_solid(i, j) == m.is_solid(i, g.ny - 1 - j));
}

TEST_CASE("drag_coefficient examples") {
  const auto cd = [](double f, double rho, double v, double a) {
    FluidParams p;
    p.rho = rho;
    p.v_in = v;
    return drag_coefficient(f, p, a);
  };
  CHECK(cd(0, 1, 1, 1) == 0.0);
  CHECK(cd(1, 1, 1, 2) == doctest::Approx(1.0));
  CHECK(cd(2, 1, 2, 1) == doctest::Approx(1.0));
  CHECK(cd(0.7, 1.3, 0.9, 2.0) == doctest::Approx(0.5 * cd(0.7, 1.3, 0.9, 1.0)));
  CHECK(code_of([&] { cd(1, 1, 1, 0); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("divergence_max on synthetic fields") {
  const Grid g = build_grid(4.0, 3.0, 12.0);
  auto f = FlowField::uniform(g, CellMask::empty(g), FluidParams{});
  CHECK(divergence_max(f) < 1e-14);

  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i <= g.nx; ++i) f.u_at(i, j) = (j + 0.5) * g.dy;
  CHECK(divergence_max(f) < 1e-14);

  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i <= g.nx; ++i) f.u_at(i, j) = i * g.dx;
  CHECK(divergence_max(f) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("empty domain converges to the uniform inlet profile") {
  const Grid g = build_grid(4.0, 3.0, 12.0);
  FluidParams p;
  p.v_in = 1.7;
  const auto flow = solve_steady(g, CellMask::empty(g), p);
  REQUIRE(flow.converged);
  for (double u : flow.u) CHECK(std::abs(u - 1.7) < 1e-8);
  for (double v : flow.v) CHECK(std::abs(v) < 1e-8);
  const double p0 = flow.p.front();
  for (double q : flow.p) CHECK(std::abs(q - p0) < 1e-8);
  const auto f = drag_force(flow);
  CHECK(std::abs(f.drag) < 1e-8);
  CHECK(std::abs(f.lift) < 1e-8);
}

TEST_CASE("cylinder: projection, positivity, symmetry") {
  const auto& flow = coarse_cylinder();
  REQUIRE(flow.converged);
  CHECK(divergence_max(flow) < 1e-6 * flow.params.v_in / flow.grid.dx);

  const auto f = drag_force(flow);
  CHECK(f.drag > 0);
  CHECK(std::abs(f.lift) < 0.02 * f.drag);

  // u mirror-symmetric and v antisymmetric about the centreline.
  const Grid& g = flow.grid;
  double umax = 0.0, uerr = 0.0, verr = 0.0;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i <= g.nx; ++i) {
      umax = std::max(umax, std::abs(flow.u_at(i, j)));
      uerr = std::max(uerr, std::abs(flow.u_at(i, j) - flow.u_at(i, g.ny - 1 - j)));
    }
  for (int j = 0; j <= g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) verr = std::max(verr, std::abs(flow.v_at(i, j) + flow.v_at(i, g.ny - j)));
  CHECK(uerr < 0.02 * umax);
  CHECK(verr < 0.02 * umax);

  // Wake behind the body: slower than the inlet on the centreline.
  CHECK(flow.u_at(static_cast<int>(2.0 / g.dx), g.ny / 2) < flow.params.v_in);
}

TEST_CASE("reflected object: same drag, negated lift") {
  const Grid g = build_grid(4.0, 3.0, 12.0);
  // Asymmetric object: an ellipse shifted off the centreline and tilted.
  shapegen::ShapeContour s;
  for (int j = 0; j < 256; ++j) {
    const double t = 2.0 * std::numbers::pi * j / 256;
    const double x = 0.5 * std::cos(t), y = 0.25 * std::sin(t);
    s.polyline.push_back({1.25 + 0.8 * x - 0.6 * y, 1.7 + 0.6 * x + 0.8 * y});
  }
  const auto mask = mask_object(g, s);
  const auto a = solve_steady(g, mask, FluidParams{});
  const auto b = solve_steady(g, mask.mirrored(), FluidParams{});
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  const auto fa = drag_force(a), fb = drag_force(b);
  CHECK(fa.drag > 0);
  CHECK(std::abs(fa.lift) > 1e-3 * fa.drag);
  CHECK(std::abs(fa.drag - fb.drag) < 1e-6 * std::abs(fa.drag));
  CHECK(std::abs(fa.lift + fb.lift) < 1e-6 * std::abs(fa.drag));
}

TEST_CASE("unconverged flows are flagged and refused") {
  const Grid g = build_grid(4.0, 3.0, 12.0);
  SolverConfig cfg;
  cfg.max_iters = 5;
  const auto flow = solve_steady(g, mask_object(g, circle(0.5)), FluidParams{}, cfg);
  CHECK_FALSE(flow.converged);
  CHECK(flow.iterations == 5);
  CHECK(code_of([&] { drag_force(flow); }) == ErrorCode::kNotConverged);

  const auto rec = simulate_contour("c", circle(0.5), g, FluidParams{}, cfg);
  CHECK_FALSE(rec.converged);
  CHECK(std::isnan(rec.cd));
}

TEST_CASE("warm start reaches the same steady state") {
  const auto& cold = coarse_cylinder();
  const Grid& g = cold.grid;
  auto start = cold;
  for (auto& u : start.u) u *= 0.9;
  const auto warm = solve_steady(g, cold.mask, FluidParams{}, SolverConfig{}, &start);
  REQUIRE(warm.converged);
  CHECK(warm.iterations < cold.iterations);
  CHECK(drag_force(warm).drag == doctest::Approx(drag_force(cold).drag).epsilon(1e-3));

  // Resampling a uniform field onto a finer grid keeps it uniform.
  const Grid fine = build_grid(4.0, 3.0, 24.0);
  const auto uni = FlowField::uniform(g, CellMask::empty(g), FluidParams{});
  const auto up = resample_field(uni, fine, CellMask::empty(fine));
  for (double u : up.u) CHECK(u == doctest::Approx(1.0));
  for (double v : up.v) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("simulate_contour and velocity magnitude") {
  const auto& flow = coarse_cylinder();
  const auto rec = simulate_contour("cyl", circle(0.5), flow.grid, FluidParams{}, SolverConfig{});
  CHECK(rec.converged);
  CHECK(rec.shape_id == "cyl");
  CHECK(rec.frontal_area == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rec.cd == doctest::Approx(2.0 * rec.drag_force).epsilon(1e-12));
  CHECK(rec.drag_force == doctest::Approx(drag_force(flow).drag).epsilon(1e-12));

  const auto mag = velocity_magnitude(flow);
  REQUIRE(mag.size() == flow.grid.cells());
  const int row = flow.grid.ny - 1 - static_cast<int>(1.5 / flow.grid.dy);
  const int col = static_cast<int>(1.25 / flow.grid.dx);
  CHECK(mag[static_cast<std::size_t>(row) * flow.grid.nx + col] == 0.0);
  CHECK(mag[0] > 0.5);
}

TEST_CASE("field dump round trip") {
  const auto& flow = coarse_cylinder();
  const auto path = std::filesystem::temp_directory_path() / "dragopt_test_field.bin";
  write_field_dump(path, flow);
  const auto back = read_field_dump(path);
  CHECK(back.grid.nx == flow.grid.nx);
  CHECK(back.grid.ny == flow.grid.ny);
  CHECK(back.grid.dx == flow.grid.dx);
  CHECK(back.u == flow.u);
  CHECK(back.v == flow.v);
  CHECK(back.p == flow.p);
  std::filesystem::remove(path);
  CHECK(code_of([&] { read_field_dump(path); }) == ErrorCode::kIo);
}
