#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <queue>

#include "doctest.h"
#include "dragopt/error.hpp"
#include "dragopt/shapegen.hpp"

using namespace dragopt;
using namespace dragopt::shapegen;

namespace {

RawPolarShape constant_shape(int n, double r, Point c = {1.25, 1.5}) {
  RawPolarShape s;
  s.center = c;
  for (int j = 0; j < n; ++j) {
    s.angles.push_back(2.0 * std::numbers::pi * j / n);
    s.radii.push_back(r);
  }
  return s;
}

ShapeContour ellipse(double a, double b, Point c, int n = 256) {
  ShapeContour e;
  for (int j = 0; j < n; ++j) {
    const double t = 2.0 * std::numbers::pi * j / n;
    e.polyline.push_back({c.x + a * std::cos(t), c.y + b * std::sin(t)});
  }
  return e;
}

// Independent flood fill, 4-connectivity.
int components(const std::vector<std::uint8_t>& px, int w, int h) {
  std::vector<int> label(px.size(), 0);
  int count = 0;
  for (int s = 0; s < w * h; ++s) {
    if (!px[s] || label[s]) continue;
    ++count;
    std::queue<int> q;
    q.push(s);
    label[s] = count;
    while (!q.empty()) {
      const int k = q.front();
      q.pop();
      const int r = k / w, c = k % w;
      const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const int m = n[0] * w + n[1];
        if (px[m] && !label[m]) {
          label[m] = count;
          q.push(m);
        }
      }
    }
  }
  return count;
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

}  // namespace

TEST_CASE("sample_raw_shape: degenerate range, determinism, mean radius") {
  const auto a = sample_raw_shape(7, 12, 0.5, 0.5, {1.25, 1.5});
  REQUIRE(a.radii.size() == 12);
  for (double r : a.radii) CHECK(r == 0.5);
  CHECK(a.angles.front() == 0.0);
  for (int j = 1; j < 12; ++j) CHECK(a.angles[j] == doctest::Approx(2.0 * std::numbers::pi * j / 12).epsilon(1e-15));

  const auto b1 = sample_raw_shape(7, 16, 0.3, 0.7, {1.25, 1.5});
  const auto b2 = sample_raw_shape(7, 16, 0.3, 0.7, {1.25, 1.5});
  CHECK(b1.radii == b2.radii);
  CHECK(b1.angles == b2.angles);
  CHECK(sample_raw_shape(8, 16, 0.3, 0.7, {1.25, 1.5}).radii != b1.radii);

  const auto big = sample_raw_shape(7, 10000, 0.3, 0.7, {1.25, 1.5});
  double mean = 0.0;
  for (double r : big.radii) {
    CHECK(r >= 0.3);
    CHECK(r <= 0.7);
    mean += r;
  }
  CHECK(std::abs(mean / 10000.0 - 0.5) < 0.01);

  CHECK(code_of([] { sample_raw_shape(1, 7, 0.3, 0.7, {1, 1}); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { sample_raw_shape(1, 16, 0.7, 0.3, {1, 1}); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { sample_raw_shape(1, 16, 0.0, 0.3, {1, 1}); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("fourier_smooth: circle, full basis, single harmonic") {
  for (int K : {1, 3, 6}) {
    const auto c = fourier_smooth(constant_shape(16, 0.5), K);
    REQUIRE(c.polyline.size() == 256);
    for (const auto& p : c.polyline) CHECK(std::hypot(p.x - 1.25, p.y - 1.5) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(signed_area(c.polyline) > 0);
  }

  for (int n : {16, 17}) {
    const auto raw = sample_raw_shape(3, n, 0.45, 0.55, {1.25, 1.5});
    const auto c = fourier_smooth(raw, n / 2, n);
    // The polyline may come back reversed to keep it counter-clockwise; the
    // inputs here are already counter-clockwise.
    for (int j = 0; j < n; ++j) {
      const double x = raw.center.x + raw.radii[j] * std::cos(raw.angles[j]);
      const double y = raw.center.y + raw.radii[j] * std::sin(raw.angles[j]);
      CHECK(std::abs(c.polyline[j].x - x) < 1e-9);
      CHECK(std::abs(c.polyline[j].y - y) < 1e-9);
    }
  }

  // K = 1: z(t) = c0 + a e^{it} + b e^{-it}, an ellipse. Check it fits the
  // conic through three of its points at every other point.
  const auto c = fourier_smooth(sample_raw_shape(11, 16, 0.3, 0.7, {1.25, 1.5}), 1);
  Point ctr{0, 0};
  for (const auto& p : c.polyline) {
    ctr.x += p.x / c.polyline.size();
    ctr.y += p.y / c.polyline.size();
  }
  // Quadratic form A dx^2 + B dx dy + C dy^2 = 1 from three points.
  auto row = [&](const Point& p) {
    const double dx = p.x - ctr.x, dy = p.y - ctr.y;
    return std::array<double, 3>{dx * dx, dx * dy, dy * dy};
  };
  const auto r0 = row(c.polyline[0]), r1 = row(c.polyline[40]), r2 = row(c.polyline[90]);
  auto det3 = [](std::array<double, 3> a, std::array<double, 3> b, std::array<double, 3> d) {
    return a[0] * (b[1] * d[2] - b[2] * d[1]) - a[1] * (b[0] * d[2] - b[2] * d[0]) + a[2] * (b[0] * d[1] - b[1] * d[0]);
  };
  const double D = det3(r0, r1, r2);
  const std::array<double, 3> one{1, 1, 1};
  const double A = det3({one[0], r0[1], r0[2]}, {one[1], r1[1], r1[2]}, {one[2], r2[1], r2[2]}) / D;
  const double B = det3({r0[0], one[0], r0[2]}, {r1[0], one[1], r1[2]}, {r2[0], one[2], r2[2]}) / D;
  const double C = det3({r0[0], r0[1], one[0]}, {r1[0], r1[1], one[1]}, {r2[0], r2[1], one[2]}) / D;
  for (const auto& p : c.polyline) {
    const auto r = row(p);
    CHECK(A * r[0] + B * r[1] + C * r[2] == doctest::Approx(1.0).epsilon(1e-9));
  }

  CHECK(code_of([] { fourier_smooth(constant_shape(16, 0.5), 0); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("fourier_smooth: self-intersection is reported") {
  // Alternating radii with a full basis reproduce a star; resampled with few
  // points and a large swing it crosses itself.
  RawPolarShape s = constant_shape(16, 0.5);
  for (int j = 0; j < 16; ++j) s.radii[j] = (j % 2) ? 0.02 : 0.7;
  s.angles[3] = s.angles[2] + 1e-3;
  bool reported = false;
  try {
    fourier_smooth(s, 8, 256);
  } catch (const Error& e) {
    reported = e.code() == ErrorCode::kSelfIntersecting;
  }
  CHECK(reported);
}

TEST_CASE("generate_shape gives valid contours inside the domain") {
  ShapeConfig cfg;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    int attempt = -1;
    const auto c = generate_shape(seed, cfg, &attempt);
    CHECK(attempt >= 0);
    CHECK(is_simple(c.polyline));
    CHECK(signed_area(c.polyline) > 0);
    for (const auto& p : c.polyline) {
      CHECK(p.x > 0);
      CHECK(p.x < 4.0);
      CHECK(p.y > 0);
      CHECK(p.y < 3.0);
    }
    const auto again = generate_shape(seed, cfg);
    CHECK(again.polyline.front().x == c.polyline.front().x);
  }
}

TEST_CASE("rasterize: circle area, single component, diameter") {
  const DomainMapping m;
  const double rpx = 10.0 * m.pixel_width();
  const auto circle = ellipse(rpx, rpx, {2.0, 1.5}, 512);
  const auto img = rasterize(circle, m);
  REQUIRE(img.pixels.size() == 112u * 84u);
  CHECK(std::abs(static_cast<double>(img.count()) - std::numbers::pi * 100.0) < 0.05 * std::numbers::pi * 100.0);
  CHECK(components(img.pixels, 112, 84) == 1);

  // Every pixel agrees with the even-odd test on its centre.
  for (int r = 0; r < 84; ++r) {
    for (int c = 0; c < 112; ++c) CHECK(img.at(r, c) == (contains(circle.polyline, m.pixel_center(r, c)) ? 1 : 0));
  }

  // Row 0 is the domain top: an object high up lands in low rows.
  const auto high = rasterize(ellipse(0.2, 0.2, {2.0, 2.5}), m);
  int min_row = 84;
  for (int r = 0; r < 84; ++r)
    for (int c = 0; c < 112; ++c)
      if (high.at(r, c)) min_row = std::min(min_row, r);
  CHECK(min_row < 20);

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto c = generate_shape(seed, ShapeConfig{});
    CHECK(components(rasterize(c, m).pixels, 112, 84) == 1);
  }

  CHECK(code_of([&] { rasterize(ellipse(0.5, 0.5, {0.3, 1.5}), m); }) == ErrorCode::kBorderContact);
}

TEST_CASE("rasterize is monotone under scaling about the centroid") {
  const auto c = generate_shape(5, ShapeConfig{});
  Point g{0, 0};
  for (const auto& p : c.polyline) {
    g.x += p.x / c.polyline.size();
    g.y += p.y / c.polyline.size();
  }
  ShapeContour big = c;
  for (auto& p : big.polyline) p = {g.x + 1.2 * (p.x - g.x), g.y + 1.2 * (p.y - g.y)};
  const auto a = rasterize(c);
  const auto b = rasterize(big);
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    if (a.pixels[i]) CHECK(b.pixels[i] == 1);
  }
}

TEST_CASE("frontal_area examples") {
  CHECK(frontal_area(ellipse(0.5, 0.5, {1.25, 1.5})) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(frontal_area(ellipse(0.6, 0.3, {1.25, 1.5})) == doctest::Approx(0.6).epsilon(1e-12));

  const auto c = generate_shape(9, ShapeConfig{});
  double xmin = 1e9, xmax = -1e9;
  ShapeContour rotated = c, shifted = c;
  for (std::size_t i = 0; i < c.polyline.size(); ++i) {
    xmin = std::min(xmin, c.polyline[i].x);
    xmax = std::max(xmax, c.polyline[i].x);
    rotated.polyline[i] = {1.25 - (c.polyline[i].y - 1.5), 1.5 + (c.polyline[i].x - 1.25)};
    shifted.polyline[i].x += 0.37;
  }
  CHECK(frontal_area(rotated) == doctest::Approx(xmax - xmin).epsilon(1e-12));
  CHECK(frontal_area(shifted) == frontal_area(c));

  // Rasterized circle: extent of 1-pixel rows within one pixel of 2r.
  const DomainMapping m;
  const double r = 0.5;
  const auto img = rasterize(ellipse(r, r, {2.0, 1.5}), m);
  int top = 84, bottom = -1;
  for (int row = 0; row < 84; ++row)
    for (int col = 0; col < 112; ++col)
      if (img.at(row, col)) {
        top = std::min(top, row);
        bottom = std::max(bottom, row);
      }
  CHECK(std::abs((bottom - top + 1) * m.pixel_height() - 2 * r) <= m.pixel_height());

  ShapeContour flat;
  flat.polyline = {{1, 1}, {2, 1}, {3, 1}};
  CHECK(code_of([&] { frontal_area(flat); }) == ErrorCode::kDegenerate);
}

TEST_CASE("extract_contour round trip and errors") {
  for (double r : {0.3, 0.5, 0.7}) {
    const auto circle = fourier_smooth(constant_shape(16, r), 6);
    const auto back = extract_contour(GrayImage::from_binary(rasterize(circle)));
    const double a0 = std::abs(signed_area(circle.polyline));
    const double a1 = std::abs(signed_area(back.polyline));
    CHECK(std::abs(a1 - a0) / a0 < 0.03);
    CHECK(signed_area(back.polyline) > 0);
  }
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto c = generate_shape(seed, ShapeConfig{});
    const auto back = extract_contour(GrayImage::from_binary(rasterize(c)));
    const double a0 = signed_area(c.polyline);
    CHECK(std::abs(signed_area(back.polyline) - a0) / a0 < 0.03);
  }

  GrayImage blank;
  blank.pixels.assign(112 * 84, 0.0f);
  CHECK(code_of([&] { extract_contour(blank); }) == ErrorCode::kEmptyImage);

  GrayImage two = blank;
  for (int r = 20; r < 40; ++r) {
    for (int c = 10; c < 30; ++c) two.pixels[r * 112 + c] = 1.0f;
    for (int c = 60; c < 80; ++c) two.pixels[r * 112 + c] = 1.0f;
  }
  CHECK(code_of([&] { extract_contour(two); }) == ErrorCode::kMultipleComponents);

  // Blurry input: a smooth bump still yields a closed contour.
  GrayImage soft = blank;
  for (int r = 0; r < 84; ++r)
    for (int c = 0; c < 112; ++c) {
      const double d = std::hypot(r - 42.0, c - 40.0);
      soft.pixels[r * 112 + c] = static_cast<float>(1.0 / (1.0 + std::exp(d - 12.0)));
    }
  const auto sc = extract_contour(soft);
  CHECK(is_simple(sc.polyline));
  CHECK(frontal_area(sc) == doctest::Approx(24.0 * DomainMapping{}.pixel_height()).epsilon(0.1));
}

TEST_CASE("contour and image files round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "dragopt_test_shapegen";
  std::filesystem::create_directories(dir);
  const auto c = generate_shape(4, ShapeConfig{});
  write_contour(dir / "a.contour", c);
  const auto back = read_contour(dir / "a.contour");
  REQUIRE(back.polyline.size() == c.polyline.size());
  for (std::size_t i = 0; i < c.polyline.size(); ++i) {
    CHECK(std::abs(back.polyline[i].x - c.polyline[i].x) < 1e-9);
    CHECK(std::abs(back.polyline[i].y - c.polyline[i].y) < 1e-9);
  }

  const auto img = rasterize(c);
  write_binary_image(dir / "a.img", img);
  CHECK(read_binary_image(dir / "a.img").pixels == img.pixels);
  CHECK(std::filesystem::file_size(dir / "a.img") == 112u * 84u);

  GrayImage g = GrayImage::from_binary(img);
  g.pixels[0] = 0.5f;
  write_gray_image(dir / "a.gray", g);
  const auto gb = read_gray_image(dir / "a.gray");
  CHECK(std::abs(gb.pixels[0] - 0.5f) <= 0.5f / 255.0f + 1e-6f);
  CHECK(gb.pixels[1] == g.pixels[1]);

  CHECK(code_of([&] { read_contour(dir / "missing.contour"); }) == ErrorCode::kIo);
  std::filesystem::remove_all(dir);
}
