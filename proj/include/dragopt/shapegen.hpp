#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace dragopt::shapegen {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct RawPolarShape {
  Point center;
  std::vector<double> angles;  // strictly increasing, in [0, 2*pi)
  std::vector<double> radii;
};

// Closed curve given by truncated Fourier descriptors and a resampled
// polyline. The polyline is counter-clockwise and not explicitly closed.
struct ShapeContour {
  int harmonics = 0;                                 // K
  std::vector<std::complex<double>> descriptors;     // c_k for k = -K..K at index k + K
  std::vector<Point> polyline;
};

// Fixed affine map from the flow domain [0, lx] x [0, ly] onto the image
// raster; row 0 is the top of the domain.
struct DomainMapping {
  double lx = 4.0;
  double ly = 3.0;
  int width = 112;
  int height = 84;

  double pixel_width() const { return lx / width; }
  double pixel_height() const { return ly / height; }
  Point pixel_center(int row, int col) const {
    return {(col + 0.5) * pixel_width(), ly - (row + 0.5) * pixel_height()};
  }
};

struct BinaryImage {
  static constexpr int kWidth = 112;
  static constexpr int kHeight = 84;

  int width = kWidth;
  int height = kHeight;
  std::vector<std::uint8_t> pixels;  // row-major, 1 = object

  std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
  std::size_t count() const;
};

struct GrayImage {
  int width = BinaryImage::kWidth;
  int height = BinaryImage::kHeight;
  std::vector<float> pixels;  // row-major, values in [0, 1]

  float at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
  static GrayImage from_binary(const BinaryImage& image);
};

struct ShapeConfig {
  int n_angles = 16;
  int harmonics = 6;
  int polyline_points = 256;
  double r_min = 0.3;
  double r_max = 0.7;
  Point center{1.25, 1.5};
};

RawPolarShape sample_raw_shape(std::uint64_t seed, int n_angles, double r_min, double r_max, Point center);

// Throws kSelfIntersecting when the truncated series is not a simple curve.
ShapeContour fourier_smooth(const RawPolarShape& raw, int harmonics, int polyline_points = 256);

// Fourier-smooth an arbitrary closed point sequence (assumed uniformly
// parametrized). Shared by generation and contour extraction.
ShapeContour smooth_closed_curve(const std::vector<Point>& points, int harmonics, int polyline_points);

BinaryImage rasterize(const ShapeContour& contour, const DomainMapping& mapping = {});

ShapeContour extract_contour(const GrayImage& image, double threshold = 0.5, int harmonics = 6,
                             int polyline_points = 256, const DomainMapping& mapping = {});

double frontal_area(const ShapeContour& contour);

// Sample + smooth, resampling with a fresh seed offset whenever the smoothed
// curve self-intersects. Returns the attempt index used through `attempt`.
ShapeContour generate_shape(std::uint64_t seed, const ShapeConfig& cfg, int* attempt = nullptr);

// Geometry helpers.
double signed_area(const std::vector<Point>& polygon);
bool is_simple(const std::vector<Point>& polygon);
bool contains(const std::vector<Point>& polygon, Point p);  // even-odd rule

// Scanline even-odd fill of a polygon onto a regular lattice of sample
// points x = x0 + i*step_x, y = y0 + j*step_y; returns flags indexed [j*nx + i].
std::vector<std::uint8_t> fill_lattice(const std::vector<Point>& polygon, int nx, int ny, double x0, double y0,
                                       double step_x, double step_y);

// Plain-text contour file: one "x y" per line, counter-clockwise, not closed.
void write_contour(const std::filesystem::path& path, const ShapeContour& contour);
ShapeContour read_contour(const std::filesystem::path& path);

// Raw one-byte-per-pixel image files (112 x 84, row 0 = domain top).
void write_binary_image(const std::filesystem::path& path, const BinaryImage& image);
BinaryImage read_binary_image(const std::filesystem::path& path);
void write_gray_image(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_gray_image(const std::filesystem::path& path);

}  // namespace dragopt::shapegen
