#include "dragopt/shapegen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <queue>
#include <sstream>
#include <string>

#include "dragopt/error.hpp"
#include "dragopt/rng.hpp"

namespace dragopt::shapegen {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// e^{sign * 2 pi i * num / den} with the phase reduced modulo den first.
std::complex<double> unit_root(long long num, long long den, int sign) {
  long long r = num % den;
  if (r < 0) r += den;
  const double phase = sign * kTwoPi * static_cast<double>(r) / static_cast<double>(den);
  return {std::cos(phase), std::sin(phase)};
}

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

bool on_segment(Point a, Point b, Point p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool segments_intersect(Point a, Point b, Point c, Point d) {
  const double d1 = cross(c, d, a);
  const double d2 = cross(c, d, b);
  const double d3 = cross(a, b, c);
  const double d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  if (d1 == 0 && on_segment(c, d, a)) return true;
  if (d2 == 0 && on_segment(c, d, b)) return true;
  if (d3 == 0 && on_segment(a, b, c)) return true;
  if (d4 == 0 && on_segment(a, b, d)) return true;
  return false;
}

struct Components {
  std::vector<int> label;       // -1 background
  std::vector<int> sizes;
  std::vector<bool> touches_border;
};

Components label_components(const std::vector<std::uint8_t>& mask, int width, int height) {
  Components out;
  out.label.assign(mask.size(), -1);
  std::queue<int> frontier;
  for (int start = 0; start < width * height; ++start) {
    if (!mask[start] || out.label[start] >= 0) continue;
    const int id = static_cast<int>(out.sizes.size());
    out.sizes.push_back(0);
    out.touches_border.push_back(false);
    out.label[start] = id;
    frontier.push(start);
    while (!frontier.empty()) {
      const int idx = frontier.front();
      frontier.pop();
      const int r = idx / width;
      const int c = idx % width;
      ++out.sizes[id];
      if (r == 0 || c == 0 || r == height - 1 || c == width - 1) out.touches_border[id] = true;
      const std::array<std::array<int, 2>, 4> nbrs{{{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}}};
      for (const auto& [nr, nc] : nbrs) {
        if (nr < 0 || nc < 0 || nr >= height || nc >= width) continue;
        const int n = nr * width + nc;
        if (mask[n] && out.label[n] < 0) {
          out.label[n] = id;
          frontier.push(n);
        }
      }
    }
  }
  return out;
}

// Clockwise on screen (rows grow downward), starting at west.
constexpr std::array<std::array<int, 2>, 8> kMoore{{{0, -1}, {-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}}};

int moore_index(int dr, int dc) {
  for (int k = 0; k < 8; ++k) {
    if (kMoore[k][0] == dr && kMoore[k][1] == dc) return k;
  }
  return -1;
}

// Moore-neighbour boundary trace of the component containing `start`, which
// must be its top-most, left-most pixel. Returns (row, col) pairs.
std::vector<std::array<int, 2>> moore_trace(const std::vector<int>& label, int id, int width, int height,
                                            std::array<int, 2> start, std::size_t max_steps) {
  auto inside = [&](int r, int c) {
    return r >= 0 && c >= 0 && r < height && c < width && label[static_cast<std::size_t>(r) * width + c] == id;
  };
  std::vector<std::array<int, 2>> trace{start};
  std::array<int, 2> current = start;
  int backtrack = 0;  // direction (from current) of the last outside cell examined
  std::array<int, 2> first_step{-1, -1};
  for (std::size_t step = 0; step < max_steps; ++step) {
    std::array<int, 2> next{-1, -1};
    int prev_dir = backtrack;
    for (int k = 1; k <= 8; ++k) {
      const int dir = (backtrack + k) % 8;
      const int nr = current[0] + kMoore[dir][0];
      const int nc = current[1] + kMoore[dir][1];
      if (inside(nr, nc)) {
        next = {nr, nc};
        break;
      }
      prev_dir = dir;
    }
    if (next[0] < 0) return trace;  // isolated pixel
    if (current == start && step > 0 && next == first_step) {
      trace.pop_back();  // start was appended again on arrival
      return trace;
    }
    if (step == 0) first_step = next;
    // Re-express the last outside cell relative to the new current pixel.
    const int br = current[0] + kMoore[prev_dir][0] - next[0];
    const int bc = current[1] + kMoore[prev_dir][1] - next[1];
    backtrack = moore_index(br, bc);
    if (backtrack < 0) backtrack = moore_index(current[0] - next[0], current[1] - next[1]);
    current = next;
    trace.push_back(current);
  }
  throw Error(ErrorCode::kOpenBoundary, "boundary trace did not close");
}

double bilinear(const GrayImage& img, double row, double col) {
  row = std::clamp(row, 0.0, img.height - 1.0);
  col = std::clamp(col, 0.0, img.width - 1.0);
  const int r0 = std::min(static_cast<int>(std::floor(row)), img.height - 2);
  const int c0 = std::min(static_cast<int>(std::floor(col)), img.width - 2);
  const double fr = row - r0;
  const double fc = col - c0;
  return (1 - fr) * ((1 - fc) * img.at(r0, c0) + fc * img.at(r0, c0 + 1)) +
         fr * ((1 - fc) * img.at(r0 + 1, c0) + fc * img.at(r0 + 1, c0 + 1));
}

std::vector<Point> resample_by_arclength(const std::vector<Point>& pts, int count) {
  const std::size_t n = pts.size();
  std::vector<double> cumulative(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = pts[i];
    const Point b = pts[(i + 1) % n];
    cumulative[i + 1] = cumulative[i] + std::hypot(b.x - a.x, b.y - a.y);
  }
  const double total = cumulative[n];
  if (!(total > 0)) throw Error(ErrorCode::kDegenerate, "zero-length boundary");
  std::vector<Point> out;
  out.reserve(count);
  std::size_t seg = 0;
  for (int s = 0; s < count; ++s) {
    const double target = total * s / count;
    while (seg + 1 < n && cumulative[seg + 1] <= target) ++seg;
    const double len = cumulative[seg + 1] - cumulative[seg];
    const double t = len > 0 ? (target - cumulative[seg]) / len : 0.0;
    const Point a = pts[seg];
    const Point b = pts[(seg + 1) % n];
    out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
  }
  return out;
}

}  // namespace

std::size_t BinaryImage::count() const {
  return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), std::uint8_t{1}));
}

GrayImage GrayImage::from_binary(const BinaryImage& image) {
  GrayImage out;
  out.width = image.width;
  out.height = image.height;
  out.pixels.assign(image.pixels.begin(), image.pixels.end());
  return out;
}

RawPolarShape sample_raw_shape(std::uint64_t seed, int n_angles, double r_min, double r_max, Point center) {
  if (n_angles < 8) throw Error(ErrorCode::kInvalidArgument, "n_angles must be >= 8");
  if (!(r_min > 0) || !(r_max >= r_min)) throw Error(ErrorCode::kInvalidArgument, "invalid radius range");
  RawPolarShape raw;
  raw.center = center;
  raw.angles.resize(n_angles);
  raw.radii.resize(n_angles);
  Rng rng(seed);
  std::uniform_real_distribution<double> uniform(r_min, r_max);
  for (int j = 0; j < n_angles; ++j) {
    raw.angles[j] = kTwoPi * j / n_angles;
    raw.radii[j] = r_max > r_min ? uniform(rng) : r_min;
  }
  return raw;
}

ShapeContour smooth_closed_curve(const std::vector<Point>& points, int harmonics, int polyline_points) {
  if (harmonics < 1) throw Error(ErrorCode::kInvalidArgument, "harmonics must be >= 1");
  if (points.size() < 3) throw Error(ErrorCode::kInvalidArgument, "need at least 3 boundary samples");
  if (polyline_points < 8) throw Error(ErrorCode::kInvalidArgument, "polyline needs at least 8 points");
  const auto n = static_cast<long long>(points.size());
  const long long nyquist = n / 2;

  ShapeContour contour;
  contour.harmonics = harmonics;
  contour.descriptors.assign(2 * harmonics + 1, {0.0, 0.0});
  for (int k = -harmonics; k <= harmonics; ++k) {
    if (std::llabs(k) > nyquist) continue;
    std::complex<double> sum{0.0, 0.0};
    for (long long j = 0; j < n; ++j) {
      sum += std::complex<double>(points[j].x, points[j].y) * unit_root(j * k, n, -1);
    }
    sum /= static_cast<double>(n);
    // Split the Nyquist coefficient between +-n/2 so even n round-trips exactly.
    if (n % 2 == 0 && std::llabs(k) == nyquist) sum *= 0.5;
    contour.descriptors[k + harmonics] = sum;
  }

  contour.polyline.resize(polyline_points);
  for (int s = 0; s < polyline_points; ++s) {
    std::complex<double> z{0.0, 0.0};
    for (int k = -harmonics; k <= harmonics; ++k) {
      z += contour.descriptors[k + harmonics] * unit_root(static_cast<long long>(k) * s, polyline_points, 1);
    }
    contour.polyline[s] = {z.real(), z.imag()};
  }

  if (!is_simple(contour.polyline)) throw Error(ErrorCode::kSelfIntersecting, "smoothed contour self-intersects");
  if (!(std::abs(signed_area(contour.polyline)) > 0)) throw Error(ErrorCode::kDegenerate, "zero enclosed area");
  if (signed_area(contour.polyline) < 0) {
    std::reverse(contour.polyline.begin() + 1, contour.polyline.end());
    std::reverse(contour.descriptors.begin(), contour.descriptors.end());
  }
  return contour;
}

ShapeContour fourier_smooth(const RawPolarShape& raw, int harmonics, int polyline_points) {
  if (raw.angles.size() != raw.radii.size() || raw.angles.size() < 8) {
    throw Error(ErrorCode::kInvalidShape, "raw shape needs >= 8 matching angle/radius samples");
  }
  std::vector<Point> pts(raw.angles.size());
  for (std::size_t j = 0; j < pts.size(); ++j) {
    if (!(raw.radii[j] > 0)) throw Error(ErrorCode::kInvalidShape, "non-positive radius");
    if (j > 0 && !(raw.angles[j] > raw.angles[j - 1])) throw Error(ErrorCode::kInvalidShape, "angles not increasing");
    pts[j] = {raw.center.x + raw.radii[j] * std::cos(raw.angles[j]),
              raw.center.y + raw.radii[j] * std::sin(raw.angles[j])};
  }
  return smooth_closed_curve(pts, harmonics, polyline_points);
}

double signed_area(const std::vector<Point>& polygon) {
  double area = 0.0;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = polygon[i];
    const Point b = polygon[(i + 1) % n];
    area += a.x * b.y - b.x * a.y;
  }
  return 0.5 * area;
}

bool is_simple(const std::vector<Point>& polygon) {
  const std::size_t n = polygon.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = polygon[i];
    const Point b = polygon[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      // Adjacent edges share a vertex by construction.
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(a, b, polygon[j], polygon[(j + 1) % n])) return false;
    }
  }
  return true;
}

bool contains(const std::vector<Point>& polygon, Point p) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point a = polygon[i];
    const Point b = polygon[j];
    if ((a.y <= p.y) != (b.y <= p.y)) {
      const double xc = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (xc > p.x) inside = !inside;
    }
  }
  return inside;
}

std::vector<std::uint8_t> fill_lattice(const std::vector<Point>& polygon, int nx, int ny, double x0, double y0,
                                       double step_x, double step_y) {
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(nx) * ny, 0);
  std::vector<double> crossings;
  const std::size_t n = polygon.size();
  for (int j = 0; j < ny; ++j) {
    const double y = y0 + j * step_y;
    crossings.clear();
    for (std::size_t i = 0, k = n - 1; i < n; k = i++) {
      const Point a = polygon[i];
      const Point b = polygon[k];
      if ((a.y <= y) != (b.y <= y)) crossings.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(crossings.begin(), crossings.end());
    for (std::size_t c = 0; c + 1 < crossings.size(); c += 2) {
      // Lattice points x with crossings[c] <= x < crossings[c+1] have an odd
      // number of crossings strictly to their right.
      const int first = std::max(0, static_cast<int>(std::ceil((crossings[c] - x0) / step_x)));
      for (int i = first; i < nx; ++i) {
        const double x = x0 + i * step_x;
        if (x < crossings[c]) continue;
        if (x >= crossings[c + 1]) break;
        flags[static_cast<std::size_t>(j) * nx + i] = 1;
      }
    }
  }
  return flags;
}

BinaryImage rasterize(const ShapeContour& contour, const DomainMapping& mapping) {
  if (contour.polyline.size() < 3) throw Error(ErrorCode::kInvalidShape, "contour has fewer than 3 points");
  for (const Point& p : contour.polyline) {
    if (!(p.x > 0 && p.x < mapping.lx && p.y > 0 && p.y < mapping.ly)) {
      throw Error(ErrorCode::kBorderContact, "contour leaves the domain");
    }
  }
  BinaryImage image;
  image.width = mapping.width;
  image.height = mapping.height;
  image.pixels = fill_lattice(contour.polyline, mapping.width, mapping.height, 0.5 * mapping.pixel_width(),
                              mapping.ly - 0.5 * mapping.pixel_height(), mapping.pixel_width(),
                              -mapping.pixel_height());
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const bool border = r == 0 || c == 0 || r == image.height - 1 || c == image.width - 1;
      if (border && image.at(r, c)) throw Error(ErrorCode::kBorderContact, "object touches the image border");
    }
  }
  const Components comps = label_components(image.pixels, image.width, image.height);
  if (comps.sizes.empty()) throw Error(ErrorCode::kDegenerate, "contour covers no pixel centre");
  if (comps.sizes.size() > 1) throw Error(ErrorCode::kMultipleComponents, "rasterized shape is disconnected");
  return image;
}

ShapeContour extract_contour(const GrayImage& image, double threshold, int harmonics, int polyline_points,
                             const DomainMapping& mapping) {
  const int w = image.width;
  const int h = image.height;
  if (w < 3 || h < 3 || image.pixels.size() != static_cast<std::size_t>(w) * h) {
    throw Error(ErrorCode::kInvalidArgument, "image size mismatch");
  }
  for (float v : image.pixels) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "image contains non-finite pixels");
  }

  std::vector<std::uint8_t> mask(image.pixels.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = image.pixels[i] >= threshold ? 1 : 0;
  const Components comps = label_components(mask, w, h);
  constexpr int kMinPixels = 16;
  int chosen = -1;
  int significant = 0;
  for (std::size_t id = 0; id < comps.sizes.size(); ++id) {
    if (comps.sizes[id] < kMinPixels) continue;
    ++significant;
    chosen = static_cast<int>(id);
  }
  if (significant == 0) throw Error(ErrorCode::kEmptyImage, "no component above threshold");
  if (significant > 1) throw Error(ErrorCode::kMultipleComponents, std::to_string(significant) + " components");
  if (comps.touches_border[chosen]) throw Error(ErrorCode::kOpenBoundary, "component touches the image border");

  // 3x3 Sobel with replicated borders.
  auto px = [&](int r, int c) { return static_cast<double>(image.at(std::clamp(r, 0, h - 1), std::clamp(c, 0, w - 1))); };
  auto sobel = [&](int r, int c) {
    const double gx = (px(r - 1, c + 1) + 2 * px(r, c + 1) + px(r + 1, c + 1)) -
                      (px(r - 1, c - 1) + 2 * px(r, c - 1) + px(r + 1, c - 1));
    const double gy = (px(r + 1, c - 1) + 2 * px(r + 1, c) + px(r + 1, c + 1)) -
                      (px(r - 1, c - 1) + 2 * px(r - 1, c) + px(r - 1, c + 1));
    return std::array<double, 2>{gy, gx};  // (row, col) components
  };

  std::array<int, 2> start{-1, -1};
  for (int idx = 0; idx < w * h && start[0] < 0; ++idx) {
    if (comps.label[idx] == chosen) start = {idx / w, idx % w};
  }
  const auto trace = moore_trace(comps.label, chosen, w, h, start, 8 * static_cast<std::size_t>(comps.sizes[chosen]) + 16);
  if (trace.size() < 4) throw Error(ErrorCode::kOpenBoundary, "boundary trace too short");

  // Move each boundary pixel centre outward along the Sobel normal to the
  // sub-pixel threshold crossing of the bilinear image.
  std::vector<Point> boundary;
  boundary.reserve(trace.size());
  for (const auto& [r, c] : trace) {
    auto [gr, gc] = sobel(r, c);
    double norm = std::hypot(gr, gc);
    if (norm < 1e-12) {
      gr = gc = 0.0;
      for (const auto& d : kMoore) {
        const int nr = r + d[0];
        const int nc = c + d[1];
        const bool in = nr >= 0 && nc >= 0 && nr < h && nc < w && comps.label[static_cast<std::size_t>(nr) * w + nc] == chosen;
        if (!in) {
          gr -= d[0];
          gc -= d[1];
        }
      }
      norm = std::hypot(gr, gc);
      if (norm < 1e-12) continue;
      gr = -gr;
      gc = -gc;
    }
    const double nr = -gr / norm;
    const double nc = -gc / norm;
    double offset = 0.5;
    double prev = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const double s = 0.1 * k;
      if (bilinear(image, r + s * nr, c + s * nc) < threshold) {
        double lo = prev;
        double hi = s;
        for (int it = 0; it < 30; ++it) {
          const double mid = 0.5 * (lo + hi);
          (bilinear(image, r + mid * nr, c + mid * nc) >= threshold ? lo : hi) = mid;
        }
        offset = 0.5 * (lo + hi);
        break;
      }
      prev = s;
    }
    const double row = r + offset * nr;
    const double col = c + offset * nc;
    boundary.push_back({(col + 0.5) * mapping.pixel_width(), mapping.ly - (row + 0.5) * mapping.pixel_height()});
  }
  if (boundary.size() < 4) throw Error(ErrorCode::kOpenBoundary, "too few boundary points");
  if (signed_area(boundary) < 0) std::reverse(boundary.begin(), boundary.end());
  const auto uniform = resample_by_arclength(boundary, polyline_points);
  return smooth_closed_curve(uniform, harmonics, polyline_points);
}

double frontal_area(const ShapeContour& contour) {
  if (contour.polyline.empty()) throw Error(ErrorCode::kDegenerate, "empty contour");
  const auto [lo, hi] = std::minmax_element(contour.polyline.begin(), contour.polyline.end(),
                                            [](const Point& a, const Point& b) { return a.y < b.y; });
  const double extent = hi->y - lo->y;
  if (!(extent > 0)) throw Error(ErrorCode::kDegenerate, "zero y-extent");
  return extent;
}

ShapeContour generate_shape(std::uint64_t seed, const ShapeConfig& cfg, int* attempt) {
  constexpr int kMaxAttempts = 100;
  for (int a = 0; a < kMaxAttempts; ++a) {
    const std::uint64_t s = a == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(a));
    const RawPolarShape raw = sample_raw_shape(s, cfg.n_angles, cfg.r_min, cfg.r_max, cfg.center);
    try {
      ShapeContour contour = fourier_smooth(raw, cfg.harmonics, cfg.polyline_points);
      if (attempt) *attempt = a;
      return contour;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSelfIntersecting) throw;
    }
  }
  throw Error(ErrorCode::kInvalidShape, "no simple contour after " + std::to_string(kMaxAttempts) + " attempts");
}

void write_contour(const std::filesystem::path& path, const ShapeContour& contour) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  char buf[64];
  for (const Point& p : contour.polyline) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", p.x, p.y);
    out << buf;
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

ShapeContour read_contour(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  ShapeContour contour;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Point p;
    if (!(ls >> p.x >> p.y)) throw Error(ErrorCode::kFormat, "bad contour line in " + path.string());
    contour.polyline.push_back(p);
  }
  if (contour.polyline.size() < 3) throw Error(ErrorCode::kFormat, "contour file too short: " + path.string());
  return contour;
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes(expected);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expected));
  if (in.gcount() != static_cast<std::streamsize>(expected) || in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::kFormat, "image file has wrong size: " + path.string());
  }
  return bytes;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace

void write_binary_image(const std::filesystem::path& path, const BinaryImage& image) { write_bytes(path, image.pixels); }

BinaryImage read_binary_image(const std::filesystem::path& path) {
  BinaryImage image;
  image.pixels = read_bytes(path, static_cast<std::size_t>(image.width) * image.height);
  for (auto v : image.pixels) {
    if (v > 1) throw Error(ErrorCode::kFormat, "binary image holds values other than 0/1: " + path.string());
  }
  return image;
}

void write_gray_image(const std::filesystem::path& path, const GrayImage& image) {
  std::vector<std::uint8_t> bytes(image.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
  }
  write_bytes(path, bytes);
}

GrayImage read_gray_image(const std::filesystem::path& path) {
  GrayImage image;
  const auto bytes = read_bytes(path, static_cast<std::size_t>(image.width) * image.height);
  image.pixels.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) image.pixels[i] = bytes[i] / 255.0f;
  return image;
}

}  // namespace dragopt::shapegen
