#include "dragopt/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <variant>

#include "dragopt/error.hpp"
#include "dragopt/optimizer.hpp"
#include "dragopt/rng.hpp"
#include "dragopt/surrogate.hpp"

namespace dragopt::pipeline {

namespace fs = std::filesystem;

namespace {

// Seed streams derived from the master seed.
constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;
constexpr std::uint64_t kSsgpStream = 0x73736770ULL;
constexpr std::uint64_t kStartStream = 0x7374617274ULL;
constexpr int kMaxGeometryAttempts = 100;

using Field = std::variant<double Config::*, int Config::*, std::uint64_t Config::*>;

const std::vector<std::pair<std::string, Field>>& config_fields() {
  static const std::vector<std::pair<std::string, Field>> fields = {
      {"domain_lx", &Config::domain_lx},
      {"domain_ly", &Config::domain_ly},
      {"resolution", &Config::resolution},
      {"nu", &Config::nu},
      {"rho", &Config::rho},
      {"v_in", &Config::v_in},
      {"steady_tol", &Config::steady_tol},
      {"max_iters", &Config::max_iters},
      {"r_min", &Config::r_min},
      {"r_max", &Config::r_max},
      {"n_angles", &Config::n_angles},
      {"fourier_k", &Config::fourier_k},
      {"latent_dim", &Config::latent_dim},
      {"dense_units", &Config::dense_units},
      {"dn_units", &Config::dn_units},
      {"kl_clamp", &Config::kl_clamp},
      {"epochs", &Config::epochs},
      {"batch_size", &Config::batch_size},
      {"learning_rate", &Config::learning_rate},
      {"seed", &Config::seed},
      {"ssgp_m", &Config::ssgp_m},
      {"compare_ssgp_m", &Config::compare_ssgp_m},
      {"lengthscale", &Config::lengthscale},
      {"sigma_f", &Config::sigma_f},
      {"sigma_n", &Config::sigma_n},
      {"fit_hyperparameters", &Config::fit_hyperparameters},
      {"starts", &Config::starts},
      {"candidates", &Config::candidates},
      {"dedup_radius", &Config::dedup_radius},
      {"xi", &Config::xi},
  };
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) throw Error(ErrorCode::kFormat, "bad number for " + what + ": " + text);
  return v;
}

template <typename I>
I parse_int(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  I v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw Error(ErrorCode::kFormat, "bad integer for " + what + ": " + text);
  }
  return v;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::string padded(int id, int width = 6) {
  std::string s = std::to_string(id);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::kIo, "cannot create directory " + dir.string());
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "config line " + std::to_string(lineno) + " is not key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& fields = config_fields();
    auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.first == key; });
    if (it == fields.end()) throw Error(ErrorCode::kInvalidArgument, "unknown config key: " + key);
    try {
      std::visit(
          [&](auto member) {
            using M = std::remove_reference_t<decltype(c.*member)>;
            if constexpr (std::is_same_v<M, double>) {
              c.*member = parse_double(value, key);
            } else {
              c.*member = parse_int<M>(value, key);
            }
          },
          it->second);
    } catch (const Error& e) {
      throw Error(ErrorCode::kInvalidArgument, e.what());
    }
  }
  c.validate();
  return c;
}

Config Config::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& [key, field] : config_fields()) {
    std::visit(
        [&](auto member) {
          using M = std::remove_cv_t<std::remove_reference_t<decltype(this->*member)>>;
          if constexpr (std::is_same_v<M, double>) {
            out += key + " = " + fmt(this->*member) + "\n";
          } else {
            out += key + " = " + std::to_string(this->*member) + "\n";
          }
        },
        field);
  }
  return out;
}

std::vector<std::string> Config::keys() {
  std::vector<std::string> k;
  for (const auto& f : config_fields()) k.push_back(f.first);
  return k;
}

void Config::validate() const {
  fluid().validate();
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw Error(ErrorCode::kInvalidArgument, msg);
  };
  require(domain_lx > 0 && domain_ly > 0, "domain extents must be positive");
  require(resolution > 0, "resolution must be positive");
  require(steady_tol > 0 && max_iters > 0, "steady_tol and max_iters must be positive");
  require(r_min > 0 && r_min <= r_max, "need 0 < r_min <= r_max");
  require(n_angles >= 3 && fourier_k >= 1, "need n_angles >= 3 and fourier_k >= 1");
  require(latent_dim >= 1 && dense_units >= 1 && dn_units >= 1, "layer sizes must be positive");
  require(kl_clamp > 0, "kl_clamp must be positive");
  require(epochs >= 1 && batch_size >= 1 && learning_rate > 0, "epochs, batch_size, learning_rate must be positive");
  require(ssgp_m >= 1 && compare_ssgp_m >= 1, "ssgp_m must be positive");
  require(lengthscale > 0 && sigma_f > 0 && sigma_n > 0, "lengthscale, sigma_f, sigma_n must be positive");
  require(starts >= 1 && candidates >= 1, "starts and candidates must be positive");
  require(dedup_radius >= 0 && xi >= 0, "dedup_radius and xi must be non-negative");
}

flowsim::FluidParams Config::fluid() const { return {rho, nu, v_in}; }

flowsim::Grid Config::grid() const { return flowsim::build_grid(domain_lx, domain_ly, resolution); }

flowsim::SolverConfig Config::solver() const {
  flowsim::SolverConfig s;
  s.steady_tol = steady_tol;
  s.max_iters = max_iters;
  return s;
}

shapegen::ShapeConfig Config::shape() const {
  shapegen::ShapeConfig s;
  s.n_angles = n_angles;
  s.harmonics = fourier_k;
  s.r_min = r_min;
  s.r_max = r_max;
  return s;
}

latentnet::TrainConfig Config::training(latentnet::Mode mode) const {
  latentnet::TrainConfig t;
  t.arch.latent_dim = latent_dim;
  t.arch.dense_units = dense_units;
  t.arch.dn_units = dn_units;
  t.arch.logvar_clamp = kl_clamp;
  t.batch_size = batch_size;
  t.learning_rate = learning_rate;
  t.epochs = epochs;
  t.mode = mode;
  t.seed = seed;
  return t;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

constexpr const char* kManifestColumns =
    "id\tseed\tcd\tfrontal_area\tdrag_force\tlift_force\tconverged\titerations\tsplit\timage\tcontour";

std::map<std::string, std::string> dataset_header(const Config& cfg, std::uint64_t seed, int n_shapes) {
  return {
      {"rho", fmt(cfg.rho)},
      {"nu", fmt(cfg.nu)},
      {"v_in", fmt(cfg.v_in)},
      {"domain_lx", fmt(cfg.domain_lx)},
      {"domain_ly", fmt(cfg.domain_ly)},
      {"resolution", fmt(cfg.resolution)},
      {"steady_tol", fmt(cfg.steady_tol)},
      {"max_iters", std::to_string(cfg.max_iters)},
      {"r_min", fmt(cfg.r_min)},
      {"r_max", fmt(cfg.r_max)},
      {"n_angles", std::to_string(cfg.n_angles)},
      {"fourier_k", std::to_string(cfg.fourier_k)},
      {"seed", std::to_string(seed)},
      {"n_shapes", std::to_string(n_shapes)},
  };
}

std::string row_line(const ManifestRow& r, bool with_split) {
  std::string s = std::to_string(r.id) + '\t' + std::to_string(r.seed) + '\t' + fmt(r.cd) + '\t' + fmt(r.frontal_area) +
                  '\t' + fmt(r.drag_force) + '\t' + fmt(r.lift_force) + '\t' + (r.converged ? "1" : "0") + '\t' +
                  std::to_string(r.iterations) + '\t';
  s += with_split ? (r.split == Split::kTrain ? "train" : "test") : "-";
  return s + '\t' + r.image_file + '\t' + r.contour_file + '\n';
}

struct ManifestFile {
  std::map<std::string, std::string> header;
  std::vector<ManifestRow> rows;
};

ManifestFile read_manifest_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read manifest " + path.string());
  ManifestFile m;
  std::string line;
  bool columns_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::kFormat, "bad manifest header line: " + line);
      m.header[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    if (!columns_seen) {
      if (line != kManifestColumns) throw Error(ErrorCode::kFormat, "unexpected manifest columns in " + path.string());
      columns_seen = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t')) f.push_back(cell);
    if (f.size() != 11) {
      // A torn final line from an interrupted run: ignore it, the row is redone.
      if (in.eof()) break;
      throw Error(ErrorCode::kFormat, "bad manifest row: " + line);
    }
    ManifestRow r;
    r.id = parse_int<int>(f[0], "id");
    r.seed = parse_int<std::uint64_t>(f[1], "seed");
    r.cd = parse_double(f[2], "cd");
    r.frontal_area = parse_double(f[3], "frontal_area");
    r.drag_force = parse_double(f[4], "drag_force");
    r.lift_force = parse_double(f[5], "lift_force");
    r.converged = f[6] == "1";
    r.iterations = parse_int<int>(f[7], "iterations");
    r.split = f[8] == "test" ? Split::kTest : Split::kTrain;
    r.image_file = f[9];
    r.contour_file = f[10];
    m.rows.push_back(std::move(r));
  }
  if (!columns_seen) throw Error(ErrorCode::kFormat, "manifest without column header: " + path.string());
  return m;
}

void write_manifest_file(const fs::path& path, const std::map<std::string, std::string>& header,
                         const std::vector<ManifestRow>& rows, bool with_split) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& [k, v] : header) out << "# " << k << '=' << v << '\n';
  out << kManifestColumns << '\n';
  for (const auto& r : rows) out << row_line(r, with_split);
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

LabelStats label_stats(const std::vector<ManifestRow>& rows) {
  std::vector<double> cds;
  for (const auto& r : rows) {
    if (r.converged && r.split == Split::kTrain) cds.push_back(r.cd);
  }
  if (cds.size() < 2) throw Error(ErrorCode::kInvalidArgument, "fewer than two converged training shapes");
  LabelStats s;
  s.mean = std::accumulate(cds.begin(), cds.end(), 0.0) / static_cast<double>(cds.size());
  double ss = 0.0;
  for (double c : cds) ss += (c - s.mean) * (c - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(cds.size()));
  if (!(s.std > 0.0)) throw Error(ErrorCode::kDegenerate, "training drag coefficients have zero spread");
  return s;
}

const std::string& header_value(const std::map<std::string, std::string>& h, const std::string& key) {
  auto it = h.find(key);
  if (it == h.end()) throw Error(ErrorCode::kFormat, "manifest header lacks " + key);
  return it->second;
}

}  // namespace

flowsim::FluidParams Dataset::fluid() const {
  return {parse_double(header_value(header, "rho"), "rho"), parse_double(header_value(header, "nu"), "nu"),
          parse_double(header_value(header, "v_in"), "v_in")};
}

flowsim::Grid Dataset::grid() const {
  return flowsim::build_grid(parse_double(header_value(header, "domain_lx"), "domain_lx"),
                             parse_double(header_value(header, "domain_ly"), "domain_ly"),
                             parse_double(header_value(header, "resolution"), "resolution"));
}

flowsim::SolverConfig Dataset::solver() const {
  flowsim::SolverConfig s;
  s.steady_tol = parse_double(header_value(header, "steady_tol"), "steady_tol");
  s.max_iters = parse_int<int>(header_value(header, "max_iters"), "max_iters");
  return s;
}

int Dataset::fourier_k() const { return parse_int<int>(header_value(header, "fourier_k"), "fourier_k"); }

std::vector<const ManifestRow*> Dataset::usable(Split split) const {
  std::vector<const ManifestRow*> out;
  for (const auto& r : rows) {
    if (r.converged && r.split == split) out.push_back(&r);
  }
  return out;
}

shapegen::BinaryImage Dataset::image(const ManifestRow& row) const {
  return shapegen::read_binary_image(dir / row.image_file);
}

shapegen::ShapeContour Dataset::contour(const ManifestRow& row) const {
  return shapegen::read_contour(dir / row.contour_file);
}

void write_manifest(const fs::path& path, const Dataset& dataset) {
  write_manifest_file(path, dataset.header, dataset.rows, true);
}

Dataset load_dataset(const fs::path& dir) {
  const ManifestFile m = read_manifest_file(dir / "manifest.tsv");
  Dataset d;
  d.dir = dir;
  d.header = m.header;
  d.rows = m.rows;
  for (std::size_t i = 1; i < d.rows.size(); ++i) {
    if (d.rows[i].id <= d.rows[i - 1].id) throw Error(ErrorCode::kFormat, "manifest rows not sorted by id");
  }
  for (const auto& r : d.rows) {
    if (!fs::exists(dir / r.image_file) || !fs::exists(dir / r.contour_file)) {
      throw Error(ErrorCode::kIo, "missing files for shape " + std::to_string(r.id));
    }
  }
  d.labels = label_stats(d.rows);
  return d;
}

Dataset generate_dataset(const Config& cfg, const fs::path& dir, int n_shapes, std::uint64_t seed, const Logger& log) {
  cfg.validate();
  if (n_shapes < 10) throw Error(ErrorCode::kInvalidArgument, "need at least 10 shapes");
  const auto header = dataset_header(cfg, seed, n_shapes);
  const fs::path final_path = dir / "manifest.tsv";
  const fs::path partial_path = dir / "manifest.partial.tsv";

  if (fs::exists(final_path)) {
    Dataset existing = load_dataset(dir);
    if (existing.header != header) {
      throw Error(ErrorCode::kInvalidArgument, dir.string() + " holds a dataset generated with other settings");
    }
    say(log, "dataset already complete in " + dir.string());
    return existing;
  }
  ensure_dir(dir / "images");
  ensure_dir(dir / "contours");

  std::map<int, ManifestRow> done;
  if (fs::exists(partial_path)) {
    const ManifestFile partial = read_manifest_file(partial_path);
    if (partial.header != header) {
      throw Error(ErrorCode::kInvalidArgument, dir.string() + " holds a partial dataset with other settings");
    }
    for (const auto& r : partial.rows) {
      if (r.id >= 0 && r.id < n_shapes && fs::exists(dir / r.image_file) && fs::exists(dir / r.contour_file)) {
        done[r.id] = r;
      }
    }
    say(log, "resuming: " + std::to_string(done.size()) + " shapes already simulated");
  }
  // Rewrite the partial file from the rows we trust (drops a torn last line).
  {
    std::vector<ManifestRow> rows;
    for (const auto& [id, r] : done) rows.push_back(r);
    write_manifest_file(partial_path, header, rows, false);
  }

  const flowsim::Grid grid = cfg.grid();
  const flowsim::FluidParams fluid = cfg.fluid();
  const flowsim::SolverConfig solver = cfg.solver();
  const shapegen::ShapeConfig shape_cfg = cfg.shape();
  shapegen::DomainMapping mapping;
  mapping.lx = cfg.domain_lx;
  mapping.ly = cfg.domain_ly;

  int failures = 0;
  for (const auto& [id, r] : done) failures += r.converged ? 0 : 1;
  const int max_failures = n_shapes / 5;

  std::ofstream out(partial_path, std::ios::app);
  if (!out) throw Error(ErrorCode::kIo, "cannot append to " + partial_path.string());
  for (int id = 0; id < n_shapes; ++id) {
    if (done.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t item_seed = derive_seed(seed, static_cast<std::uint64_t>(id));
    shapegen::ShapeContour contour;
    shapegen::BinaryImage image;
    std::uint64_t used_seed = 0;
    bool ok = false;
    for (int attempt = 0; attempt < kMaxGeometryAttempts && !ok; ++attempt) {
      used_seed = attempt == 0 ? item_seed : derive_seed(item_seed, static_cast<std::uint64_t>(attempt));
      try {
        contour = shapegen::generate_shape(used_seed, shape_cfg);
        image = shapegen::rasterize(contour, mapping);
        flowsim::mask_object(grid, contour);
        ok = true;
      } catch (const Error& e) {
        if (e.is_numerical()) throw;
      }
    }
    if (!ok) throw Error(ErrorCode::kInvalidShape, "no usable geometry for shape " + std::to_string(id));

    ManifestRow row;
    row.id = id;
    row.seed = used_seed;
    row.image_file = "images/" + padded(id) + ".img";
    row.contour_file = "contours/" + padded(id) + ".contour";
    shapegen::write_binary_image(dir / row.image_file, image);
    shapegen::write_contour(dir / row.contour_file, contour);
    // Simulate the contour exactly as stored so re-evaluation reproduces cd.
    const shapegen::ShapeContour stored = shapegen::read_contour(dir / row.contour_file);
    try {
      const flowsim::DragRecord rec = flowsim::simulate_contour(padded(id), stored, grid, fluid, solver);
      row.cd = rec.cd;
      row.frontal_area = rec.frontal_area;
      row.drag_force = rec.drag_force;
      row.lift_force = rec.lift_force;
      row.converged = rec.converged;
      row.iterations = rec.iterations;
    } catch (const Error& e) {
      if (!e.is_numerical()) throw;
      row.cd = std::numeric_limits<double>::quiet_NaN();
      row.frontal_area = shapegen::frontal_area(stored);
      row.converged = false;
      say(log, "shape " + std::to_string(id) + ": " + e.what());
    }
    if (!row.converged) ++failures;
    out << row_line(row, false) << std::flush;
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + partial_path.string());
    done[id] = row;
    char msg[160];
    std::snprintf(msg, sizeof msg, "shape %d/%d cd=%.6f iters=%d converged=%d (%.1fs)", id + 1, n_shapes, row.cd,
                  row.iterations, row.converged ? 1 : 0, seconds_since(t0));
    say(log, msg);
    if (failures > max_failures) {
      throw Error(ErrorCode::kNotConverged,
                  "solver failure rate above 20% (" + std::to_string(failures) + " of " + std::to_string(n_shapes) +
                      " shapes; resolution=" + fmt(cfg.resolution) + " nu=" + fmt(cfg.nu) +
                      " steady_tol=" + fmt(cfg.steady_tol) + " max_iters=" + std::to_string(cfg.max_iters) + ")");
    }
  }
  out.close();

  std::vector<int> order(static_cast<std::size_t>(n_shapes));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, kSplitStream));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * n_shapes));
  Dataset d;
  d.dir = dir;
  d.header = header;
  for (const auto& [id, r] : done) d.rows.push_back(r);
  for (std::size_t k = 0; k < order.size(); ++k) {
    d.rows[static_cast<std::size_t>(order[k])].split = k < n_train ? Split::kTrain : Split::kTest;
  }
  d.labels = label_stats(d.rows);
  write_manifest(final_path, d);
  fs::remove(partial_path);
  return d;
}

latentnet::TrainingData training_data(const Dataset& dataset) {
  latentnet::TrainingData data;
  for (const ManifestRow* r : dataset.usable(Split::kTrain)) {
    data.images.push_back(dataset.image(*r));
    data.labels.push_back(dataset.labels.standardize(r->cd));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Model comparison

std::string ModelSpec::label() const {
  return std::string(latentnet::to_string(mode)) + "/d" + std::to_string(latent_dim) + (doubled ? "/doubled" : "/base");
}

std::vector<ModelSpec> comparison_models() {
  std::vector<ModelSpec> out;
  for (auto mode : {latentnet::Mode::kJoint, latentnet::Mode::kSeparate}) {
    for (int d : {10, 20}) {
      for (bool doubled : {false, true}) out.push_back({d, doubled, mode});
    }
  }
  return out;
}

namespace {

struct Encoded {
  std::vector<shapegen::BinaryImage> images;
  Eigen::VectorXd y;
  Eigen::MatrixXd mu;
  Eigen::MatrixXd logvar;
};

Encoded encode_split(const Dataset& dataset, const latentnet::NetworkParams& params, Split split) {
  Encoded e;
  const auto rows = dataset.usable(split);
  e.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    e.images.push_back(dataset.image(*rows[i]));
    e.y[static_cast<Eigen::Index>(i)] = dataset.labels.standardize(rows[i]->cd);
  }
  latentnet::encode_all(e.images, params, e.mu, e.logvar);
  return e;
}

double dn_mse(const latentnet::NetworkParams& params, const Encoded& e) {
  if (e.y.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  const latentnet::Matrix<float> z = e.mu.transpose().cast<float>();
  const auto out = latentnet::dn_forward(params, z).output.cast<double>();
  return (out - e.y).squaredNorm() / static_cast<double>(e.y.size());
}

double recon_mse(const latentnet::NetworkParams& params, const Encoded& e) {
  if (e.images.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  constexpr Eigen::Index kChunk = 64;
  for (Eigen::Index lo = 0; lo < e.mu.rows(); lo += kChunk) {
    const Eigen::Index n = std::min(kChunk, e.mu.rows() - lo);
    const latentnet::Matrix<float> z = e.mu.middleRows(lo, n).transpose().cast<float>();
    const auto dec = latentnet::decoder_forward(params, z);
    for (Eigen::Index b = 0; b < n; ++b) {
      const auto& px = e.images[static_cast<std::size_t>(lo + b)].pixels;
      double s = 0.0;
      for (std::size_t p = 0; p < px.size(); ++p) {
        const double diff = static_cast<double>(dec.recon(static_cast<Eigen::Index>(p), b)) - px[p];
        s += diff * diff;
      }
      total += s / static_cast<double>(px.size());
    }
  }
  return total / static_cast<double>(e.images.size());
}

surrogate::SSGPModel fit_surrogate(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Config& cfg, int m,
                                   std::uint64_t seed) {
  surrogate::Hyperparameters h{cfg.lengthscale, cfg.sigma_f, cfg.sigma_n};
  if (cfg.fit_hyperparameters) h = surrogate::fit_hyperparameters(Z, y, m, seed, h);
  const auto basis = surrogate::build_basis(m, Eigen::VectorXd::Constant(Z.cols(), h.lengthscale), h.sigma_f, seed);
  return surrogate::fit(Z, y, basis, h.sigma_n);
}

}  // namespace

ModelMetrics evaluate_model(const Dataset& dataset, const latentnet::NetworkParams& params, const Config& cfg,
                            int ssgp_m, std::uint64_t seed) {
  ModelMetrics m;
  const Encoded train = encode_split(dataset, params, Split::kTrain);
  const Encoded test = encode_split(dataset, params, Split::kTest);
  m.dn_train_mse = dn_mse(params, train);
  m.dn_test_mse = dn_mse(params, test);
  m.recon_train_mse = recon_mse(params, train);
  m.recon_test_mse = recon_mse(params, test);
  const auto gp = fit_surrogate(train.mu, train.y, cfg, ssgp_m, derive_seed(seed, kSsgpStream));
  if (test.y.size() > 0) {
    const auto pred = surrogate::predict_batch(gp, test.mu, false);
    m.gp_test_mse = (pred.mean - test.y).squaredNorm() / static_cast<double>(test.y.size());
  } else {
    m.gp_test_mse = std::numeric_limits<double>::quiet_NaN();
  }
  m.ok = true;
  return m;
}

const std::vector<std::string>& ModelComparison::metric_names() {
  static const std::vector<std::string> names = {"dn_train_mse", "dn_test_mse", "gp_test_mse", "recon_train_mse",
                                                 "recon_test_mse"};
  return names;
}

double ModelComparison::metric(const ModelMetrics& m, std::size_t row) {
  switch (row) {
    case 0: return m.dn_train_mse;
    case 1: return m.dn_test_mse;
    case 2: return m.gp_test_mse;
    case 3: return m.recon_train_mse;
    case 4: return m.recon_test_mse;
    default: throw Error(ErrorCode::kInvalidArgument, "metric row out of range");
  }
}

std::vector<std::vector<double>> ModelComparison::normalized() const {
  std::vector<std::vector<double>> out;
  for (std::size_t row = 0; row < metric_names().size(); ++row) {
    double peak = 0.0;
    for (const auto& m : models) {
      if (m.ok) peak = std::max(peak, metric(m, row));
    }
    std::vector<double> r;
    for (const auto& m : models) {
      r.push_back(m.ok && peak > 0.0 ? metric(m, row) / peak : std::numeric_limits<double>::quiet_NaN());
    }
    out.push_back(std::move(r));
  }
  return out;
}

ModelComparison run_model_comparison(const Dataset& dataset, const Config& cfg, const std::vector<ModelSpec>& models,
                             std::uint64_t seed, const Logger& log) {
  const latentnet::TrainingData data = training_data(dataset);
  ModelComparison table;
  for (const ModelSpec& spec : models) {
    ModelMetrics m;
    m.spec = spec;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      latentnet::TrainConfig tc = cfg.training(spec.mode);
      tc.arch.latent_dim = spec.latent_dim;
      if (spec.doubled) tc.arch = tc.arch.with_doubled_units();
      tc.seed = seed;
      const auto result = latentnet::train(data, tc, [&](const latentnet::EpochMetrics& e) {
        if (e.epoch % 10 == 0 || e.epoch == tc.epochs) {
          char msg[200];
          std::snprintf(msg, sizeof msg, "%s stage %d epoch %d recon=%.5f kl=%.4f dn=%.5f", spec.label().c_str(),
                        e.stage, e.epoch, e.loss_recon, e.loss_kl, e.loss_dn);
          say(log, msg);
        }
      });
      m = evaluate_model(dataset, result.params, cfg, cfg.compare_ssgp_m, seed);
      m.spec = spec;
    } catch (const Error& e) {
      m.ok = false;
      m.error = e.what();
      say(log, spec.label() + " failed: " + m.error);
    }
    char msg[240];
    std::snprintf(msg, sizeof msg, "%s dn_test=%.5f gp_test=%.5f recon_test=%.5f (%.0fs)", spec.label().c_str(),
                  m.dn_test_mse, m.gp_test_mse, m.recon_test_mse, seconds_since(t0));
    say(log, msg);
    table.models.push_back(std::move(m));
  }
  return table;
}

void write_comparison(const fs::path& path, const ModelComparison& table) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "metric";
  for (const auto& m : table.models) out << '\t' << m.spec.label();
  out << '\n';
  const auto norm = table.normalized();
  char buf[40];
  for (std::size_t row = 0; row < norm.size(); ++row) {
    out << ModelComparison::metric_names()[row];
    for (std::size_t c = 0; c < table.models.size(); ++c) {
      if (!table.models[c].ok) {
        out << "\tfailed";
        continue;
      }
      std::snprintf(buf, sizeof buf, "\t%.2f", norm[row][c]);
      out << buf;
    }
    out << '\n';
  }
  out << "\n# raw values\n";
  for (std::size_t row = 0; row < norm.size(); ++row) {
    out << ModelComparison::metric_names()[row];
    for (const auto& m : table.models) out << '\t' << (m.ok ? fmt(ModelComparison::metric(m, row)) : "failed");
    out << '\n';
  }
  for (const auto& m : table.models) {
    if (!m.ok) out << "# " << m.spec.label() << " failed: " << m.error << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Optimisation campaign

CampaignReport run_optimization(const Dataset& dataset, const latentnet::NetworkParams& params, const Config& cfg,
                                const fs::path& out_dir, const Logger& log) {
  cfg.validate();
  ensure_dir(out_dir / "candidates");
  ensure_dir(out_dir / "fields");
  CampaignReport report;
  report.fluid = dataset.fluid();
  const flowsim::Grid grid = dataset.grid();
  const flowsim::SolverConfig solver = dataset.solver();

  auto t0 = std::chrono::steady_clock::now();
  const Encoded train = encode_split(dataset, params, Split::kTrain);
  report.timings.emplace_back("encode", seconds_since(t0));

  t0 = std::chrono::steady_clock::now();
  const auto model = fit_surrogate(train.mu, train.y, cfg, cfg.ssgp_m, derive_seed(cfg.seed, kSsgpStream));
  surrogate::save_model(out_dir / "ssgp.ckpt", model);
  report.timings.emplace_back("fit_surrogate", seconds_since(t0));

  const auto rows = dataset.usable(Split::kTrain);
  Eigen::Index best = 0;
  const double f_best = train.y.minCoeff(&best);
  report.best_train_cd = rows[static_cast<std::size_t>(best)]->cd;
  report.best_train_id = rows[static_cast<std::size_t>(best)]->id;

  t0 = std::chrono::steady_clock::now();
  const auto starts = optimizer::sample_starts(train.mu, train.logvar, cfg.starts, derive_seed(cfg.seed, kStartStream));
  const auto results = optimizer::multistart_ascent(model, starts, {f_best, cfg.xi});
  const auto picked = optimizer::select_candidates(results, cfg.candidates, cfg.dedup_radius);
  optimizer::write_candidates(out_dir / "latents.txt", picked);
  report.timings.emplace_back("ascent", seconds_since(t0));
  say(log, "ascent: " + std::to_string(picked.size()) + " candidates, best EI " + fmt(picked.front().ei));

  std::vector<flowsim::FlowField> fields;
  double t_extract = 0.0, t_sim = 0.0;
  for (std::size_t k = 0; k < picked.size(); ++k) {
    CandidateResult c;
    c.rank = static_cast<int>(k);
    c.ei = picked[k].ei;
    c.z = picked[k].z;
    const std::string name = "cand_" + padded(c.rank, 2);
    c.image_file = "candidates/" + name + ".gray";
    auto ts = std::chrono::steady_clock::now();
    const shapegen::GrayImage img = latentnet::decode(c.z, params);
    shapegen::write_gray_image(out_dir / c.image_file, img);
    shapegen::ShapeContour contour;
    try {
      contour = shapegen::extract_contour(img, 0.5, dataset.fourier_k());
      c.contour_file = "candidates/" + name + ".contour";
      shapegen::write_contour(out_dir / c.contour_file, contour);
      contour = shapegen::read_contour(out_dir / c.contour_file);
    } catch (const Error& e) {
      t_extract += seconds_since(ts);
      report.skipped.push_back(name + ": " + e.what());
      say(log, name + " skipped: " + e.what());
      continue;
    }
    t_extract += seconds_since(ts);
    ts = std::chrono::steady_clock::now();
    flowsim::FlowField field;
    try {
      c.record = flowsim::simulate_contour(name, contour, grid, report.fluid, solver, &field);
    } catch (const Error& e) {
      t_sim += seconds_since(ts);
      report.skipped.push_back(name + ": " + e.what());
      say(log, name + " skipped: " + e.what());
      continue;
    }
    t_sim += seconds_since(ts);
    if (!c.record.converged || !std::isfinite(c.record.cd)) {
      report.skipped.push_back(name + ": flow did not converge");
      say(log, name + " skipped: flow did not converge");
      continue;
    }
    c.improvement = (report.best_train_cd - c.record.cd) / report.best_train_cd;
    say(log, name + " cd=" + fmt(c.record.cd));
    report.candidates.push_back(std::move(c));
    fields.push_back(std::move(field));
  }
  report.timings.emplace_back("decode_extract", t_extract);
  report.timings.emplace_back("simulate", t_sim);
  if (report.candidates.empty()) {
    throw Error(ErrorCode::kNotConverged, "no candidate yielded a valid shape with a converged flow");
  }

  std::vector<std::size_t> order(report.candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return report.candidates[a].record.cd < report.candidates[b].record.cd;
  });
  std::vector<CandidateResult> sorted;
  for (std::size_t k = 0; k < order.size(); ++k) {
    CandidateResult c = std::move(report.candidates[order[k]]);
    if (k < 3) {
      c.field_file = "fields/cand_" + padded(c.rank, 2) + ".field";
      flowsim::write_field_dump(out_dir / c.field_file, fields[order[k]]);
    }
    sorted.push_back(std::move(c));
  }
  report.candidates = std::move(sorted);
  write_campaign(out_dir, report);
  return report;
}

void write_campaign(const fs::path& dir, const CampaignReport& report) {
  ensure_dir(dir);
  std::ofstream out(dir / "campaign.tsv");
  if (!out) throw Error(ErrorCode::kIo, "cannot write campaign in " + dir.string());
  out << "# best_train_cd=" << fmt(report.best_train_cd) << '\n';
  out << "# best_train_id=" << report.best_train_id << '\n';
  out << "# rho=" << fmt(report.fluid.rho) << '\n';
  out << "# nu=" << fmt(report.fluid.nu) << '\n';
  out << "# v_in=" << fmt(report.fluid.v_in) << '\n';
  for (const auto& s : report.skipped) out << "# skipped=" << s << '\n';
  out << "rank\tei\tcd\timprovement\tdrag_force\tlift_force\tfrontal_area\titerations\timage\tcontour\tfield\tz\n";
  for (const auto& c : report.candidates) {
    out << c.rank << '\t' << fmt(c.ei) << '\t' << fmt(c.record.cd) << '\t' << fmt(c.improvement) << '\t'
        << fmt(c.record.drag_force) << '\t' << fmt(c.record.lift_force) << '\t' << fmt(c.record.frontal_area) << '\t'
        << c.record.iterations << '\t' << c.image_file << '\t' << c.contour_file << '\t'
        << (c.field_file.empty() ? "-" : c.field_file) << '\t';
    for (Eigen::Index j = 0; j < c.z.size(); ++j) out << (j ? "," : "") << fmt(c.z[j]);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed in " + dir.string());
  // Wall-clock timings live apart from the reproducible campaign record.
  std::ofstream t(dir / "timings.tsv");
  for (const auto& [phase, sec] : report.timings) t << phase << '\t' << fmt(sec) << '\n';
}

CampaignReport read_campaign(const fs::path& dir) {
  std::ifstream in(dir / "campaign.tsv");
  if (!in) throw Error(ErrorCode::kIo, "cannot read campaign in " + dir.string());
  CampaignReport r;
  std::map<std::string, std::string> header;
  std::string line;
  bool columns_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2), value = line.substr(eq + 1);
      if (key == "skipped") {
        r.skipped.push_back(value);
      } else {
        header[key] = value;
      }
      continue;
    }
    if (!columns_seen) {
      columns_seen = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t')) f.push_back(cell);
    if (f.size() != 12) throw Error(ErrorCode::kFormat, "bad campaign row: " + line);
    CandidateResult c;
    c.rank = parse_int<int>(f[0], "rank");
    c.ei = parse_double(f[1], "ei");
    c.record.cd = parse_double(f[2], "cd");
    c.improvement = parse_double(f[3], "improvement");
    c.record.drag_force = parse_double(f[4], "drag_force");
    c.record.lift_force = parse_double(f[5], "lift_force");
    c.record.frontal_area = parse_double(f[6], "frontal_area");
    c.record.iterations = parse_int<int>(f[7], "iterations");
    c.record.converged = true;
    c.record.shape_id = "cand_" + padded(c.rank, 2);
    c.image_file = f[8];
    c.contour_file = f[9];
    c.field_file = f[10] == "-" ? "" : f[10];
    std::vector<double> z;
    std::stringstream zs(f[11]);
    while (std::getline(zs, cell, ',')) z.push_back(parse_double(cell, "z"));
    c.z = Eigen::Map<Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
    r.candidates.push_back(std::move(c));
  }
  r.best_train_cd = parse_double(header_value(header, "best_train_cd"), "best_train_cd");
  r.best_train_id = parse_int<int>(header_value(header, "best_train_id"), "best_train_id");
  r.fluid = {parse_double(header_value(header, "rho"), "rho"), parse_double(header_value(header, "nu"), "nu"),
             parse_double(header_value(header, "v_in"), "v_in")};
  std::ifstream t(dir / "timings.tsv");
  std::string phase;
  double sec;
  while (t >> phase >> sec) r.timings.emplace_back(phase, sec);
  return r;
}

std::vector<flowsim::DragRecord> evaluate_candidates(
    const std::vector<std::pair<std::string, shapegen::ShapeContour>>& contours, const flowsim::Grid& grid,
    const flowsim::FluidParams& fluid, const flowsim::SolverConfig& solver) {
  std::vector<flowsim::DragRecord> out;
  for (const auto& [name, contour] : contours) {
    try {
      out.push_back(flowsim::simulate_contour(name, contour, grid, fluid, solver));
    } catch (const Error&) {
      flowsim::DragRecord r;
      r.shape_id = name;
      r.cd = std::numeric_limits<double>::quiet_NaN();
      r.converged = false;
      out.push_back(r);
    }
  }
  return out;
}

void write_drag_records(const fs::path& path, const std::vector<flowsim::DragRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "shape_id\tcd\tfrontal_area\tdrag_force\tlift_force\tconverged\titerations\n";
  for (const auto& r : records) {
    out << r.shape_id << '\t' << fmt(r.cd) << '\t' << fmt(r.frontal_area) << '\t' << fmt(r.drag_force) << '\t'
        << fmt(r.lift_force) << '\t' << (r.converged ? 1 : 0) << '\t' << r.iterations << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

void write_pgm(const fs::path& path, int width, int height, const std::vector<double>& values, double scale) {
  if (values.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::kInvalidArgument, "image buffer does not match its dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  std::vector<unsigned char> bytes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = scale > 0.0 ? values[i] / scale : 0.0;
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

void report(const fs::path& campaign_dir) {
  const CampaignReport r = read_campaign(campaign_dir);
  const fs::path out_dir = campaign_dir / "report";
  ensure_dir(out_dir);
  std::ofstream csv(out_dir / "summary.csv");
  if (!csv) throw Error(ErrorCode::kIo, "cannot write " + (out_dir / "summary.csv").string());
  csv << "rank,ei,cd,best_train_cd,improvement,frontal_area,drag_force,lift_force,iterations,image,render\n";
  for (const auto& c : r.candidates) {
    const std::string name = "cand_" + padded(c.rank, 2);
    const shapegen::GrayImage img = shapegen::read_gray_image(campaign_dir / c.image_file);
    std::vector<double> px(img.pixels.begin(), img.pixels.end());
    write_pgm(out_dir / (name + ".pgm"), img.width, img.height, px);
    std::string render = "-";
    if (!c.field_file.empty()) {
      const flowsim::FlowField f = flowsim::read_field_dump(campaign_dir / c.field_file);
      const std::vector<double> mag = flowsim::velocity_magnitude(f);
      const double peak = *std::max_element(mag.begin(), mag.end());
      render = name + "_velocity.pgm";
      write_pgm(out_dir / render, f.grid.nx, f.grid.ny, mag, peak);
    }
    csv << c.rank << ',' << fmt(c.ei) << ',' << fmt(c.record.cd) << ',' << fmt(r.best_train_cd) << ','
        << fmt(c.improvement) << ',' << fmt(c.record.frontal_area) << ',' << fmt(c.record.drag_force) << ','
        << fmt(c.record.lift_force) << ',' << c.record.iterations << ',' << name << ".pgm," << render << '\n';
  }
  if (!csv) throw Error(ErrorCode::kIo, "write failed for summary.csv");
}

}  // namespace dragopt::pipeline
