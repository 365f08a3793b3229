#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dragopt/flowsim.hpp"
#include "dragopt/latentnet.hpp"
#include "dragopt/shapegen.hpp"

namespace dragopt::pipeline {

using Logger = std::function<void(const std::string&)>;

// Every key of the text config ("key = value" lines, '#' comments).
struct Config {
  // flow domain and solver
  double domain_lx = 4.0;
  double domain_ly = 3.0;
  double resolution = 64.0;  // cells per unit length
  double nu = 0.02;
  double rho = 1.0;
  double v_in = 1.0;
  double steady_tol = 1e-6;
  int max_iters = 200000;
  // shape sampling
  double r_min = 0.3;
  double r_max = 0.7;
  int n_angles = 16;
  int fourier_k = 6;
  // networks
  int latent_dim = 20;
  int dense_units = 256;
  int dn_units = 64;
  double kl_clamp = 10.0;
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  // surrogate
  int ssgp_m = 1000;
  int compare_ssgp_m = 500;
  double lengthscale = 1.0;
  double sigma_f = 1.0;
  double sigma_n = 0.1;
  int fit_hyperparameters = 1;  // evidence maximisation starting from the values above
  // optimisation campaign
  int starts = 2000;
  int candidates = 25;
  double dedup_radius = 0.1;
  double xi = 0.0;

  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);
  std::string to_text() const;
  static std::vector<std::string> keys();

  void validate() const;
  flowsim::FluidParams fluid() const;
  flowsim::Grid grid() const;
  flowsim::SolverConfig solver() const;
  shapegen::ShapeConfig shape() const;
  latentnet::TrainConfig training(latentnet::Mode mode) const;
};

// ---------------------------------------------------------------------------
// Dataset

enum class Split { kTrain, kTest };

struct ManifestRow {
  int id = 0;
  std::uint64_t seed = 0;  // seed that produced the stored contour
  double cd = 0.0;
  double frontal_area = 0.0;
  double drag_force = 0.0;
  double lift_force = 0.0;
  bool converged = false;
  int iterations = 0;
  Split split = Split::kTrain;
  std::string image_file;    // relative to the dataset directory
  std::string contour_file;  // relative to the dataset directory
};

struct LabelStats {
  double mean = 0.0;
  double std = 1.0;
  double standardize(double cd) const { return (cd - mean) / std; }
};

struct Dataset {
  std::filesystem::path dir;
  std::map<std::string, std::string> header;  // generation settings
  std::vector<ManifestRow> rows;              // sorted by id
  LabelStats labels;                          // converged training rows only

  // Settings recorded at generation time.
  flowsim::FluidParams fluid() const;
  flowsim::Grid grid() const;
  flowsim::SolverConfig solver() const;
  int fourier_k() const;

  // Converged rows of one split, in id order.
  std::vector<const ManifestRow*> usable(Split split) const;
  shapegen::BinaryImage image(const ManifestRow& row) const;
  shapegen::ShapeContour contour(const ManifestRow& row) const;
};

// Sample, smooth, rasterize and simulate n_shapes shapes into dir. Rows are
// appended to a partial manifest as they finish, so an interrupted run picks
// up where it stopped; the final manifest is sorted by id and carries the
// 80/20 split. Aborts when more than 20% of the simulations fail.
Dataset generate_dataset(const Config& cfg, const std::filesystem::path& dir, int n_shapes, std::uint64_t seed,
                         const Logger& log = {});

Dataset load_dataset(const std::filesystem::path& dir);

void write_manifest(const std::filesystem::path& path, const Dataset& dataset);

// Images and standardized labels of the converged training rows.
latentnet::TrainingData training_data(const Dataset& dataset);

// ---------------------------------------------------------------------------
// Model comparison

struct ModelSpec {
  int latent_dim = 20;
  bool doubled = false;
  latentnet::Mode mode = latentnet::Mode::kJoint;
  std::string label() const;
};

// d in {10, 20} x {base, doubled} x {joint, separate}; joint first.
std::vector<ModelSpec> comparison_models();

struct ModelMetrics {
  ModelSpec spec;
  bool ok = false;
  std::string error;
  double dn_train_mse = 0.0;
  double dn_test_mse = 0.0;
  double gp_test_mse = 0.0;
  double recon_train_mse = 0.0;
  double recon_test_mse = 0.0;
};

// Metrics of an already trained model (drag errors in standardized units,
// reconstruction errors per pixel, all evaluated at the posterior means).
ModelMetrics evaluate_model(const Dataset& dataset, const latentnet::NetworkParams& params, const Config& cfg,
                            int ssgp_m, std::uint64_t seed);

struct ModelComparison {
  std::vector<ModelMetrics> models;
  static const std::vector<std::string>& metric_names();
  static double metric(const ModelMetrics& m, std::size_t row);
  // Each metric divided by its largest value over the successful models.
  std::vector<std::vector<double>> normalized() const;
};

ModelComparison run_model_comparison(const Dataset& dataset, const Config& cfg, const std::vector<ModelSpec>& models,
                             std::uint64_t seed, const Logger& log = {});

void write_comparison(const std::filesystem::path& path, const ModelComparison& table);

// ---------------------------------------------------------------------------
// Optimisation campaign

struct CandidateResult {
  int rank = 0;  // position after EI selection
  double ei = 0.0;
  Eigen::VectorXd z;
  std::string image_file;    // relative to the campaign directory
  std::string contour_file;  // relative to the campaign directory
  std::string field_file;    // empty unless among the top three
  flowsim::DragRecord record;
  double improvement = 0.0;  // (best_train_cd - cd) / best_train_cd
};

struct CampaignReport {
  double best_train_cd = 0.0;
  int best_train_id = -1;
  flowsim::FluidParams fluid;
  std::vector<CandidateResult> candidates;  // evaluated, sorted by cd ascending
  std::vector<std::string> skipped;         // one reason per dropped candidate
  std::vector<std::pair<std::string, double>> timings;  // seconds per phase
};

CampaignReport run_optimization(const Dataset& dataset, const latentnet::NetworkParams& params, const Config& cfg,
                                const std::filesystem::path& out_dir, const Logger& log = {});

void write_campaign(const std::filesystem::path& dir, const CampaignReport& report);
CampaignReport read_campaign(const std::filesystem::path& dir);

// Simulates every contour with one solver configuration; failures come back
// flagged (converged = false, cd = NaN) rather than thrown.
std::vector<flowsim::DragRecord> evaluate_candidates(const std::vector<std::pair<std::string, shapegen::ShapeContour>>& contours,
                                                     const flowsim::Grid& grid, const flowsim::FluidParams& fluid,
                                                     const flowsim::SolverConfig& solver);

void write_drag_records(const std::filesystem::path& path, const std::vector<flowsim::DragRecord>& records);

// summary.csv, candidate images and velocity-magnitude renderings (PGM) for
// every candidate that has a field dump.
void report(const std::filesystem::path& campaign_dir);

// Binary PGM (P5); values are clamped to [0, 1] after dividing by scale.
void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<double>& values,
               double scale = 1.0);

}  // namespace dragopt::pipeline
