#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dragopt/surrogate.hpp"

namespace dragopt::optimizer {

// Expected improvement below the incumbent (we minimise drag).
struct EIState {
  double f_best = 0.0;
  double xi = 0.0;
};

struct AscentResult {
  Eigen::VectorXd z;
  double ei = 0.0;
  int iterations = 0;
  bool converged = false;
  int start_index = 0;
};

struct AscentConfig {
  double initial_step = 0.1;
  double growth = 1.2;
  double gradient_tol = 1e-6;
  int max_iters = 500;
  int batch_size = 256;  // points evaluated per surrogate call
};

double normal_cdf(double u);
double normal_pdf(double u);

double expected_improvement(double mean, double variance, const EIState& state);

// Gradient of EI with respect to (mean, variance) composed with the
// surrogate derivatives.
Eigen::VectorXd ei_gradient(const surrogate::SSGPModel& model, const Eigen::VectorXd& z, const EIState& state);

// z = mu_i + exp(logvar_i / 2) * eps with i drawn uniformly.
std::vector<Eigen::VectorXd> sample_starts(const Eigen::MatrixXd& train_mu, const Eigen::MatrixXd& train_logvar,
                                           int count, std::uint64_t seed);

// Gradient ascent with backtracking (halve on failure, grow on success) per
// start. Starts are advanced in lock-step batches; the batch size only moves
// results at rounding level, and a fixed batch size is bitwise repeatable.
// Results are sorted by EI descending, ties by start index.
std::vector<AscentResult> multistart_ascent(const surrogate::SSGPModel& model, const std::vector<Eigen::VectorXd>& starts,
                                            const EIState& state, const AscentConfig& cfg = {});

// Greedy pick in descending EI, skipping points within dedup_radius of a
// previous pick.
std::vector<AscentResult> select_candidates(const std::vector<AscentResult>& results, int k, double dedup_radius);

// "ei z_1 ... z_d" per line.
void write_candidates(const std::filesystem::path& path, const std::vector<AscentResult>& candidates);
std::vector<AscentResult> read_candidates(const std::filesystem::path& path);

}  // namespace dragopt::optimizer
