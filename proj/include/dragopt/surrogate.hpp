#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>

namespace dragopt::surrogate {

// Spectral frequencies of a squared-exponential kernel: each row is
// eps / (2 pi l) with eps standard normal.
struct SpectralBasis {
  Eigen::MatrixXd frequencies;  // m x d
  Eigen::VectorXd lengthscales;
  double sigma_f = 1.0;
  std::uint64_t seed = 0;

  int m() const { return static_cast<int>(frequencies.rows()); }
  int dim() const { return static_cast<int>(frequencies.cols()); }
};

// Bayesian linear regression over trigonometric features.
//   A = Phi^T Phi + sigma_n^2 I,   Sigma_w = sigma_n^2 A^{-1},   w = A^{-1} Phi^T y
// Only the Cholesky factor of A is stored.
struct SSGPModel {
  SpectralBasis basis;
  double sigma_n = 0.1;
  Eigen::VectorXd weights;     // 2m
  Eigen::MatrixXd chol_lower;  // 2m x 2m, A = L L^T
  int n_train = 0;
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;  // latent-function variance, noise excluded
};

struct PredictionGradient {
  Eigen::VectorXd dmean;
  Eigen::VectorXd dvariance;
};

// Batched evaluation at the rows of Z.
struct BatchPrediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::MatrixXd dmean;      // rows: points
  Eigen::MatrixXd dvariance;  // rows: points
};

SpectralBasis build_basis(int m, const Eigen::VectorXd& lengthscales, double sigma_f, std::uint64_t seed);

Eigen::VectorXd feature_map(const Eigen::VectorXd& z, const SpectralBasis& basis);

SSGPModel fit(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const SpectralBasis& basis, double sigma_n);

Prediction predict(const SSGPModel& model, const Eigen::VectorXd& z);

PredictionGradient predict_grad(const SSGPModel& model, const Eigen::VectorXd& z);

BatchPrediction predict_batch(const SSGPModel& model, const Eigen::MatrixXd& Z, bool with_gradients);

double log_marginal_likelihood(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const SpectralBasis& basis,
                               double sigma_n);

struct Hyperparameters {
  double lengthscale = 1.0;
  double sigma_f = 1.0;
  double sigma_n = 0.1;
};

// Gradient-free coordinate search over log(l), log(sigma_f), log(sigma_n)
// maximising the log evidence. The spectral draws stay fixed (same seed).
// The search starts from the better of `start` and a coarse grid built from
// the median pairwise distance of Z and the spread of y.
Hyperparameters fit_hyperparameters(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, int m, std::uint64_t seed,
                                    Hyperparameters start, int sweeps = 20);

void save_model(const std::filesystem::path& path, const SSGPModel& model);
SSGPModel load_model(const std::filesystem::path& path);

}  // namespace dragopt::surrogate
