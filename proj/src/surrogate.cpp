#include "dragopt/surrogate.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "dragopt/checkpoint.hpp"
#include "dragopt/error.hpp"
#include "dragopt/rng.hpp"

namespace dragopt::surrogate {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double feature_scale(const SpectralBasis& b) { return b.sigma_f / std::sqrt(static_cast<double>(b.m())); }

// Phi: n x 2m, rows are feature vectors.
Eigen::MatrixXd feature_matrix(const Eigen::MatrixXd& Z, const SpectralBasis& basis) {
  const int m = basis.m();
  const Eigen::MatrixXd proj = kTwoPi * (Z * basis.frequencies.transpose());
  Eigen::MatrixXd phi(Z.rows(), 2 * m);
  const double scale = feature_scale(basis);
  phi.leftCols(m) = scale * proj.array().cos().matrix();
  phi.rightCols(m) = scale * proj.array().sin().matrix();
  return phi;
}

void check_inputs(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const SpectralBasis& basis, double sigma_n) {
  if (Z.rows() < 1) throw Error(ErrorCode::kInvalidArgument, "need at least one training point");
  if (Z.rows() != y.size()) throw Error(ErrorCode::kInvalidArgument, "Z and y row counts differ");
  if (Z.cols() != basis.dim()) throw Error(ErrorCode::kInvalidArgument, "latent dimension does not match basis");
  if (!(sigma_n > 0)) throw Error(ErrorCode::kInvalidArgument, "sigma_n must be positive");
  if (!Z.allFinite()) throw Error(ErrorCode::kNonFinite, "non-finite training inputs");
  if (!y.allFinite()) throw Error(ErrorCode::kNonFinite, "NaN or infinite labels");
}

Eigen::LLT<Eigen::MatrixXd> factor_gram(const Eigen::MatrixXd& phi, double sigma_n) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(phi.cols(), phi.cols()) * (sigma_n * sigma_n);
  a.selfadjointView<Eigen::Lower>().rankUpdate(phi.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kFactorization,
                "Cholesky of Phi^T Phi + sigma_n^2 I failed (sigma_n=" + std::to_string(sigma_n) + ")");
  }
  return llt;
}

void check_point(const SSGPModel& model, const Eigen::VectorXd& z) {
  if (z.size() != model.basis.dim()) throw Error(ErrorCode::kInvalidArgument, "latent dimension mismatch");
}

}  // namespace

SpectralBasis build_basis(int m, const Eigen::VectorXd& lengthscales, double sigma_f, std::uint64_t seed) {
  if (m < 1) throw Error(ErrorCode::kInvalidArgument, "m must be >= 1");
  if (lengthscales.size() < 1 || (lengthscales.array() <= 0).any() || !(sigma_f > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "hyperparameters must be positive");
  }
  SpectralBasis b;
  b.lengthscales = lengthscales;
  b.sigma_f = sigma_f;
  b.seed = seed;
  b.frequencies.resize(m, lengthscales.size());
  Rng rng(seed);
  std::normal_distribution<double> normal;
  for (int r = 0; r < m; ++r) {
    for (int j = 0; j < lengthscales.size(); ++j) b.frequencies(r, j) = normal(rng) / (kTwoPi * lengthscales[j]);
  }
  return b;
}

Eigen::VectorXd feature_map(const Eigen::VectorXd& z, const SpectralBasis& basis) {
  if (z.size() != basis.dim()) throw Error(ErrorCode::kInvalidArgument, "latent dimension mismatch");
  return feature_matrix(z.transpose(), basis).transpose();
}

SSGPModel fit(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const SpectralBasis& basis, double sigma_n) {
  check_inputs(Z, y, basis, sigma_n);
  const Eigen::MatrixXd phi = feature_matrix(Z, basis);
  const auto llt = factor_gram(phi, sigma_n);
  SSGPModel model;
  model.basis = basis;
  model.sigma_n = sigma_n;
  model.n_train = static_cast<int>(Z.rows());
  model.weights = llt.solve(phi.transpose() * y);
  model.chol_lower = llt.matrixL();
  return model;
}

Prediction predict(const SSGPModel& model, const Eigen::VectorXd& z) {
  check_point(model, z);
  const Eigen::VectorXd phi = feature_map(z, model.basis);
  const Eigen::VectorXd a = model.chol_lower.triangularView<Eigen::Lower>().solve(phi);
  return {phi.dot(model.weights), model.sigma_n * model.sigma_n * a.squaredNorm()};
}

PredictionGradient predict_grad(const SSGPModel& model, const Eigen::VectorXd& z) {
  check_point(model, z);
  const BatchPrediction batch = predict_batch(model, z.transpose(), true);
  return {batch.dmean.row(0).transpose(), batch.dvariance.row(0).transpose()};
}

BatchPrediction predict_batch(const SSGPModel& model, const Eigen::MatrixXd& Z, bool with_gradients) {
  const SpectralBasis& basis = model.basis;
  if (Z.cols() != basis.dim()) throw Error(ErrorCode::kInvalidArgument, "latent dimension mismatch");
  const int m = basis.m();
  const double scale = feature_scale(basis);
  const double noise2 = model.sigma_n * model.sigma_n;

  // Column b of `features` is phi(z_b).
  const Eigen::MatrixXd proj = kTwoPi * (basis.frequencies * Z.transpose());  // m x B
  const Eigen::ArrayXXd cos_p = proj.array().cos();
  const Eigen::ArrayXXd sin_p = proj.array().sin();
  Eigen::MatrixXd features(2 * m, Z.rows());
  features.topRows(m) = scale * cos_p.matrix();
  features.bottomRows(m) = scale * sin_p.matrix();

  BatchPrediction out;
  out.mean = features.transpose() * model.weights;
  Eigen::MatrixXd solved = features;
  model.chol_lower.triangularView<Eigen::Lower>().solveInPlace(solved);
  out.variance = noise2 * solved.colwise().squaredNorm().transpose();
  if (!with_gradients) return out;

  // d phi / dz contracted with a 2m-vector v is S^T (2 pi scale (-sin . v_cos + cos . v_sin)).
  auto contract = [&](const Eigen::MatrixXd& v) {
    const Eigen::ArrayXXd coeff =
        kTwoPi * scale * (-sin_p * v.topRows(m).array() + cos_p * v.bottomRows(m).array());
    return Eigen::MatrixXd(coeff.matrix().transpose() * basis.frequencies);  // B x d
  };
  out.dmean = contract(model.weights.replicate(1, Z.rows()));
  model.chol_lower.transpose().triangularView<Eigen::Upper>().solveInPlace(solved);  // Sigma_w phi / sigma_n^2
  out.dvariance = 2.0 * noise2 * contract(solved);
  return out;
}

double log_marginal_likelihood(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const SpectralBasis& basis,
                               double sigma_n) {
  check_inputs(Z, y, basis, sigma_n);
  const Eigen::MatrixXd phi = feature_matrix(Z, basis);
  const double noise2_n = sigma_n * sigma_n;
  if (phi.rows() < phi.cols()) {
    // Fewer data than features: the n x n form Phi Phi^T + s^2 I is cheaper.
    Eigen::MatrixXd c = Eigen::MatrixXd::Identity(phi.rows(), phi.rows()) * noise2_n;
    c.selfadjointView<Eigen::Lower>().rankUpdate(phi);
    const Eigen::LLT<Eigen::MatrixXd> cl(c);
    if (cl.info() != Eigen::Success) throw Error(ErrorCode::kFactorization, "kernel matrix not positive definite");
    const Eigen::VectorXd a = cl.matrixL().solve(y);
    const double logdet = 2.0 * cl.matrixLLT().diagonal().array().log().sum();
    return -0.5 * a.squaredNorm() - 0.5 * logdet - 0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi);
  }
  const auto llt = factor_gram(phi, sigma_n);
  const double n = static_cast<double>(Z.rows());
  const double features = static_cast<double>(phi.cols());
  const double noise2 = sigma_n * sigma_n;
  const Eigen::VectorXd b = llt.matrixL().solve(phi.transpose() * y);
  const double quad = (y.squaredNorm() - b.squaredNorm()) / noise2;
  const double logdet_a = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  // log|Phi Phi^T + s^2 I_n| = log|A| + (n - 2m) log s^2
  const double logdet_c = logdet_a + (n - features) * std::log(noise2);
  return -0.5 * quad - 0.5 * logdet_c - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

Hyperparameters fit_hyperparameters(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, int m, std::uint64_t seed,
                                    Hyperparameters start, int sweeps) {
  auto evaluate = [&](const Hyperparameters& h) {
    const Eigen::VectorXd ls = Eigen::VectorXd::Constant(Z.cols(), h.lengthscale);
    try {
      return log_marginal_likelihood(Z, y, build_basis(m, ls, h.sigma_f, seed), h.sigma_n);
    } catch (const Error&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  Hyperparameters best = start;
  double best_value = evaluate(best);

  // The evidence has a broad all-noise optimum at short lengthscales, so the
  // local search starts from the best point of a coarse grid scaled by the
  // median pairwise distance (first 500 rows are plenty for that).
  const Eigen::Index rows = std::min<Eigen::Index>(Z.rows(), 500);
  std::vector<double> dist;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < i; ++j) dist.push_back((Z.row(i) - Z.row(j)).norm());
  if (!dist.empty()) {
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2), dist.end());
    const double median = dist[dist.size() / 2];
    const double spread = std::sqrt((y.array() - y.mean()).square().mean());
    if (median > 0.0 && spread > 0.0) {
      for (double lf : {0.125, 0.25, 0.5, 1.0, 2.0}) {
        for (double nf : {0.05, 0.2, 0.8}) {
          const Hyperparameters trial{lf * median, spread, nf * spread};
          const double value = evaluate(trial);
          if (value > best_value) {
            best = trial;
            best_value = value;
          }
        }
      }
    }
  }

  double step = 0.5;  // in log space
  for (int sweep = 0; sweep < sweeps && step > 1e-3; ++sweep) {
    bool improved = false;
    for (int coord = 0; coord < 3; ++coord) {
      for (double dir : {1.0, -1.0}) {
        Hyperparameters trial = best;
        double& target = coord == 0 ? trial.lengthscale : coord == 1 ? trial.sigma_f : trial.sigma_n;
        target *= std::exp(dir * step);
        const double value = evaluate(trial);
        if (value > best_value) {
          best = trial;
          best_value = value;
          improved = true;
          break;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return best;
}

void save_model(const std::filesystem::path& path, const SSGPModel& model) {
  checkpoint::Container c;
  c.attributes["kind"] = "ssgp";
  c.attributes["seed"] = std::to_string(model.basis.seed);
  c.attributes["n_train"] = std::to_string(model.n_train);
  const auto m = static_cast<std::int64_t>(model.basis.m());
  const auto d = static_cast<std::int64_t>(model.basis.dim());
  auto rowmajor = [](const Eigen::MatrixXd& mat) {
    std::vector<double> out(static_cast<std::size_t>(mat.size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.data(), mat.rows(), mat.cols()) = mat;
    return out;
  };
  c.add_f64("S", {m, d}, rowmajor(model.basis.frequencies));
  c.add_f64("lengthscales", {d}, {model.basis.lengthscales.data(), model.basis.lengthscales.data() + d});
  c.add_f64("sigma_f", {1}, {model.basis.sigma_f});
  c.add_f64("sigma_n", {1}, {model.sigma_n});
  c.add_f64("w", {2 * m}, {model.weights.data(), model.weights.data() + 2 * m});
  c.add_f64("covariance_factor", {2 * m, 2 * m}, rowmajor(model.chol_lower));
  checkpoint::write(path, c);
}

SSGPModel load_model(const std::filesystem::path& path) {
  const checkpoint::Container c = checkpoint::read(path);
  auto matrix = [&](const std::string& name) {
    const auto& t = c.get(name);
    if (t.dtype != checkpoint::DType::kF64 || t.shape.size() != 2) throw Error(ErrorCode::kFormat, name + " must be 2-D f64");
    return Eigen::MatrixXd(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        t.f64.data(), t.shape[0], t.shape[1]));
  };
  auto vector = [&](const std::string& name) {
    const auto& t = c.get(name);
    if (t.dtype != checkpoint::DType::kF64) throw Error(ErrorCode::kFormat, name + " must be f64");
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(t.f64.data(), static_cast<Eigen::Index>(t.f64.size())));
  };
  SSGPModel model;
  model.basis.frequencies = matrix("S");
  model.basis.lengthscales = vector("lengthscales");
  model.basis.sigma_f = vector("sigma_f")[0];
  model.sigma_n = vector("sigma_n")[0];
  model.weights = vector("w");
  model.chol_lower = matrix("covariance_factor");
  if (auto it = c.attributes.find("seed"); it != c.attributes.end()) model.basis.seed = std::stoull(it->second);
  if (auto it = c.attributes.find("n_train"); it != c.attributes.end()) model.n_train = std::stoi(it->second);
  const auto m = model.basis.m();
  if (model.weights.size() != 2 * m || model.chol_lower.rows() != 2 * m || model.chol_lower.cols() != 2 * m) {
    throw Error(ErrorCode::kFormat, "inconsistent SSGP tensor shapes in " + path.string());
  }
  return model;
}

}  // namespace dragopt::surrogate
