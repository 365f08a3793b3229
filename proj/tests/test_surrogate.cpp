#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "doctest.h"
#include "dragopt/error.hpp"
#include "dragopt/surrogate.hpp"
#include "stat_oracle.hpp"

using namespace dragopt;
using namespace dragopt::surrogate;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using oracle::random_matrix;
using oracle::smooth_target;

namespace {

// Log evidence of y under N(0, Phi Phi^T + sn^2 I), assembled directly.
double direct_lml(const MatrixXd& Z, const VectorXd& y, const SpectralBasis& basis, double sn) {
  const auto n = Z.rows();
  MatrixXd Phi(n, 2 * basis.m());
  for (Eigen::Index i = 0; i < n; ++i) Phi.row(i) = feature_map(Z.row(i).transpose(), basis).transpose();
  MatrixXd C = Phi * Phi.transpose();
  C.diagonal().array() += sn * sn;
  Eigen::LLT<MatrixXd> llt(C);
  const MatrixXd L = llt.matrixL();
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  return -0.5 * y.dot(llt.solve(y)) - 0.5 * logdet - 0.5 * n * std::log(2 * std::numbers::pi);
}

}  // namespace

TEST_CASE("build_basis: determinism, scaling, shape") {
  const VectorXd l = VectorXd::Ones(20);
  const auto a = build_basis(1000, l, 1.0, 5);
  CHECK(a.frequencies.rows() == 1000);
  CHECK(a.frequencies.cols() == 20);
  CHECK(a.frequencies == build_basis(1000, l, 1.0, 5).frequencies);
  const auto b = build_basis(1000, 2.0 * l, 1.0, 5);
  CHECK((b.frequencies - 0.5 * a.frequencies).cwiseAbs().maxCoeff() < 1e-15);
  // Frequencies are eps / (2 pi l): variance 1 / (2 pi)^2.
  const double var = a.frequencies.array().square().mean();
  CHECK(var == doctest::Approx(1.0 / (4 * std::numbers::pi * std::numbers::pi)).epsilon(0.03));
  CHECK_THROWS_AS(build_basis(0, l, 1.0, 5), Error);
  CHECK_THROWS_AS(build_basis(10, l, -1.0, 5), Error);
  CHECK_THROWS_AS(build_basis(10, -l, 1.0, 5), Error);
}

TEST_CASE("feature_map identities and kernel convergence") {
  const auto basis = build_basis(64, VectorXd::Ones(3), 1.7, 2);
  const VectorXd phi0 = feature_map(VectorXd::Zero(3), basis);
  REQUIRE(phi0.size() == 128);
  for (int r = 0; r < 64; ++r) {
    CHECK(phi0[r] == doctest::Approx(1.7 / 8.0));
    CHECK(phi0[64 + r] == 0.0);
  }
  const MatrixXd pts = random_matrix(20, 3, 9, 2.0);
  for (int i = 0; i < 20; ++i) CHECK(feature_map(pts.row(i).transpose(), basis).squaredNorm() == doctest::Approx(1.7 * 1.7));
  CHECK_THROWS_AS(feature_map(VectorXd::Zero(2), basis), Error);

  const auto big = build_basis(4096, VectorXd::Ones(2), 1.0, 3);
  const MatrixXd u = random_matrix(30, 2, 4);
  double worst = 0;
  for (int i = 0; i < 30; ++i) {
    for (int j = 0; j < 30; ++j) {
      const double approx = feature_map(u.row(i).transpose(), big).dot(feature_map(u.row(j).transpose(), big));
      worst = std::max(worst, std::abs(approx - std::exp(-(u.row(i) - u.row(j)).squaredNorm() / 2)));
    }
  }
  CHECK(worst < 0.05);
}

TEST_CASE("fit: interpolation, zero labels, errors") {
  const auto basis = build_basis(200, VectorXd::Ones(2), 1.0, 1);
  MatrixXd Z(1, 2);
  Z << 0.3, -0.2;
  VectorXd y(1);
  y << 0.8;
  const auto model = fit(Z, y, basis, 1e-6);
  CHECK(predict(model, Z.row(0).transpose()).mean == doctest::Approx(0.8).epsilon(1e-4));

  const auto m3 = fit(Z, y, basis, 1e-3);
  CHECK(predict(m3, Z.row(0).transpose()).variance < 1.0);

  const MatrixXd Zs = random_matrix(15, 2, 7);
  const auto zero = fit(Zs, VectorXd::Zero(15), basis, 0.1);
  CHECK(zero.weights.cwiseAbs().maxCoeff() == 0.0);
  CHECK(predict(zero, VectorXd::Constant(2, 0.4)).mean == 0.0);
  const auto g = predict_grad(zero, VectorXd::Constant(2, 0.4));
  CHECK(g.dmean.cwiseAbs().maxCoeff() == 0.0);

  VectorXd bad = VectorXd::Zero(15);
  bad[3] = std::nan("");
  CHECK_THROWS_AS(fit(Zs, bad, basis, 0.1), Error);
  CHECK_THROWS_AS(fit(Zs, VectorXd::Zero(14), basis, 0.1), Error);
  CHECK_THROWS_AS(fit(MatrixXd(0, 2), VectorXd(0), basis, 0.1), Error);
}

TEST_CASE("SSGP agrees with the exact GP and improves with m") {
  const MatrixXd Z = random_matrix(50, 2, 11);
  const VectorXd y = smooth_target(Z);
  const oracle::ExactGP gp(Z, y, 1.0, 1.0, 0.1);
  const MatrixXd test = random_matrix(200, 2, 12);

  auto rms = [&](int m) {
    const auto model = fit(Z, y, build_basis(m, VectorXd::Ones(2), 1.0, 21), 0.1);
    double s = 0;
    for (int i = 0; i < test.rows(); ++i) {
      const double d = predict(model, test.row(i).transpose()).mean - gp.mean(test.row(i).transpose());
      s += d * d;
    }
    return std::sqrt(s / test.rows());
  };
  const double r1 = rms(1024), r2 = rms(2048), r4 = rms(4096);
  CHECK(r2 < 0.05);
  CHECK(r4 < r1);
  MESSAGE("rms vs exact GP: m=1024 " << r1 << ", 2048 " << r2 << ", 4096 " << r4);
}

TEST_CASE("predictive variance: non-negative, monotone in n") {
  const auto basis = build_basis(100, VectorXd::Ones(3), 1.0, 4);
  const MatrixXd Z = random_matrix(40, 3, 5);
  const VectorXd y = smooth_target(Z);
  const MatrixXd probes = random_matrix(30, 3, 6, 2.0);
  std::vector<double> prev(30, 1.0 + 1e-12);
  for (int n : {1, 5, 20, 40}) {
    const auto model = fit(Z.topRows(n), y.head(n), basis, 0.1);
    for (int i = 0; i < 30; ++i) {
      const double v = predict(model, probes.row(i).transpose()).variance;
      CHECK(v >= 0.0);
      CHECK(v <= prev[i] + 1e-12);
      prev[i] = v;
    }
  }
}

TEST_CASE("predict_grad matches central differences") {
  const auto basis = build_basis(150, VectorXd::Constant(4, 0.8), 1.2, 8);
  const MatrixXd Z = random_matrix(30, 4, 9);
  const auto model = fit(Z, smooth_target(Z), basis, 0.1);
  const MatrixXd probes = random_matrix(10, 4, 10);
  const double h = 1e-5;
  double worst = 0;
  for (int p = 0; p < probes.rows(); ++p) {
    const VectorXd z = probes.row(p).transpose();
    const auto g = predict_grad(model, z);
    for (int k = 0; k < 4; ++k) {
      VectorXd zp = z, zm = z;
      zp[k] += h;
      zm[k] -= h;
      const auto a = predict(model, zp), b = predict(model, zm);
      const double fm = (a.mean - b.mean) / (2 * h), fv = (a.variance - b.variance) / (2 * h);
      worst = std::max(worst, std::abs(g.dmean[k] - fm) / std::max(1.0, std::abs(fm)));
      worst = std::max(worst, std::abs(g.dvariance[k] - fv) / std::max(1.0, std::abs(fv)));
    }
  }
  CHECK(worst < 1e-5);

  // Batched evaluation agrees with the single-point path.
  const auto batch = predict_batch(model, probes, true);
  for (int p = 0; p < probes.rows(); ++p) {
    const VectorXd z = probes.row(p).transpose();
    CHECK(batch.mean[p] == doctest::Approx(predict(model, z).mean).epsilon(1e-10));
    CHECK(batch.variance[p] == doctest::Approx(predict(model, z).variance).epsilon(1e-10));
    CHECK((batch.dmean.row(p).transpose() - predict_grad(model, z).dmean).cwiseAbs().maxCoeff() < 1e-10);
  }

  // Descend the mean to a local minimum: gradient vanishes there.
  VectorXd z = VectorXd::Zero(4);
  double step = 0.05;
  for (int it = 0; it < 20000 && step > 1e-14; ++it) {
    const VectorXd g = predict_grad(model, z).dmean;
    if (g.norm() < 1e-9) break;
    const VectorXd trial = z - step * g;
    if (predict(model, trial).mean < predict(model, z).mean) {
      z = trial;
      step *= 1.2;
    } else {
      step *= 0.5;
    }
  }
  CHECK(predict_grad(model, z).dmean.norm() < 1e-6);
}

TEST_CASE("log marginal likelihood") {
  const auto basis = build_basis(40, VectorXd::Ones(2), 1.0, 13);
  for (int n : {20, 120}) {  // both sides of n = 2m
    const MatrixXd Z = random_matrix(n, 2, 14);
    const VectorXd y = smooth_target(Z);
    CHECK(log_marginal_likelihood(Z, y, basis, 0.2) == doctest::Approx(direct_lml(Z, y, basis, 0.2)).epsilon(1e-9));
    const VectorXd y0 = VectorXd::Zero(n);
    CHECK(log_marginal_likelihood(Z, y0, basis, 0.2) == doctest::Approx(direct_lml(Z, y0, basis, 0.2)).epsilon(1e-9));

    // Permuting rows leaves it unchanged.
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(n);
    perm.setIdentity();
    std::mt19937 rng(3);
    std::shuffle(perm.indices().data(), perm.indices().data() + n, rng);
    CHECK(log_marginal_likelihood(perm * Z, perm * y, basis, 0.2) ==
          doctest::Approx(log_marginal_likelihood(Z, y, basis, 0.2)).epsilon(1e-10));
  }

  // Synthetic data with known noise 0.3: evidence prefers it over 0.02.
  const auto b2 = build_basis(300, VectorXd::Ones(2), 1.0, 15);
  const MatrixXd Z = random_matrix(150, 2, 16);
  VectorXd y = smooth_target(Z);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += noise(rng);
  CHECK(log_marginal_likelihood(Z, y, b2, 0.3) > log_marginal_likelihood(Z, y, b2, 0.02));
  CHECK(log_marginal_likelihood(Z, y, b2, 0.3) > log_marginal_likelihood(Z, y, b2, 2.0));

  Hyperparameters start;
  start.sigma_n = 0.02;
  const auto h = fit_hyperparameters(Z, y, 300, 15, start, 10);
  CHECK(h.sigma_n == doctest::Approx(0.3).epsilon(0.35));
  const auto tuned = build_basis(300, VectorXd::Constant(2, h.lengthscale), h.sigma_f, 15);
  CHECK(log_marginal_likelihood(Z, y, tuned, h.sigma_n) >= log_marginal_likelihood(Z, y, b2, 0.02));
}

TEST_CASE("hyperparameter fit escapes a too-short starting lengthscale") {
  // Inputs spread over several units in 8 dimensions; at l = 0.3 every pair
  // is uncorrelated and the local search alone settles on pure noise.
  const MatrixXd Z = random_matrix(260, 8, 21, 3.0);
  auto target = [](const MatrixXd& z) {
    VectorXd y(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) y[i] = std::sin(0.25 * z(i, 0)) + 0.3 * std::cos(0.2 * z(i, 3));
    return y;
  };
  const MatrixXd train = Z.topRows(200), test = Z.bottomRows(60);
  const VectorXd y = target(train), yt = target(test);
  const auto h = fit_hyperparameters(train, y, 400, 22, Hyperparameters{0.3, 1.0, 0.1}, 10);
  CHECK(h.lengthscale > 1.5);
  const auto model = fit(train, y, build_basis(400, VectorXd::Constant(8, h.lengthscale), h.sigma_f, 22), h.sigma_n);
  const VectorXd pred = predict_batch(model, test, false).mean;
  const double mse = (pred - yt).squaredNorm() / 60.0;
  const double var = (yt.array() - yt.mean()).square().mean();
  CHECK(mse < 0.2 * var);
}

TEST_CASE("model save/load round trip and purity") {
  const auto basis = build_basis(50, VectorXd::Ones(3), 1.0, 18);
  const MatrixXd Z = random_matrix(25, 3, 19);
  const auto model = fit(Z, smooth_target(Z), basis, 0.1);
  const auto path = std::filesystem::temp_directory_path() / "dragopt_test_ssgp.ckpt";
  save_model(path, model);
  const auto back = load_model(path);
  CHECK(back.basis.frequencies == model.basis.frequencies);
  CHECK(back.weights == model.weights);
  CHECK(back.chol_lower == model.chol_lower);
  CHECK(back.sigma_n == model.sigma_n);
  CHECK(back.n_train == 25);
  const VectorXd z = VectorXd::Constant(3, 0.2);
  CHECK(predict(back, z).mean == predict(model, z).mean);
  CHECK(predict(back, z).variance == predict(model, z).variance);
  CHECK(predict_grad(model, z).dvariance == predict_grad(model, z).dvariance);
  std::filesystem::remove(path);
}
