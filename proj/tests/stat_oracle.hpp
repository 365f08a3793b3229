#pragma once

// Reference implementations used to check the surrogate and the acquisition
// function: a dense squared-exponential GP and closed-form EI via erf.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace oracle {

struct ExactGP {
  Eigen::MatrixXd Z;
  double l, sf, sn;
  Eigen::LDLT<Eigen::MatrixXd> K;
  Eigen::VectorXd alpha;

  double k(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return sf * sf * std::exp(-(a - b).squaredNorm() / (2 * l * l));
  }
  ExactGP(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, double l_, double sf_, double sn_)
      : Z(z), l(l_), sf(sf_), sn(sn_) {
    const auto n = Z.rows();
    Eigen::MatrixXd G(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) G(i, j) = k(Z.row(i), Z.row(j)) + (i == j ? sn * sn : 0.0);
    K.compute(G);
    alpha = K.solve(y);
  }
  double mean(const Eigen::VectorXd& z) const {
    double m = 0;
    for (Eigen::Index i = 0; i < Z.rows(); ++i) m += k(z, Z.row(i)) * alpha[i];
    return m;
  }
};

inline double ei_reference(double mean, double var, double f_best, double xi = 0.0) {
  const double imp = f_best - xi - mean;
  if (var <= 0) return std::max(imp, 0.0);
  const double s = std::sqrt(var);
  const double u = imp / s;
  const double cdf = 0.5 * (1.0 + std::erf(u / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
  return imp * cdf + s * pdf;
}

inline Eigen::MatrixXd random_matrix(int r, int c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = n(rng);
  return M;
}

inline Eigen::VectorXd smooth_target(const Eigen::MatrixXd& Z) {
  Eigen::VectorXd y(Z.rows());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) y[i] = std::sin(1.3 * Z(i, 0)) + 0.5 * std::cos(Z(i, Z.cols() - 1));
  return y;
}

}  // namespace oracle
