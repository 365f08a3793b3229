#pragma once

// Finite-difference checks for the latent network on reduced-size instances.

#include <algorithm>
#include <cmath>
#include <random>

#include "dragopt/latentnet.hpp"

namespace oracle {

using namespace dragopt::latentnet;

inline Architecture tiny_architecture() {
  Architecture a;
  a.height = 4;
  a.width = 4;
  a.latent_dim = 3;
  a.dense_units = 8;
  a.dn_units = 8;
  a.conv1_channels = 2;
  a.conv2_channels = 3;
  return a;
}

inline Parameters<double> random_params(const Architecture& a, std::uint64_t seed) {
  auto p = Parameters<double>::initialized(a, seed);
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int id = 0; id < kTensorCount; ++id) {
    if (p.slots[id].shape.size() != 1) continue;
    double* b = p.data(static_cast<TensorId>(id));
    for (std::size_t i = 0; i < p.slots[id].size; ++i) b[i] = u(rng);
  }
  return p;
}

inline Batch<double> random_batch(const Architecture& a, int B, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution bit(0.4);
  std::normal_distribution<double> n;
  Batch<double> batch;
  batch.images.resize(a.pixels(), B);
  for (Eigen::Index i = 0; i < batch.images.size(); ++i) batch.images.data()[i] = bit(rng) ? 1.0 : 0.0;
  batch.noise.resize(a.latent_dim, B);
  for (Eigen::Index i = 0; i < batch.noise.size(); ++i) batch.noise.data()[i] = n(rng);
  batch.labels.resize(B);
  for (Eigen::Index i = 0; i < B; ++i) batch.labels[i] = n(rng);
  return batch;
}

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-7});
}

inline double total_loss(const LossValues& l, const LossTerms& t) { return t.recon_weight * l.recon + l.kl + l.dn; }

// Largest relative error between the analytic loss gradient and central
// differences over the parameters in [lo, hi).
inline double loss_gradient_error(Parameters<double> p, const Batch<double>& batch, const LossTerms& terms,
                                  std::size_t lo, std::size_t hi, double h = 1e-5) {
  std::vector<double> grad(p.values.size(), 0.0);
  evaluate_batch(p, batch, terms, &grad);
  double worst = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    const double saved = p.values[i];
    p.values[i] = saved + h;
    const double fp = total_loss(evaluate_batch<double>(p, batch, terms, nullptr), terms);
    p.values[i] = saved - h;
    const double fm = total_loss(evaluate_batch<double>(p, batch, terms, nullptr), terms);
    p.values[i] = saved;
    worst = std::max(worst, rel_error(grad[i], (fp - fm) / (2.0 * h)));
  }
  return worst;
}

// d mu[j, b] / d theta for every encoder weight, via encoder_backward with a
// one-hot upstream gradient.
inline double mu_gradient_error(Parameters<double> p, const Matrix<double>& images, double h = 1e-4) {
  const auto range = block_range(p.arch, Block::kEncoder);
  const auto base = encoder_forward(p, images);
  double worst = 0.0;
  for (Eigen::Index b = 0; b < images.cols(); ++b) {
    for (Eigen::Index j = 0; j < base.mu.rows(); ++j) {
      Matrix<double> dmu = Matrix<double>::Zero(base.mu.rows(), base.mu.cols());
      dmu(j, b) = 1.0;
      std::vector<double> grad(p.values.size(), 0.0);
      const Matrix<double> zero = Matrix<double>::Zero(dmu.rows(), dmu.cols());
      encoder_backward(p, base, dmu, zero, grad);
      for (std::size_t i = range.first; i < range.second; ++i) {
        const double saved = p.values[i];
        p.values[i] = saved + h;
        const double fp = encoder_forward(p, images).mu(j, b);
        p.values[i] = saved - h;
        const double fm = encoder_forward(p, images).mu(j, b);
        p.values[i] = saved;
        worst = std::max(worst, rel_error(grad[i], (fp - fm) / (2.0 * h)));
      }
    }
  }
  return worst;
}

// d output[b] / d theta for every drag-network parameter.
inline double dn_gradient_error(Parameters<double> p, const Matrix<double>& z, double h = 1e-4) {
  const auto range = block_range(p.arch, Block::kDragNet);
  const auto base = dn_forward(p, z);
  double worst = 0.0;
  for (Eigen::Index b = 0; b < z.cols(); ++b) {
    Vector<double> dout = Vector<double>::Zero(z.cols());
    dout[b] = 1.0;
    std::vector<double> grad(p.values.size(), 0.0);
    dn_backward(p, base, dout, grad);
    for (std::size_t i = range.first; i < range.second; ++i) {
      const double saved = p.values[i];
      p.values[i] = saved + h;
      const double fp = dn_forward(p, z).output[b];
      p.values[i] = saved - h;
      const double fm = dn_forward(p, z).output[b];
      p.values[i] = saved;
      worst = std::max(worst, rel_error(grad[i], (fp - fm) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace oracle
