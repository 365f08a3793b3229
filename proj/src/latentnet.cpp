#include "dragopt/latentnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dragopt/checkpoint.hpp"
#include "dragopt/error.hpp"
#include "dragopt/rng.hpp"

namespace dragopt::latentnet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRow = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapRow = Eigen::Map<const RowMat<T>>;
template <typename T>
using CMapVec = Eigen::Map<const Vector<T>>;
template <typename T>
using MapVec = Eigen::Map<Vector<T>>;

constexpr double kBceClamp = 1e-7;

// Weight matrix of a tensor viewed as (shape[0] x rest).
template <typename T>
CMapRow<T> weight(const Parameters<T>& p, TensorId id) {
  const auto& s = p.slots[id];
  const auto rows = static_cast<Eigen::Index>(s.shape[0]);
  return CMapRow<T>(p.data(id), rows, static_cast<Eigen::Index>(s.size) / rows);
}

template <typename T>
MapRow<T> grad_weight(const Parameters<T>& p, std::vector<T>& g, TensorId id) {
  const auto& s = p.slots[id];
  const auto rows = static_cast<Eigen::Index>(s.shape[0]);
  return MapRow<T>(g.data() + s.offset, rows, static_cast<Eigen::Index>(s.size) / rows);
}

template <typename T>
CMapVec<T> bias(const Parameters<T>& p, TensorId id) {
  return CMapVec<T>(p.data(id), static_cast<Eigen::Index>(p.slots[id].size));
}

template <typename T>
MapVec<T> grad_bias(const Parameters<T>& p, std::vector<T>& g, TensorId id) {
  return MapVec<T>(g.data() + p.slots[id].offset, static_cast<Eigen::Index>(p.slots[id].size));
}

template <typename Derived>
void elu_inplace(Eigen::MatrixBase<Derived>& m) {
  using T = typename Derived::Scalar;
  m = m.unaryExpr([](T x) { return x > T(0) ? x : std::expm1(x); });
}

// Multiplies d by the ELU derivative, recovered from the activation output.
template <typename D1, typename D2>
void elu_backward(Eigen::MatrixBase<D1>& d, const Eigen::MatrixBase<D2>& out) {
  using T = typename D1::Scalar;
  d = d.cwiseProduct(out.unaryExpr([](T h) { return h > T(0) ? T(1) : h + T(1); }));
}

// Stride-2 patches with padding k/2; input holds C planes of H x W.
// cols row (c, ky, kx), column (oy, ox).
template <typename T>
void im2col(const T* in, int C, int H, int W, int k, RowMat<T>& cols) {
  const int Ho = H / 2, Wo = W / 2, pad = k / 2;
  cols.resize(static_cast<Eigen::Index>(C) * k * k, static_cast<Eigen::Index>(Ho) * Wo);
  for (int c = 0; c < C; ++c) {
    const T* plane = in + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = 2 * oy - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = 2 * ox - pad + kx;
            dst[ox] = (ix < 0 || ix >= W) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patches back onto C planes of H x W (overwrites out).
template <typename T>
void col2im(const RowMat<T>& cols, int C, int H, int W, int k, T* out) {
  const int Ho = H / 2, Wo = W / 2, pad = k / 2;
  std::fill(out, out + static_cast<std::size_t>(C) * H * W, T(0));
  for (int c = 0; c < C; ++c) {
    T* plane = out + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = 2 * oy - pad + ky;
          if (iy < 0 || iy >= H) continue;
          const T* src = row + static_cast<std::size_t>(oy) * Wo;
          T* dst = plane + static_cast<std::size_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = 2 * ox - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

double bce(double r, double x) {
  r = std::clamp(r, kBceClamp, 1.0 - kBceClamp);
  return -(x * std::log(r) + (1.0 - x) * std::log(1.0 - r));
}

std::int64_t i64(int v) { return static_cast<std::int64_t>(v); }

}  // namespace

void Architecture::validate() const {
  if (height < 4 || width < 4 || height % 4 != 0 || width % 4 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "image size must be a positive multiple of 4");
  }
  if (latent_dim < 1 || dense_units < 1 || dn_units < 1 || conv1_channels < 1 || conv2_channels < 1) {
    throw Error(ErrorCode::kInvalidArgument, "layer sizes must be positive");
  }
  if (kernel < 1 || kernel % 2 == 0) throw Error(ErrorCode::kInvalidArgument, "kernel must be odd");
  if (!(logvar_clamp > 0.0)) throw Error(ErrorCode::kInvalidArgument, "logvar clamp must be positive");
}

Architecture Architecture::with_doubled_units() const {
  Architecture a = *this;
  a.dense_units *= 2;
  a.dn_units *= 2;
  return a;
}

std::array<TensorSlot, kTensorCount> tensor_layout(const Architecture& a) {
  a.validate();
  const int k = a.kernel, d = a.latent_dim;
  std::array<TensorSlot, kTensorCount> s;
  s[kEncConv1W] = {"encoder.conv1.weight", {i64(a.conv1_channels), 1, i64(k), i64(k)}};
  s[kEncConv1B] = {"encoder.conv1.bias", {i64(a.conv1_channels)}};
  s[kEncConv2W] = {"encoder.conv2.weight", {i64(a.conv2_channels), i64(a.conv1_channels), i64(k), i64(k)}};
  s[kEncConv2B] = {"encoder.conv2.bias", {i64(a.conv2_channels)}};
  s[kEncFc1W] = {"encoder.fc1.weight", {i64(a.dense_units), i64(a.flat())}};
  s[kEncFc1B] = {"encoder.fc1.bias", {i64(a.dense_units)}};
  s[kEncFc2W] = {"encoder.fc2.weight", {i64(2 * d), i64(a.dense_units)}};
  s[kEncFc2B] = {"encoder.fc2.bias", {i64(2 * d)}};
  s[kDecFc1W] = {"decoder.fc1.weight", {i64(a.dense_units), i64(d)}};
  s[kDecFc1B] = {"decoder.fc1.bias", {i64(a.dense_units)}};
  s[kDecFc2W] = {"decoder.fc2.weight", {i64(a.flat()), i64(a.dense_units)}};
  s[kDecFc2B] = {"decoder.fc2.bias", {i64(a.flat())}};
  s[kDecDeconv1W] = {"decoder.deconv1.weight", {i64(a.conv2_channels), i64(a.conv1_channels), i64(k), i64(k)}};
  s[kDecDeconv1B] = {"decoder.deconv1.bias", {i64(a.conv1_channels)}};
  s[kDecDeconv2W] = {"decoder.deconv2.weight", {i64(a.conv1_channels), 1, i64(k), i64(k)}};
  s[kDecDeconv2B] = {"decoder.deconv2.bias", {1}};
  s[kDnFc1W] = {"dragnet.fc1.weight", {i64(a.dn_units), i64(d)}};
  s[kDnFc1B] = {"dragnet.fc1.bias", {i64(a.dn_units)}};
  s[kDnFc2W] = {"dragnet.fc2.weight", {i64(a.dn_units), i64(a.dn_units)}};
  s[kDnFc2B] = {"dragnet.fc2.bias", {i64(a.dn_units)}};
  s[kDnFc3W] = {"dragnet.fc3.weight", {1, i64(a.dn_units)}};
  s[kDnFc3B] = {"dragnet.fc3.bias", {1}};
  std::size_t offset = 0;
  for (auto& slot : s) {
    slot.size = 1;
    for (auto v : slot.shape) slot.size *= static_cast<std::size_t>(v);
    slot.offset = offset;
    offset += slot.size;
  }
  return s;
}

std::pair<std::size_t, std::size_t> block_range(const Architecture& arch, Block block) {
  const auto s = tensor_layout(arch);
  auto end_of = [&](TensorId id) { return s[id].offset + s[id].size; };
  switch (block) {
    case Block::kEncoder: return {s[kEncConv1W].offset, end_of(kEncFc2B)};
    case Block::kDecoder: return {s[kDecFc1W].offset, end_of(kDecDeconv2B)};
    case Block::kDragNet: return {s[kDnFc1W].offset, end_of(kDnFc3B)};
  }
  return {0, 0};
}

template <typename T>
Parameters<T> Parameters<T>::zeros(const Architecture& arch) {
  Parameters p;
  p.arch = arch;
  p.slots = tensor_layout(arch);
  const auto& last = p.slots[kTensorCount - 1];
  p.values.assign(last.offset + last.size, T(0));
  return p;
}

template <typename T>
Parameters<T> Parameters<T>::initialized(const Architecture& arch, std::uint64_t seed) {
  Parameters p = zeros(arch);
  Rng rng(seed);
  for (int id = 0; id < kTensorCount; ++id) {
    const auto& s = p.slots[id];
    if (s.shape.size() < 2) continue;  // biases stay zero
    const double receptive = s.shape.size() == 4 ? static_cast<double>(s.shape[2] * s.shape[3]) : 1.0;
    const double fan_out = static_cast<double>(s.shape[0]) * receptive;
    const double fan_in = static_cast<double>(s.shape[1]) * receptive;
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    T* w = p.data(static_cast<TensorId>(id));
    for (std::size_t i = 0; i < s.size; ++i) w[i] = static_cast<T>(limit * dist(rng));
  }
  return p;
}

template <typename T>
EncoderCache<T> encoder_forward(const Parameters<T>& p, const Matrix<T>& images) {
  const Architecture& a = p.arch;
  if (images.rows() != a.pixels()) throw Error(ErrorCode::kInvalidArgument, "image size does not match network");
  const Eigen::Index B = images.cols();
  const int k = a.kernel, d = a.latent_dim;
  EncoderCache<T> c;
  c.input = images;
  c.conv1.resize(static_cast<Eigen::Index>(a.conv1_channels) * a.h1() * a.w1(), B);
  c.conv2.resize(a.flat(), B);
  const auto W1 = weight(p, kEncConv1W);
  const auto b1 = bias(p, kEncConv1B);
  const auto W2 = weight(p, kEncConv2W);
  const auto b2 = bias(p, kEncConv2B);
  RowMat<T> cols;
  for (Eigen::Index b = 0; b < B; ++b) {
    im2col(images.col(b).data(), 1, a.height, a.width, k, cols);
    MapRow<T> h1(c.conv1.col(b).data(), a.conv1_channels, a.h1() * a.w1());
    h1.noalias() = W1 * cols;
    h1.colwise() += b1;
    elu_inplace(h1);
    im2col(c.conv1.col(b).data(), a.conv1_channels, a.h1(), a.w1(), k, cols);
    MapRow<T> h2(c.conv2.col(b).data(), a.conv2_channels, a.h2() * a.w2());
    h2.noalias() = W2 * cols;
    h2.colwise() += b2;
    elu_inplace(h2);
  }
  c.fc1.noalias() = weight(p, kEncFc1W) * c.conv2;
  c.fc1.colwise() += bias(p, kEncFc1B);
  elu_inplace(c.fc1);
  Matrix<T> out = weight(p, kEncFc2W) * c.fc1;
  out.colwise() += bias(p, kEncFc2B);
  c.mu = out.topRows(d);
  c.raw_logvar = out.bottomRows(d);
  const T lim = static_cast<T>(a.logvar_clamp);
  c.logvar = c.raw_logvar.cwiseMax(-lim).cwiseMin(lim);
  return c;
}

template <typename T>
void encoder_backward(const Parameters<T>& p, const EncoderCache<T>& c, const Matrix<T>& dmu, const Matrix<T>& dlogvar,
                      std::vector<T>& g) {
  const Architecture& a = p.arch;
  const int k = a.kernel, d = a.latent_dim;
  const Eigen::Index B = c.input.cols();
  const T lim = static_cast<T>(a.logvar_clamp);
  Matrix<T> dout(2 * d, B);
  dout.topRows(d) = dmu;
  dout.bottomRows(d) = c.raw_logvar.binaryExpr(dlogvar, [lim](T raw, T dv) { return (raw > -lim && raw < lim) ? dv : T(0); });

  grad_weight(p, g, kEncFc2W).noalias() += dout * c.fc1.transpose();
  grad_bias(p, g, kEncFc2B) += dout.rowwise().sum();
  Matrix<T> dfc1 = weight(p, kEncFc2W).transpose() * dout;
  elu_backward(dfc1, c.fc1);

  grad_weight(p, g, kEncFc1W).noalias() += dfc1 * c.conv2.transpose();
  grad_bias(p, g, kEncFc1B) += dfc1.rowwise().sum();
  Matrix<T> dconv2 = weight(p, kEncFc1W).transpose() * dfc1;
  elu_backward(dconv2, c.conv2);

  const auto W2 = weight(p, kEncConv2W);
  auto gW1 = grad_weight(p, g, kEncConv1W);
  auto gb1 = grad_bias(p, g, kEncConv1B);
  auto gW2 = grad_weight(p, g, kEncConv2W);
  auto gb2 = grad_bias(p, g, kEncConv2B);
  RowMat<T> cols, dcols;
  RowMat<T> dh1(a.conv1_channels, a.h1() * a.w1());
  for (Eigen::Index b = 0; b < B; ++b) {
    CMapRow<T> dz2(dconv2.col(b).data(), a.conv2_channels, a.h2() * a.w2());
    im2col(c.conv1.col(b).data(), a.conv1_channels, a.h1(), a.w1(), k, cols);
    gW2.noalias() += dz2 * cols.transpose();
    gb2 += dz2.rowwise().sum();
    dcols.noalias() = W2.transpose() * dz2;
    col2im(dcols, a.conv1_channels, a.h1(), a.w1(), k, dh1.data());
    CMapRow<T> h1(c.conv1.col(b).data(), a.conv1_channels, a.h1() * a.w1());
    elu_backward(dh1, h1);
    im2col(c.input.col(b).data(), 1, a.height, a.width, k, cols);
    gW1.noalias() += dh1 * cols.transpose();
    gb1 += dh1.rowwise().sum();
  }
}

template <typename T>
DecoderCache<T> decoder_forward(const Parameters<T>& p, const Matrix<T>& z) {
  const Architecture& a = p.arch;
  if (z.rows() != a.latent_dim) throw Error(ErrorCode::kInvalidArgument, "latent dimension mismatch");
  const Eigen::Index B = z.cols();
  const int k = a.kernel;
  DecoderCache<T> c;
  c.z = z;
  c.fc1.noalias() = weight(p, kDecFc1W) * z;
  c.fc1.colwise() += bias(p, kDecFc1B);
  elu_inplace(c.fc1);
  c.fc2.noalias() = weight(p, kDecFc2W) * c.fc1;
  c.fc2.colwise() += bias(p, kDecFc2B);
  elu_inplace(c.fc2);

  c.deconv1.resize(static_cast<Eigen::Index>(a.conv1_channels) * a.h1() * a.w1(), B);
  c.logits.resize(a.pixels(), B);
  const auto W7 = weight(p, kDecDeconv1W);
  const auto b7 = bias(p, kDecDeconv1B);
  const auto W8 = weight(p, kDecDeconv2W);
  const T b8 = p.data(kDecDeconv2B)[0];
  RowMat<T> cols;
  for (Eigen::Index b = 0; b < B; ++b) {
    CMapRow<T> x(c.fc2.col(b).data(), a.conv2_channels, a.h2() * a.w2());
    cols.noalias() = W7.transpose() * x;
    col2im(cols, a.conv1_channels, a.h1(), a.w1(), k, c.deconv1.col(b).data());
    MapRow<T> h(c.deconv1.col(b).data(), a.conv1_channels, a.h1() * a.w1());
    h.colwise() += b7;
    elu_inplace(h);
    cols.noalias() = W8.transpose() * h;
    col2im(cols, 1, a.height, a.width, k, c.logits.col(b).data());
  }
  c.logits.array() += b8;
  c.recon = c.logits.unaryExpr([](T x) { return sigmoid(x); });
  return c;
}

template <typename T>
Matrix<T> decoder_backward(const Parameters<T>& p, const DecoderCache<T>& c, const Matrix<T>& dlogits,
                           std::vector<T>& g) {
  const Architecture& a = p.arch;
  const int k = a.kernel;
  const Eigen::Index B = c.z.cols();
  grad_bias(p, g, kDecDeconv2B)[0] += dlogits.sum();
  const auto W7 = weight(p, kDecDeconv1W);
  const auto W8 = weight(p, kDecDeconv2W);
  auto gW7 = grad_weight(p, g, kDecDeconv1W);
  auto gb7 = grad_bias(p, g, kDecDeconv1B);
  auto gW8 = grad_weight(p, g, kDecDeconv2W);
  Matrix<T> dfc2(a.flat(), B);
  RowMat<T> cols, dh;
  for (Eigen::Index b = 0; b < B; ++b) {
    im2col(dlogits.col(b).data(), 1, a.height, a.width, k, cols);
    CMapRow<T> h(c.deconv1.col(b).data(), a.conv1_channels, a.h1() * a.w1());
    gW8.noalias() += h * cols.transpose();
    dh.noalias() = W8 * cols;
    elu_backward(dh, h);
    gb7 += dh.rowwise().sum();
    im2col(dh.data(), a.conv1_channels, a.h1(), a.w1(), k, cols);
    CMapRow<T> x(c.fc2.col(b).data(), a.conv2_channels, a.h2() * a.w2());
    gW7.noalias() += x * cols.transpose();
    MapRow<T> dx(dfc2.col(b).data(), a.conv2_channels, a.h2() * a.w2());
    dx.noalias() = W7 * cols;
  }
  elu_backward(dfc2, c.fc2);
  grad_weight(p, g, kDecFc2W).noalias() += dfc2 * c.fc1.transpose();
  grad_bias(p, g, kDecFc2B) += dfc2.rowwise().sum();
  Matrix<T> dfc1 = weight(p, kDecFc2W).transpose() * dfc2;
  elu_backward(dfc1, c.fc1);
  grad_weight(p, g, kDecFc1W).noalias() += dfc1 * c.z.transpose();
  grad_bias(p, g, kDecFc1B) += dfc1.rowwise().sum();
  return weight(p, kDecFc1W).transpose() * dfc1;
}

template <typename T>
DragCache<T> dn_forward(const Parameters<T>& p, const Matrix<T>& z) {
  if (z.rows() != p.arch.latent_dim) throw Error(ErrorCode::kInvalidArgument, "latent dimension mismatch");
  DragCache<T> c;
  c.z = z;
  c.h1.noalias() = weight(p, kDnFc1W) * z;
  c.h1.colwise() += bias(p, kDnFc1B);
  c.h1 = c.h1.array().tanh().matrix();
  c.h2.noalias() = weight(p, kDnFc2W) * c.h1;
  c.h2.colwise() += bias(p, kDnFc2B);
  c.h2 = c.h2.array().tanh().matrix();
  c.output = (weight(p, kDnFc3W) * c.h2).transpose();
  c.output.array() += p.data(kDnFc3B)[0];
  return c;
}

template <typename T>
Matrix<T> dn_backward(const Parameters<T>& p, const DragCache<T>& c, const Vector<T>& dout, std::vector<T>& g) {
  grad_weight(p, g, kDnFc3W).noalias() += dout.transpose() * c.h2.transpose();
  grad_bias(p, g, kDnFc3B)[0] += dout.sum();
  Matrix<T> dh2 = weight(p, kDnFc3W).transpose() * dout.transpose();
  dh2.array() *= T(1) - c.h2.array().square();
  grad_weight(p, g, kDnFc2W).noalias() += dh2 * c.h1.transpose();
  grad_bias(p, g, kDnFc2B) += dh2.rowwise().sum();
  Matrix<T> dh1 = weight(p, kDnFc2W).transpose() * dh2;
  dh1.array() *= T(1) - c.h1.array().square();
  grad_weight(p, g, kDnFc1W).noalias() += dh1 * c.z.transpose();
  grad_bias(p, g, kDnFc1B) += dh1.rowwise().sum();
  return weight(p, kDnFc1W).transpose() * dh1;
}

template <typename T>
LossValues evaluate_batch(const Parameters<T>& p, const Batch<T>& batch, const LossTerms& terms, std::vector<T>* grad) {
  const Architecture& a = p.arch;
  const Eigen::Index B = batch.images.cols();
  if (B < 1) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  if (batch.noise.rows() != a.latent_dim || batch.noise.cols() != B) {
    throw Error(ErrorCode::kInvalidArgument, "noise shape mismatch");
  }
  if (terms.drag && batch.labels.size() != B) throw Error(ErrorCode::kInvalidArgument, "label count mismatch");
  if (grad && grad->size() != p.values.size()) throw Error(ErrorCode::kInvalidArgument, "gradient size mismatch");

  const EncoderCache<T> enc = encoder_forward(p, batch.images);
  const Matrix<T> scale = (T(0.5) * enc.logvar.array()).exp().matrix();
  const Matrix<T> z = enc.mu + scale.cwiseProduct(batch.noise);
  const double inv_b = 1.0 / static_cast<double>(B);

  LossValues loss;
  Matrix<T> dz = Matrix<T>::Zero(a.latent_dim, B);
  Matrix<T> dmu = Matrix<T>::Zero(a.latent_dim, B);
  Matrix<T> dlv = Matrix<T>::Zero(a.latent_dim, B);

  if (terms.reconstruction) {
    const DecoderCache<T> dec = decoder_forward(p, z);
    const double inv_n = inv_b / static_cast<double>(a.pixels());
    double total = 0.0;
    const double scale_n = inv_n * terms.recon_weight;
    Matrix<T> dlogits(dec.recon.rows(), B);
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index i = 0; i < dec.recon.rows(); ++i) {
        const double r = static_cast<double>(dec.recon(i, b));
        const double x = static_cast<double>(batch.images(i, b));
        total += bce(r, x);
        const bool clamped = r < kBceClamp || r > 1.0 - kBceClamp;
        dlogits(i, b) = clamped ? T(0) : static_cast<T>((r - x) * scale_n);
      }
    }
    loss.recon = total * inv_n;
    if (grad) dz += decoder_backward(p, dec, dlogits, *grad);
  }
  if (terms.kl) {
    double total = 0.0;
    for (Eigen::Index b = 0; b < B; ++b) {
      for (int j = 0; j < a.latent_dim; ++j) {
        const double m = enc.mu(j, b), lv = enc.logvar(j, b);
        total += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
      }
    }
    loss.kl = total * inv_b;
    dmu += enc.mu * static_cast<T>(inv_b);
    dlv += ((enc.logvar.array().exp() - T(1)) * static_cast<T>(0.5 * inv_b)).matrix();
  }
  if (terms.drag) {
    const DragCache<T> dn = dn_forward(p, z);
    const Vector<T> err = dn.output - batch.labels;
    loss.dn = static_cast<double>(err.squaredNorm()) * inv_b;
    if (grad) dz += dn_backward(p, dn, Vector<T>(err * static_cast<T>(2.0 * inv_b)), *grad);
  }
  if (grad) {
    dmu += dz;
    dlv += (dz.cwiseProduct(batch.noise).cwiseProduct(scale) * T(0.5));
    encoder_backward(p, enc, dmu, dlv, *grad);
  }
  return loss;
}

// ---------------------------------------------------------------------------

namespace {

Matrix<float> image_column(const std::vector<float>& pixels, int w, int h, const Architecture& a) {
  if (w != a.width || h != a.height) throw Error(ErrorCode::kInvalidArgument, "image size does not match network");
  Matrix<float> x(a.pixels(), 1);
  std::copy(pixels.begin(), pixels.end(), x.data());
  return x;
}

Matrix<float> images_matrix(const std::vector<shapegen::BinaryImage>& images, const Architecture& a,
                            std::size_t lo, std::size_t hi) {
  Matrix<float> X(a.pixels(), static_cast<Eigen::Index>(hi - lo));
  for (std::size_t i = lo; i < hi; ++i) {
    const auto& img = images[i];
    if (img.width != a.width || img.height != a.height) {
      throw Error(ErrorCode::kInvalidArgument, "image size does not match network");
    }
    float* col = X.col(static_cast<Eigen::Index>(i - lo)).data();
    for (std::size_t p = 0; p < img.pixels.size(); ++p) col[p] = img.pixels[p] ? 1.0f : 0.0f;
  }
  return X;
}

Matrix<float> latent_column(const Eigen::VectorXd& z, const Architecture& a) {
  if (z.size() != a.latent_dim) throw Error(ErrorCode::kInvalidArgument, "latent dimension mismatch");
  return z.cast<float>();
}

}  // namespace

EncoderOutput encode(const shapegen::GrayImage& image, const NetworkParams& params) {
  const auto enc = encoder_forward(params, image_column(image.pixels, image.width, image.height, params.arch));
  return {enc.mu.col(0).cast<double>(), enc.logvar.col(0).cast<double>()};
}

EncoderOutput encode(const shapegen::BinaryImage& image, const NetworkParams& params) {
  return encode(shapegen::GrayImage::from_binary(image), params);
}

Eigen::VectorXd reparameterize(const EncoderOutput& enc, const Eigen::VectorXd& noise) {
  if (noise.size() != enc.mu.size()) throw Error(ErrorCode::kInvalidArgument, "noise dimension mismatch");
  return enc.mu + (0.5 * enc.logvar.array()).exp().matrix().cwiseProduct(noise);
}

shapegen::GrayImage decode(const Eigen::VectorXd& z, const NetworkParams& params) {
  const auto dec = decoder_forward(params, latent_column(z, params.arch));
  shapegen::GrayImage out;
  out.width = params.arch.width;
  out.height = params.arch.height;
  out.pixels.assign(dec.recon.data(), dec.recon.data() + dec.recon.size());
  return out;
}

double dn_predict(const Eigen::VectorXd& z, const NetworkParams& params) {
  return static_cast<double>(dn_forward(params, latent_column(z, params.arch)).output[0]);
}

void encode_all(const std::vector<shapegen::BinaryImage>& images, const NetworkParams& params, Eigen::MatrixXd& mu,
                Eigen::MatrixXd& logvar) {
  const int d = params.arch.latent_dim;
  mu.resize(static_cast<Eigen::Index>(images.size()), d);
  logvar.resize(static_cast<Eigen::Index>(images.size()), d);
  constexpr std::size_t kChunk = 64;
  for (std::size_t lo = 0; lo < images.size(); lo += kChunk) {
    const std::size_t hi = std::min(images.size(), lo + kChunk);
    const auto enc = encoder_forward(params, images_matrix(images, params.arch, lo, hi));
    const auto rows = static_cast<Eigen::Index>(hi - lo);
    mu.middleRows(static_cast<Eigen::Index>(lo), rows) = enc.mu.transpose().cast<double>();
    logvar.middleRows(static_cast<Eigen::Index>(lo), rows) = enc.logvar.transpose().cast<double>();
  }
}

VaeLoss vae_loss(const std::vector<shapegen::GrayImage>& images, const std::vector<shapegen::GrayImage>& recon,
                 const std::vector<EncoderOutput>& enc) {
  if (images.empty() || images.size() != recon.size() || images.size() != enc.size()) {
    throw Error(ErrorCode::kInvalidArgument, "vae_loss needs matching, non-empty inputs");
  }
  VaeLoss out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& x = images[i].pixels;
    const auto& r = recon[i].pixels;
    if (x.size() != r.size() || x.empty()) throw Error(ErrorCode::kInvalidArgument, "image size mismatch");
    double s = 0.0;
    for (std::size_t p = 0; p < x.size(); ++p) s += bce(r[p], x[p]);
    out.recon += s / static_cast<double>(x.size());
    const auto& m = enc[i].mu;
    const auto& lv = enc[i].logvar;
    out.kl += 0.5 * (m.squaredNorm() + (lv.array().exp() - 1.0 - lv.array()).sum());
  }
  out.recon /= static_cast<double>(images.size());
  out.kl /= static_cast<double>(images.size());
  return out;
}

double joint_loss(double loss_recon, double loss_kl, double loss_dn) { return loss_recon + loss_kl + loss_dn; }

const char* to_string(Mode mode) { return mode == Mode::kJoint ? "joint" : "separate"; }

Mode parse_mode(const std::string& text) {
  if (text == "joint") return Mode::kJoint;
  if (text == "separate") return Mode::kSeparate;
  throw Error(ErrorCode::kInvalidArgument, "unknown training mode: " + text);
}

TrainConfig TrainConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  auto num = [&](const char* key, auto& field) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    std::size_t used = 0;
    try {
      using F = std::decay_t<decltype(field)>;
      if constexpr (std::is_floating_point_v<F>) {
        field = std::stod(it->second, &used);
      } else {
        field = static_cast<F>(std::stoull(it->second, &used));
      }
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != it->second.size()) {
      throw Error(ErrorCode::kInvalidArgument, std::string("bad value for ") + key + ": " + it->second);
    }
  };
  num("latent_dim", c.arch.latent_dim);
  num("dense_units", c.arch.dense_units);
  num("dn_units", c.arch.dn_units);
  num("batch_size", c.batch_size);
  num("learning_rate", c.learning_rate);
  num("epochs", c.epochs);
  num("seed", c.seed);
  num("kl_clamp", c.arch.logvar_clamp);
  if (kv.count("recon_weight")) {
    double w = 0.0;
    num("recon_weight", w);
    if (!(w > 0.0)) throw Error(ErrorCode::kInvalidArgument, "recon_weight must be positive");
    c.recon_weight = w;
  }
  if (auto it = kv.find("mode"); it != kv.end()) c.mode = parse_mode(it->second);
  c.arch.validate();
  if (c.batch_size < 1 || c.epochs < 1 || !(c.learning_rate > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "batch_size, epochs and learning_rate must be positive");
  }
  return c;
}

namespace {

struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  long t = 0;

  Adam(std::size_t n, double lr_) : lr(lr_), m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<float>& x, const std::vector<float>& g, std::size_t lo, std::size_t hi) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = lo; i < hi; ++i) {
      const double gi = g[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      x[i] -= static_cast<float>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps));
    }
  }
};

void check_finite(double value, const char* what, int epoch) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::kNonFinite, std::string("non-finite ") + what + " loss at epoch " + std::to_string(epoch));
  }
}

Matrix<float> normal_noise(Rng& rng, int d, Eigen::Index b) {
  std::normal_distribution<double> normal;
  Matrix<float> n(d, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    for (int i = 0; i < d; ++i) n(i, j) = static_cast<float>(normal(rng));
  }
  return n;
}

}  // namespace

TrainResult train(const TrainingData& data, const TrainConfig& cfg, ProgressFn progress) {
  const Architecture& a = cfg.arch;
  a.validate();
  if (data.images.empty()) throw Error(ErrorCode::kInvalidArgument, "no training images");
  if (data.labels.size() != data.images.size()) throw Error(ErrorCode::kInvalidArgument, "label count mismatch");
  if (cfg.batch_size < 1 || cfg.epochs < 1) throw Error(ErrorCode::kInvalidArgument, "bad batch size or epochs");
  if (data.images.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw Error(ErrorCode::kInvalidArgument, "dataset smaller than one batch");
  }

  const std::size_t n = data.images.size();
  const Matrix<float> X = images_matrix(data.images, a, 0, n);
  Vector<float> Y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) Y[static_cast<Eigen::Index>(i)] = static_cast<float>(data.labels[i]);

  TrainResult result;
  result.metrics.mode = cfg.mode;
  result.params = NetworkParams::initialized(a, derive_seed(cfg.seed, 1));
  NetworkParams& p = result.params;
  Rng rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<float> grad(p.values.size());
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  auto gather = [&](std::size_t lo, std::size_t hi, Batch<float>& batch) {
    const auto b = static_cast<Eigen::Index>(hi - lo);
    batch.images.resize(a.pixels(), b);
    batch.labels.resize(b);
    for (std::size_t k = lo; k < hi; ++k) {
      const auto col = static_cast<Eigen::Index>(k - lo);
      batch.images.col(col) = X.col(static_cast<Eigen::Index>(order[k]));
      batch.labels[col] = Y[static_cast<Eigen::Index>(order[k])];
    }
    batch.noise = normal_noise(rng, a.latent_dim, b);
  };

  const double recon_weight = cfg.effective_recon_weight();
  auto run_vae_stage = [&](LossTerms terms, int stage, std::pair<std::size_t, std::size_t> range) {
    terms.recon_weight = recon_weight;
    Adam adam(p.values.size(), cfg.learning_rate);
    Batch<float> batch;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double recon = 0.0, kl = 0.0, dn = 0.0;
      for (std::size_t lo = 0; lo < n; lo += bs) {
        const std::size_t hi = std::min(n, lo + bs);
        gather(lo, hi, batch);
        std::fill(grad.begin(), grad.end(), 0.0f);
        const LossValues l = evaluate_batch(p, batch, terms, &grad);
        check_finite(l.recon + l.kl + l.dn, "training", epoch);
        adam.step(p.values, grad, range.first, range.second);
        const double w = static_cast<double>(hi - lo);
        recon += l.recon * w;
        kl += l.kl * w;
        dn += l.dn * w;
      }
      EpochMetrics m;
      m.epoch = epoch;
      m.stage = stage;
      m.loss_recon = recon / static_cast<double>(n);
      m.loss_kl = kl / static_cast<double>(n);
      m.loss_vae = m.loss_recon + m.loss_kl;
      m.loss_dn = dn / static_cast<double>(n);
      m.loss_joint = joint_loss(m.loss_recon, m.loss_kl, m.loss_dn);
      m.objective = recon_weight * m.loss_recon + m.loss_kl + m.loss_dn;
      result.metrics.epochs.push_back(m);
      if (progress) progress(m);
    }
  };

  const auto enc_range = block_range(a, Block::kEncoder);
  const auto dec_range = block_range(a, Block::kDecoder);
  const auto dn_range = block_range(a, Block::kDragNet);

  if (cfg.mode == Mode::kJoint) {
    run_vae_stage(LossTerms{true, true, true}, 1, {enc_range.first, dn_range.second});
    return result;
  }

  run_vae_stage(LossTerms{true, true, false}, 1, {enc_range.first, dec_range.second});
  result.stage1_params = p;

  // Stage 2: frozen encoder, its outputs computed once.
  Eigen::MatrixXd mu_all, lv_all;
  encode_all(data.images, p, mu_all, lv_all);
  const Matrix<float> MU = mu_all.transpose().cast<float>();
  const Matrix<float> SCALE = (0.5 * lv_all.transpose().array()).exp().matrix().cast<float>();
  Adam adam(p.values.size(), cfg.learning_rate);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double dn = 0.0;
    for (std::size_t lo = 0; lo < n; lo += bs) {
      const std::size_t hi = std::min(n, lo + bs);
      const auto b = static_cast<Eigen::Index>(hi - lo);
      const Matrix<float> noise = normal_noise(rng, a.latent_dim, b);
      Matrix<float> z(a.latent_dim, b);
      Vector<float> y(b);
      for (std::size_t k = lo; k < hi; ++k) {
        const auto col = static_cast<Eigen::Index>(k - lo);
        const auto src = static_cast<Eigen::Index>(order[k]);
        z.col(col) = MU.col(src) + SCALE.col(src).cwiseProduct(noise.col(col));
        y[col] = Y[src];
      }
      std::fill(grad.begin(), grad.end(), 0.0f);
      const DragCache<float> c = dn_forward(p, z);
      const Vector<float> err = c.output - y;
      const double loss = static_cast<double>(err.squaredNorm()) / static_cast<double>(b);
      check_finite(loss, "drag", epoch);
      dn_backward(p, c, Vector<float>(err * (2.0f / static_cast<float>(b))), grad);
      adam.step(p.values, grad, dn_range.first, dn_range.second);
      dn += loss * static_cast<double>(b);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.stage = 2;
    m.loss_dn = dn / static_cast<double>(n);
    m.loss_joint = m.loss_dn;
    m.objective = m.loss_dn;
    result.metrics.epochs.push_back(m);
    if (progress) progress(m);
  }
  return result;
}

void write_metrics(const std::filesystem::path& path, const TrainingMetrics& metrics) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "# mode=" << to_string(metrics.mode) << '\n';
  out << "epoch\tstage\tloss_recon\tloss_kl\tloss_vae\tloss_dn\tloss_joint\tobjective\n";
  char buf[256];
  for (const auto& m : metrics.epochs) {
    std::snprintf(buf, sizeof buf, "%d\t%d\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n", m.epoch, m.stage, m.loss_recon,
                  m.loss_kl, m.loss_vae, m.loss_dn, m.loss_joint, m.objective);
    out << buf;
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const NetworkParams& params,
                     const std::map<std::string, std::string>& extra_attributes) {
  checkpoint::Container c;
  c.attributes = extra_attributes;
  const Architecture& a = params.arch;
  c.attributes["kind"] = "latentnet";
  c.attributes["height"] = std::to_string(a.height);
  c.attributes["width"] = std::to_string(a.width);
  c.attributes["latent_dim"] = std::to_string(a.latent_dim);
  c.attributes["dense_units"] = std::to_string(a.dense_units);
  c.attributes["dn_units"] = std::to_string(a.dn_units);
  c.attributes["conv1_channels"] = std::to_string(a.conv1_channels);
  c.attributes["conv2_channels"] = std::to_string(a.conv2_channels);
  c.attributes["kernel"] = std::to_string(a.kernel);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", a.logvar_clamp);
  c.attributes["logvar_clamp"] = buf;
  for (const auto& s : params.slots) {
    const float* src = params.values.data() + s.offset;
    c.add_f32(s.name, s.shape, std::vector<float>(src, src + s.size));
  }
  checkpoint::write(path, c);
}

NetworkParams load_checkpoint(const std::filesystem::path& path, std::map<std::string, std::string>* attributes) {
  const checkpoint::Container c = checkpoint::read(path);
  auto attr = [&](const char* key) -> const std::string& {
    auto it = c.attributes.find(key);
    if (it == c.attributes.end()) throw Error(ErrorCode::kFormat, std::string("checkpoint lacks attribute ") + key);
    return it->second;
  };
  if (attr("kind") != "latentnet") throw Error(ErrorCode::kFormat, "not a latentnet checkpoint");
  Architecture a;
  try {
    a.height = std::stoi(attr("height"));
    a.width = std::stoi(attr("width"));
    a.latent_dim = std::stoi(attr("latent_dim"));
    a.dense_units = std::stoi(attr("dense_units"));
    a.dn_units = std::stoi(attr("dn_units"));
    a.conv1_channels = std::stoi(attr("conv1_channels"));
    a.conv2_channels = std::stoi(attr("conv2_channels"));
    a.kernel = std::stoi(attr("kernel"));
    a.logvar_clamp = std::stod(attr("logvar_clamp"));
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::kFormat, "bad architecture attribute in " + path.string());
  }
  NetworkParams p = NetworkParams::zeros(a);
  for (const auto& s : p.slots) {
    const checkpoint::Tensor& t = c.get(s.name);
    if (t.dtype != checkpoint::DType::kF32 || t.shape != s.shape) {
      throw Error(ErrorCode::kFormat, "tensor " + s.name + " has unexpected type or shape");
    }
    std::copy(t.f32.begin(), t.f32.end(), p.values.begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
  if (attributes) *attributes = c.attributes;
  return p;
}

#define DRAGOPT_INSTANTIATE(T)                                                                                      \
  template struct Parameters<T>;                                                                                    \
  template EncoderCache<T> encoder_forward<T>(const Parameters<T>&, const Matrix<T>&);                              \
  template void encoder_backward<T>(const Parameters<T>&, const EncoderCache<T>&, const Matrix<T>&, const Matrix<T>&, \
                                    std::vector<T>&);                                                               \
  template DecoderCache<T> decoder_forward<T>(const Parameters<T>&, const Matrix<T>&);                              \
  template Matrix<T> decoder_backward<T>(const Parameters<T>&, const DecoderCache<T>&, const Matrix<T>&,            \
                                         std::vector<T>&);                                                          \
  template DragCache<T> dn_forward<T>(const Parameters<T>&, const Matrix<T>&);                                      \
  template Matrix<T> dn_backward<T>(const Parameters<T>&, const DragCache<T>&, const Vector<T>&, std::vector<T>&);  \
  template LossValues evaluate_batch<T>(const Parameters<T>&, const Batch<T>&, const LossTerms&, std::vector<T>*);

DRAGOPT_INSTANTIATE(float)
DRAGOPT_INSTANTIATE(double)

#undef DRAGOPT_INSTANTIATE

}  // namespace dragopt::latentnet
