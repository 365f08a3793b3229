#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dragopt/shapegen.hpp"

namespace dragopt::latentnet {

// Encoder: conv(5x5, s2) -> conv(5x5, s2) -> dense -> dense(2d) = mu || logvar.
// Decoder: dense -> dense -> deconv(5x5, s2) -> deconv(5x5, s2) -> sigmoid.
// Drag network: d -> dn_units -> dn_units -> 1 with tanh.
struct Architecture {
  int height = shapegen::BinaryImage::kHeight;
  int width = shapegen::BinaryImage::kWidth;
  int latent_dim = 20;
  int dense_units = 256;
  int dn_units = 64;
  int conv1_channels = 16;
  int conv2_channels = 32;
  int kernel = 5;
  double logvar_clamp = 10.0;

  int pixels() const { return height * width; }
  int h1() const { return height / 2; }
  int w1() const { return width / 2; }
  int h2() const { return height / 4; }
  int w2() const { return width / 4; }
  int flat() const { return conv2_channels * h2() * w2(); }
  void validate() const;
  // Doubles every dense hidden width (VAE and drag network).
  Architecture with_doubled_units() const;
};

enum TensorId : int {
  kEncConv1W, kEncConv1B, kEncConv2W, kEncConv2B, kEncFc1W, kEncFc1B, kEncFc2W, kEncFc2B,
  kDecFc1W, kDecFc1B, kDecFc2W, kDecFc2B, kDecDeconv1W, kDecDeconv1B, kDecDeconv2W, kDecDeconv2B,
  kDnFc1W, kDnFc1B, kDnFc2W, kDnFc2B, kDnFc3W, kDnFc3B,
  kTensorCount
};

struct TensorSlot {
  std::string name;
  std::vector<std::int64_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Tensors are stored contiguously in TensorId order, so the encoder, decoder
// and drag network each occupy one contiguous range.
std::array<TensorSlot, kTensorCount> tensor_layout(const Architecture& arch);

enum class Block { kEncoder, kDecoder, kDragNet };
std::pair<std::size_t, std::size_t> block_range(const Architecture& arch, Block block);

template <typename T>
struct Parameters {
  Architecture arch;
  std::array<TensorSlot, kTensorCount> slots;
  std::vector<T> values;

  T* data(TensorId id) { return values.data() + slots[id].offset; }
  const T* data(TensorId id) const { return values.data() + slots[id].offset; }

  static Parameters zeros(const Architecture& arch);
  // Glorot-uniform weights, zero biases.
  static Parameters initialized(const Architecture& arch, std::uint64_t seed);

  template <typename U>
  Parameters<U> cast() const {
    Parameters<U> out;
    out.arch = arch;
    out.slots = slots;
    out.values.assign(values.begin(), values.end());
    return out;
  }
};

using NetworkParams = Parameters<float>;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Batched forward caches; column b belongs to sample b.
template <typename T>
struct EncoderCache {
  Matrix<T> input;     // pixels x B
  Matrix<T> conv1;     // (c1*h1*w1) x B, post-activation
  Matrix<T> conv2;     // flat x B, post-activation
  Matrix<T> fc1;       // dense x B, post-activation
  Matrix<T> raw_logvar;
  Matrix<T> mu;        // d x B
  Matrix<T> logvar;    // d x B, clamped
};

template <typename T>
struct DecoderCache {
  Matrix<T> z;
  Matrix<T> fc1;
  Matrix<T> fc2;       // flat x B
  Matrix<T> deconv1;   // (c1*h1*w1) x B
  Matrix<T> logits;    // pixels x B
  Matrix<T> recon;     // sigmoid(logits)
};

template <typename T>
struct DragCache {
  Matrix<T> z;
  Matrix<T> h1;
  Matrix<T> h2;
  Vector<T> output;
};

template <typename T>
EncoderCache<T> encoder_forward(const Parameters<T>& p, const Matrix<T>& images);
// Accumulates parameter gradients into grad (same layout as p.values).
template <typename T>
void encoder_backward(const Parameters<T>& p, const EncoderCache<T>& cache, const Matrix<T>& dmu,
                      const Matrix<T>& dlogvar, std::vector<T>& grad);

template <typename T>
DecoderCache<T> decoder_forward(const Parameters<T>& p, const Matrix<T>& z);
// Returns dL/dz.
template <typename T>
Matrix<T> decoder_backward(const Parameters<T>& p, const DecoderCache<T>& cache, const Matrix<T>& dlogits,
                           std::vector<T>& grad);

template <typename T>
DragCache<T> dn_forward(const Parameters<T>& p, const Matrix<T>& z);
template <typename T>
Matrix<T> dn_backward(const Parameters<T>& p, const DragCache<T>& cache, const Vector<T>& doutput, std::vector<T>& grad);

struct LossTerms {
  bool reconstruction = true;
  bool kl = true;
  bool drag = true;
  // Multiplies the mean per-pixel cross-entropy in the differentiated
  // objective; the pixel count turns it into the per-image log-likelihood.
  double recon_weight = 1.0;
};

struct LossValues {
  double recon = 0.0;
  double kl = 0.0;
  double dn = 0.0;
};

template <typename T>
struct Batch {
  Matrix<T> images;  // pixels x B
  Matrix<T> noise;   // d x B
  Vector<T> labels;  // B, standardized
};

// Loss of the selected terms (each averaged over the batch) and, when grad is
// non-null, the gradient of recon_weight * recon + kl + dn with respect to
// every parameter.
template <typename T>
LossValues evaluate_batch(const Parameters<T>& p, const Batch<T>& batch, const LossTerms& terms, std::vector<T>* grad);

// ---------------------------------------------------------------------------
// Single-sample API.

struct EncoderOutput {
  Eigen::VectorXd mu;
  Eigen::VectorXd logvar;
};

EncoderOutput encode(const shapegen::GrayImage& image, const NetworkParams& params);
EncoderOutput encode(const shapegen::BinaryImage& image, const NetworkParams& params);
Eigen::VectorXd reparameterize(const EncoderOutput& enc, const Eigen::VectorXd& noise);
shapegen::GrayImage decode(const Eigen::VectorXd& z, const NetworkParams& params);
double dn_predict(const Eigen::VectorXd& z, const NetworkParams& params);

// Encoder means/log-variances for many images (rows = images).
void encode_all(const std::vector<shapegen::BinaryImage>& images, const NetworkParams& params, Eigen::MatrixXd& mu,
                Eigen::MatrixXd& logvar);

// loss_recon: mean per-pixel binary cross-entropy with recon clamped to
// [1e-7, 1 - 1e-7]; loss_kl: batch mean of the Gaussian KL to N(0, I).
struct VaeLoss {
  double recon = 0.0;
  double kl = 0.0;
};
VaeLoss vae_loss(const std::vector<shapegen::GrayImage>& images, const std::vector<shapegen::GrayImage>& recon,
                 const std::vector<EncoderOutput>& enc);

double joint_loss(double loss_recon, double loss_kl, double loss_dn);

// ---------------------------------------------------------------------------
// Training.

enum class Mode { kJoint, kSeparate };
const char* to_string(Mode mode);
Mode parse_mode(const std::string& text);

struct TrainConfig {
  Architecture arch;
  int batch_size = 64;
  double learning_rate = 1e-3;
  int epochs = 200;
  Mode mode = Mode::kJoint;
  std::uint64_t seed = 1;
  // Weight of loss_recon in the objective; unset means the pixel count
  // (cross-entropy summed over the image).
  std::optional<double> recon_weight;

  double effective_recon_weight() const { return recon_weight ? *recon_weight : arch.pixels(); }

  // Recognised keys: latent_dim, dense_units, batch_size, learning_rate,
  // epochs, mode, seed, kl_clamp (the logvar clamp bound), recon_weight. Unknown keys are
  // ignored here so the pipeline config can carry them.
  static TrainConfig from_key_values(const std::map<std::string, std::string>& kv);
};

struct EpochMetrics {
  int epoch = 0;
  int stage = 1;  // separate mode: 1 = VAE, 2 = drag network on the frozen encoder
  double loss_recon = 0.0;
  double loss_kl = 0.0;
  double loss_vae = 0.0;
  double loss_dn = 0.0;
  double loss_joint = 0.0;  // loss_vae + loss_dn
  double objective = 0.0;   // recon_weight * loss_recon + loss_kl + loss_dn, the minimised quantity
};

struct TrainingMetrics {
  Mode mode = Mode::kJoint;
  std::vector<EpochMetrics> epochs;
};

struct TrainingData {
  std::vector<shapegen::BinaryImage> images;
  std::vector<double> labels;  // standardized
};

struct TrainResult {
  NetworkParams params;
  TrainingMetrics metrics;
  NetworkParams stage1_params;  // separate mode only: snapshot after the VAE stage
};

using ProgressFn = std::function<void(const EpochMetrics&)>;

TrainResult train(const TrainingData& data, const TrainConfig& cfg, ProgressFn progress = {});

void write_metrics(const std::filesystem::path& path, const TrainingMetrics& metrics);

// Checkpoint container with f32 tensors; architecture stored as attributes.
void save_checkpoint(const std::filesystem::path& path, const NetworkParams& params,
                     const std::map<std::string, std::string>& extra_attributes = {});
NetworkParams load_checkpoint(const std::filesystem::path& path,
                              std::map<std::string, std::string>* attributes = nullptr);

}  // namespace dragopt::latentnet
