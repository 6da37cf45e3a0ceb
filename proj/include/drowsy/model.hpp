#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drowsy/common.hpp"

namespace drowsy {

/// Architecture variant. `kFull` is the separable network; the others are
/// the ablations used for comparison.
enum class Variant { kFull, kConv1d, kNoDepthwise, kNoPointwise, kNoBatchNorm };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
inline constexpr std::array<Variant, 5> kAllVariants = {
    Variant::kFull, Variant::kConv1d, Variant::kNoDepthwise, Variant::kNoPointwise,
    Variant::kNoBatchNorm};

struct ModelConfig {
  std::size_t channels = kChannels;        // m
  std::size_t length = kSamplesPerWindow;  // n
  std::size_t spatial_filters = 16;        // N1
  std::size_t kernel_length = 64;          // l
  Variant variant = Variant::kFull;
  double bn_epsilon = 1e-5;

  void validate() const;

  bool has_pointwise() const {
    return variant == Variant::kFull || variant == Variant::kNoDepthwise ||
           variant == Variant::kNoBatchNorm;
  }
  bool has_depthwise() const {
    return variant == Variant::kFull || variant == Variant::kNoPointwise ||
           variant == Variant::kNoBatchNorm;
  }
  bool has_batchnorm() const { return variant != Variant::kNoBatchNorm; }

  /// Number of feature maps entering batch norm / pooling.
  std::size_t feature_maps() const;
  /// Time length of those feature maps (n - l + 1, or n without a temporal layer).
  std::size_t feature_length() const;

  bool operator==(const ModelConfig&) const = default;
};

/// All learnable tensors. Tensors a variant does not use are empty.
///
/// w1: N1 x m pointwise weights; b1: N1.
/// w2: maps x l depthwise kernels (maps x (m*l) for conv1d, kernel p-major); b2: maps.
/// gamma, beta: batch-norm affine, one per map.
/// w6: maps x 2 dense weights; b6: 2.
struct ModelParams {
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;
  std::vector<double> b2;
  std::vector<double> gamma;
  std::vector<double> beta;
  Matrix w6;
  std::vector<double> b6;

  /// Zero-filled tensors shaped for `config`.
  static ModelParams zeros(const ModelConfig& config);

  /// Visits every tensor in checkpoint order (w1, b1, w2, b2, gamma, beta, w6, b6).
  void for_each(const std::function<void(const char* name, std::span<double>)>& fn);
  void for_each(const std::function<void(const char* name, std::span<const double>)>& fn) const;

  std::size_t parameter_count() const;
  bool all_finite() const;
  bool operator==(const ModelParams&) const = default;
};

/// Uniform fan-in initialisation in +-sqrt(6 / fan_in); biases and beta zero, gamma one.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Per-map normalisation statistics (population variance).
struct BnStats {
  std::vector<double> mean;
  std::vector<double> var;
};

struct ForwardCache {
  Tensor3 input;  // batch x m x n
  Tensor3 h1;     // pointwise output, batch x N1 x n (empty without a pointwise layer)
  Tensor3 h2;     // pre-activation feature maps, batch x maps x T
  Tensor3 h3;     // ReLU(h2)
  Tensor3 h4;     // batch-normalised h3 (equal to h3 for kNoBatchNorm)
  BnStats stats;  // statistics used to produce h4
  Matrix h5;      // batch x maps, pooled
  Matrix h6;      // batch x 2, logits
  Matrix h7;      // batch x 2, softmax likelihoods
  bool stats_from_batch = true;

  std::size_t batch() const { return h6.rows(); }
};

// Layer primitives. Indexing is 0-based: depthwise node i reads input channel
// i / 2, which is node i+1 reading channel ceil((i+1)/2) in 1-based terms.

/// h1[k][t] = sum_p w1[k][p] x[p][t] + b1[k].
Tensor3 pointwise_forward(const Tensor3& x, const Matrix& w1, std::span<const double> b1);

/// Valid cross-correlation of input channel i/2 with kernel row i.
Tensor3 depthwise_forward(const Tensor3& h1, const Matrix& w2, std::span<const double> b2);

/// Standard multi-channel 1-D convolution; kernel row i holds m blocks of l taps.
Tensor3 conv1d_forward(const Tensor3& x, const Matrix& w, std::span<const double> b,
                       std::size_t kernel_length);

Tensor3 relu(const Tensor3& h);

/// Per-map statistics over every batch and time position of `h`.
BnStats batch_statistics(const Tensor3& h);

/// Normalises with `stats` and applies the affine transform.
Tensor3 batchnorm_apply(const Tensor3& h, const BnStats& stats, std::span<const double> gamma,
                        std::span<const double> beta, double eps);

struct BatchNormResult {
  Tensor3 out;
  BnStats stats;
};

/// Batch norm with statistics of the current batch (never running averages).
BatchNormResult batchnorm_forward(const Tensor3& h, std::span<const double> gamma,
                                  std::span<const double> beta, double eps);

struct HeadResult {
  Matrix h5, h6, h7;
};

/// Global average pooling, dense layer, softmax.
HeadResult head_forward(const Tensor3& h4, const Matrix& w6, std::span<const double> b6);

/// Softmax of one row of logits, in the max-shifted form.
std::array<double, 2> softmax2(double z0, double z1);

/// Full forward pass. With `fixed_stats` the normalisation uses the given
/// statistics instead of the batch's own.
ForwardCache forward(const Tensor3& x, const ModelParams& params, const ModelConfig& config,
                     const BnStats* fixed_stats = nullptr);

/// Batch-norm statistics over an arbitrary set of inputs, accumulated in
/// chunks. Equal to what a single forward over all of `x` would use.
BnStats population_statistics(const Tensor3& x, const ModelParams& params,
                              const ModelConfig& config, std::size_t chunk = 64);

/// Predicted class (argmax of h7, ties to alert) for every row.
std::vector<int> predict_classes(const ForwardCache& cache);

// ---------------------------------------------------------------------------
// Checkpoints: "EEGW" magic, version byte, u32 JSON header length, JSON
// {config, seed, epoch, tensors}, then little-endian f32 tensors.

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::uint64_t seed = 0;
  int epoch = 0;
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace drowsy
