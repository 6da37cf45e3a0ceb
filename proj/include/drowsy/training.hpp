#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "drowsy/dataset.hpp"
#include "drowsy/model.hpp"

namespace drowsy {

/// Gradients share the parameter layout.
using Gradients = ModelParams;

/// Mean softmax cross-entropy over the batch, from logits (log-sum-exp form).
double cross_entropy_loss(const Matrix& logits, std::span<const int> labels);

/// Exact gradient of the mean cross-entropy, differentiating through the
/// batch statistics of batch norm.
Gradients backward(const ForwardCache& cache, std::span<const int> labels,
                   const ModelParams& params, const ModelConfig& config);

struct AdamState {
  std::uint64_t step_count = 0;
  ModelParams first_moment;
  ModelParams second_moment;
  double eta = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const ModelParams& params);
};

/// Bias-corrected Adam update of `params` in place.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;      // mean over samples
  double accuracy = 0.0;  // running training accuracy over the epoch
  std::uint64_t optimizer_steps = 0;  // cumulative Adam steps after this epoch
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  int epochs = 11;
  std::uint64_t seed = 0;
  std::size_t batch_size = 50;
};

struct FitResult {
  ModelParams params;
  TrainReport report;
};

/// Called after every epoch with the epoch number (1-based) and current parameters.
using EpochCallback = std::function<void(int epoch, const ModelParams& params)>;

/// Trains from a fresh initialisation. Init and shuffling streams are both
/// derived from `options.seed`.
FitResult fit(const DatasetBundle& train, const ModelConfig& config, const TrainOptions& options,
              const EpochCallback& on_epoch = {});

/// Writes `epoch,loss,acc` rows.
void write_train_report_csv(const TrainReport& report, const std::filesystem::path& path);

}  // namespace drowsy
