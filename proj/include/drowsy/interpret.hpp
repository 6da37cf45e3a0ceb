#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

#include "drowsy/model.hpp"

namespace drowsy {

/// Per-class contribution map: values(i, j) = w6(i, c) * h4(i, j).
struct ActivationMap {
  Matrix values;  // maps x (n - l + 1)
  int class_label = 0;
};

/// A ranked activation-map entry traced back to the input.
/// All indices are 0-based; `center` is fractional (time index + (l - 1) / 2).
struct DiscriminativeLocation {
  std::size_t node = 0;
  std::size_t time = 0;
  double value = 0.0;
  std::size_t channel = 0;
  double center = 0.0;
};

struct TracedPoint {
  std::size_t channel = 0;
  double center = 0.0;
};

struct Heatmap {
  Matrix map;                          // channels x length, in [-1, 1]
  Matrix raw;                          // Gaussian sums before normalisation
  std::vector<double> channel_summary;  // per-channel time mean of `map`
  int class_label = 0;
  double sigma = 32.0;
  std::size_t top_n = 100;
  bool degenerate = false;  // raw map was flat; `map` is all -1
};

/// Activation map of class `c` for sample `sample` of `cache` (full variant only).
ActivationMap class_activation_map(const ForwardCache& cache, const ModelParams& params, int c,
                                   std::size_t sample = 0);

/// The `n` largest entries in descending order; ties go to smaller node, then
/// smaller time index.
std::vector<DiscriminativeLocation> top_locations(const ActivationMap& map, std::size_t n = 100);

/// Traces activation-map position (node, time) back to the input: the channel
/// p maximising w1(node/2, p) * sum_r w2(node, r) x(p, time + r), ties to the
/// smallest p, and the episode centre time + (l - 1) / 2. The pointwise bias
/// does not enter the ranking.
TracedPoint trace_location(std::size_t node, std::size_t time, const Tensor3& x,
                           std::size_t sample, const ModelParams& params);

/// Sum of unit-area Gaussians at each traced centre, per channel, then an
/// affine min-max rescale of the whole map onto [-1, 1].
Heatmap build_heatmap(std::span<const TracedPoint> points, std::size_t channels,
                      std::size_t length, double sigma = 32.0);

struct Interpretation {
  Heatmap heatmap;
  int predicted_class = 0;
  std::array<double, 2> likelihoods{};
  std::vector<DiscriminativeLocation> locations;
};

struct InterpretOptions {
  std::size_t top_n = 100;
  std::optional<double> sigma;  // defaults to l / 2
};

/// Runs the model on one sample and interprets the predicted class. Without
/// `context` the batch-norm statistics come from the sample alone; with it,
/// the sample is normalised like a member of the context population.
Interpretation interpret_sample(const Tensor3& x, const ModelParams& params,
                                const ModelConfig& config, const BnStats* context = nullptr,
                                const InterpretOptions& options = {});

// Export.

struct HeatmapMetadata {
  int subject = 0;
  int label = 0;
  std::size_t index = 0;
};

/// Heatmap CSV: one row per channel, one column per time point.
void write_heatmap_csv(const Heatmap& heatmap, const std::filesystem::path& path);
/// JSON sidecar with 1-based node/time/channel/centre indices.
void write_interpretation_json(const Interpretation& interp, const HeatmapMetadata& meta,
                               const std::filesystem::path& path);
/// Signal traces with the heatmap as background and a channel summary bar.
void write_heatmap_svg(const Interpretation& interp, const Tensor3& x, std::size_t sample,
                       const HeatmapMetadata& meta, const std::filesystem::path& path);

}  // namespace drowsy
