#include "drowsy/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace drowsy {

namespace {

void require_full_geometry(const ModelParams& params) {
  if (params.w1.empty() || params.w2.rows() != 2 * params.w1.rows())
    throw UsageError("interpretation is defined for the separable (full) architecture only");
}

}  // namespace

ActivationMap class_activation_map(const ForwardCache& cache, const ModelParams& params, int c,
                                   std::size_t sample) {
  if (c != 0 && c != 1) throw UsageError("class_activation_map: class must be 0 or 1");
  if (sample >= cache.h4.dim0()) throw ShapeError("class_activation_map: sample out of range");
  const std::size_t maps = cache.h4.dim1(), len = cache.h4.dim2();
  if (params.w6.rows() != maps) throw ShapeError("class_activation_map: dense shape mismatch");
  ActivationMap m{Matrix(maps, len), c};
  for (std::size_t i = 0; i < maps; ++i) {
    const double w = params.w6(i, static_cast<std::size_t>(c));
    const auto h4 = cache.h4.row(sample, i);
    for (std::size_t j = 0; j < len; ++j) m.values(i, j) = w * h4[j];
  }
  return m;
}

std::vector<DiscriminativeLocation> top_locations(const ActivationMap& map, std::size_t n) {
  const std::size_t total = map.values.size();
  if (n > total) throw UsageError("top_locations: N exceeds the number of map entries");
  std::vector<std::size_t> flat(total);
  for (std::size_t k = 0; k < total; ++k) flat[k] = k;
  // Row-major flat index order equals (node, time) lexicographic order.
  const auto& v = map.values.data();
  std::partial_sort(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(n), flat.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (v[a] != v[b]) return v[a] > v[b];
                      return a < b;
                    });
  std::vector<DiscriminativeLocation> out(n);
  const std::size_t cols = map.values.cols();
  for (std::size_t k = 0; k < n; ++k) {
    out[k].node = flat[k] / cols;
    out[k].time = flat[k] % cols;
    out[k].value = v[flat[k]];
  }
  return out;
}

TracedPoint trace_location(std::size_t node, std::size_t time, const Tensor3& x,
                           std::size_t sample, const ModelParams& params) {
  require_full_geometry(params);
  const std::size_t l = params.w2.cols();
  if (node >= params.w2.rows() || time + l > x.dim2())
    throw ShapeError("trace_location: location outside the activation map");
  if (x.dim1() != params.w1.cols()) throw ShapeError("trace_location: channel count mismatch");
  const std::size_t source = node / 2;
  const auto kernel = params.w2.row(node);

  TracedPoint best{0, static_cast<double>(time) + static_cast<double>(l - 1) / 2.0};
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < x.dim1(); ++p) {
    const auto sig = x.row(sample, p);
    double conv = 0.0;
    for (std::size_t r = 0; r < l; ++r) conv += kernel[r] * sig[time + r];
    const double score = params.w1(source, p) * conv;
    if (score > best_score) {
      best_score = score;
      best.channel = p;
    }
  }
  return best;
}

Heatmap build_heatmap(std::span<const TracedPoint> points, std::size_t channels,
                      std::size_t length, double sigma) {
  if (points.empty()) throw UsageError("build_heatmap: no discriminative locations");
  if (!(sigma > 0.0)) throw UsageError("build_heatmap: sigma must be positive");
  Heatmap h;
  h.sigma = sigma;
  h.top_n = points.size();
  h.raw = Matrix(channels, length);
  const double norm = 1.0 / (sigma * std::sqrt(2.0 * std::numbers::pi));
  for (const auto& pt : points) {
    if (pt.channel >= channels) throw ShapeError("build_heatmap: channel out of range");
    auto row = h.raw.row(pt.channel);
    for (std::size_t q = 0; q < length; ++q) {
      const double d = static_cast<double>(q) - pt.center;
      row[q] += std::exp(-0.5 * d * d / (sigma * sigma));
    }
  }
  for (double& v : h.raw.data()) v *= norm;

  const auto [lo_it, hi_it] = std::minmax_element(h.raw.data().begin(), h.raw.data().end());
  const double lo = *lo_it, hi = *hi_it;
  h.map = Matrix(channels, length, -1.0);
  if (hi > lo) {
    const double span = hi - lo;
    for (std::size_t k = 0; k < h.raw.size(); ++k)
      h.map.data()[k] = 2.0 * ((h.raw.data()[k] - lo) / span) - 1.0;
  } else {
    h.degenerate = true;
  }
  h.channel_summary.assign(channels, 0.0);
  for (std::size_t p = 0; p < channels; ++p) {
    double s = 0.0;
    for (double v : h.map.row(p)) s += v;
    h.channel_summary[p] = s / static_cast<double>(length);
  }
  return h;
}

Interpretation interpret_sample(const Tensor3& x, const ModelParams& params,
                                const ModelConfig& config, const BnStats* context,
                                const InterpretOptions& options) {
  if (config.variant != Variant::kFull)
    throw UsageError("interpret_sample: only the full architecture can be interpreted");
  if (x.dim0() != 1) throw ShapeError("interpret_sample: expects exactly one sample");
  const ForwardCache cache = forward(x, params, config, context);

  Interpretation out;
  out.likelihoods = {cache.h7(0, 0), cache.h7(0, 1)};
  out.predicted_class = out.likelihoods[1] > out.likelihoods[0] ? 1 : 0;
  const double sigma = options.sigma.value_or(static_cast<double>(config.kernel_length) / 2.0);

  const ActivationMap cam = class_activation_map(cache, params, out.predicted_class);
  const bool flat = std::all_of(cam.values.data().begin(), cam.values.data().end(),
                                [](double v) { return v == 0.0; });
  if (flat) {
    Heatmap& h = out.heatmap;
    h.raw = Matrix(config.channels, config.length);
    h.map = Matrix(config.channels, config.length, -1.0);
    h.channel_summary.assign(config.channels, -1.0);
    h.sigma = sigma;
    h.top_n = 0;
    h.degenerate = true;
    h.class_label = out.predicted_class;
    return out;
  }

  out.locations = top_locations(cam, std::min(options.top_n, cam.values.size()));
  std::vector<TracedPoint> points;
  points.reserve(out.locations.size());
  for (auto& loc : out.locations) {
    const TracedPoint p = trace_location(loc.node, loc.time, x, 0, params);
    loc.channel = p.channel;
    loc.center = p.center;
    points.push_back(p);
  }
  out.heatmap = build_heatmap(points, config.channels, config.length, sigma);
  out.heatmap.class_label = out.predicted_class;
  return out;
}

}  // namespace drowsy
