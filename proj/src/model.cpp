#include "drowsy/model.hpp"

#include <algorithm>
#include <cmath>

namespace drowsy {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull:
      return "full";
    case Variant::kConv1d:
      return "conv1d";
    case Variant::kNoDepthwise:
      return "no_depthwise";
    case Variant::kNoPointwise:
      return "no_pointwise";
    case Variant::kNoBatchNorm:
      return "no_batchnorm";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : kAllVariants)
    if (to_string(v) == s) return v;
  throw UsageError("unknown model variant '" + s + "'");
}

void ModelConfig::validate() const {
  if (channels == 0 || length == 0) throw UsageError("ModelConfig: empty input geometry");
  if (spatial_filters == 0) throw UsageError("ModelConfig: need at least one pointwise filter");
  if (kernel_length == 0 || kernel_length > length)
    throw UsageError("ModelConfig: kernel length must be in [1, n]");
  if (!(bn_epsilon > 0.0)) throw UsageError("ModelConfig: bn_epsilon must be positive");
}

std::size_t ModelConfig::feature_maps() const {
  switch (variant) {
    case Variant::kNoPointwise:
      return 2 * channels;
    case Variant::kNoDepthwise:
      return spatial_filters;
    default:
      return 2 * spatial_filters;
  }
}

std::size_t ModelConfig::feature_length() const {
  return variant == Variant::kNoDepthwise ? length : length - kernel_length + 1;
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  const std::size_t maps = config.feature_maps();
  ModelParams p;
  if (config.has_pointwise()) {
    p.w1 = Matrix(config.spatial_filters, config.channels);
    p.b1.assign(config.spatial_filters, 0.0);
  }
  if (config.has_depthwise()) {
    p.w2 = Matrix(maps, config.kernel_length);
    p.b2.assign(maps, 0.0);
  } else if (config.variant == Variant::kConv1d) {
    p.w2 = Matrix(maps, config.channels * config.kernel_length);
    p.b2.assign(maps, 0.0);
  }
  if (config.has_batchnorm()) {
    p.gamma.assign(maps, 0.0);
    p.beta.assign(maps, 0.0);
  }
  p.w6 = Matrix(maps, 2);
  p.b6.assign(2, 0.0);
  return p;
}

void ModelParams::for_each(const std::function<void(const char*, std::span<double>)>& fn) {
  fn("w1", w1.data());
  fn("b1", b1);
  fn("w2", w2.data());
  fn("b2", b2);
  fn("gamma", gamma);
  fn("beta", beta);
  fn("w6", w6.data());
  fn("b6", b6);
}

void ModelParams::for_each(
    const std::function<void(const char*, std::span<const double>)>& fn) const {
  fn("w1", w1.data());
  fn("b1", b1);
  fn("w2", w2.data());
  fn("b2", b2);
  fn("gamma", gamma);
  fn("beta", beta);
  fn("w6", w6.data());
  fn("b6", b6);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const char*, std::span<const double> t) { n += t.size(); });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each([&](const char*, std::span<const double> t) {
    for (double v : t) ok = ok && std::isfinite(v);
  });
  return ok;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(config);
  Rng rng(seed);
  auto fill = [&](Matrix& w, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
  };
  if (!p.w1.empty()) fill(p.w1, config.channels);
  if (!p.w2.empty()) fill(p.w2, p.w2.cols());
  fill(p.w6, config.feature_maps());
  std::fill(p.gamma.begin(), p.gamma.end(), 1.0);
  return p;
}

Tensor3 pointwise_forward(const Tensor3& x, const Matrix& w1, std::span<const double> b1) {
  if (w1.cols() != x.dim1() || b1.size() != w1.rows())
    throw ShapeError("pointwise_forward: weight shape does not match input channels");
  const std::size_t batch = x.dim0(), n = x.dim2();
  Tensor3 out(batch, w1.rows(), n);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < w1.rows(); ++k) {
      auto dst = out.row(b, k);
      std::fill(dst.begin(), dst.end(), b1[k]);
      for (std::size_t p = 0; p < w1.cols(); ++p) {
        const double w = w1(k, p);
        const auto src = x.row(b, p);
        for (std::size_t t = 0; t < n; ++t) dst[t] += w * src[t];
      }
    }
  return out;
}

namespace {

// dst[j] += sum_r w[r] * src[j + r], accumulated tap by tap.
void correlate_add(std::span<double> dst, std::span<const double> src, std::span<const double> w) {
  const std::size_t len = dst.size();
  for (std::size_t r = 0; r < w.size(); ++r) {
    const double wr = w[r];
    const double* s = src.data() + r;
    for (std::size_t j = 0; j < len; ++j) dst[j] += wr * s[j];
  }
}

}  // namespace

Tensor3 depthwise_forward(const Tensor3& h1, const Matrix& w2, std::span<const double> b2) {
  if (w2.rows() != 2 * h1.dim1() || b2.size() != w2.rows())
    throw ShapeError("depthwise_forward: need two kernels per input channel");
  if (w2.cols() > h1.dim2()) throw ShapeError("depthwise_forward: kernel longer than input");
  const std::size_t batch = h1.dim0(), len = h1.dim2() - w2.cols() + 1;
  Tensor3 out(batch, w2.rows(), len);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < w2.rows(); ++i) {
      auto dst = out.row(b, i);
      std::fill(dst.begin(), dst.end(), b2[i]);
      correlate_add(dst, h1.row(b, i / 2), w2.row(i));
    }
  return out;
}

Tensor3 conv1d_forward(const Tensor3& x, const Matrix& w, std::span<const double> b,
                       std::size_t kernel_length) {
  if (w.cols() != x.dim1() * kernel_length || b.size() != w.rows())
    throw ShapeError("conv1d_forward: kernel shape does not match input channels");
  if (kernel_length > x.dim2()) throw ShapeError("conv1d_forward: kernel longer than input");
  const std::size_t batch = x.dim0(), len = x.dim2() - kernel_length + 1;
  Tensor3 out(batch, w.rows(), len);
  for (std::size_t bi = 0; bi < batch; ++bi)
    for (std::size_t i = 0; i < w.rows(); ++i) {
      auto dst = out.row(bi, i);
      std::fill(dst.begin(), dst.end(), b[i]);
      const auto kernel = w.row(i);
      for (std::size_t p = 0; p < x.dim1(); ++p)
        correlate_add(dst, x.row(bi, p), kernel.subspan(p * kernel_length, kernel_length));
    }
  return out;
}

Tensor3 relu(const Tensor3& h) {
  Tensor3 out = h;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

BnStats batch_statistics(const Tensor3& h) {
  const std::size_t maps = h.dim1();
  const double count = static_cast<double>(h.dim0() * h.dim2());
  BnStats s{std::vector<double>(maps, 0.0), std::vector<double>(maps, 0.0)};
  for (std::size_t i = 0; i < maps; ++i) {
    double sum = 0.0;
    for (std::size_t b = 0; b < h.dim0(); ++b)
      for (double v : h.row(b, i)) sum += v;
    const double mean = sum / count;
    double ss = 0.0;
    for (std::size_t b = 0; b < h.dim0(); ++b)
      for (double v : h.row(b, i)) ss += (v - mean) * (v - mean);
    s.mean[i] = mean;
    s.var[i] = ss / count;
  }
  return s;
}

Tensor3 batchnorm_apply(const Tensor3& h, const BnStats& stats, std::span<const double> gamma,
                        std::span<const double> beta, double eps) {
  const std::size_t maps = h.dim1();
  if (gamma.size() != maps || beta.size() != maps || stats.mean.size() != maps)
    throw ShapeError("batchnorm: parameter count does not match feature maps");
  Tensor3 out(h.dim0(), maps, h.dim2());
  for (std::size_t i = 0; i < maps; ++i) {
    const double inv = 1.0 / std::sqrt(stats.var[i] + eps);
    for (std::size_t b = 0; b < h.dim0(); ++b) {
      const auto src = h.row(b, i);
      auto dst = out.row(b, i);
      for (std::size_t t = 0; t < src.size(); ++t)
        dst[t] = gamma[i] * (src[t] - stats.mean[i]) * inv + beta[i];
    }
  }
  return out;
}

BatchNormResult batchnorm_forward(const Tensor3& h, std::span<const double> gamma,
                                  std::span<const double> beta, double eps) {
  BatchNormResult r;
  r.stats = batch_statistics(h);
  r.out = batchnorm_apply(h, r.stats, gamma, beta, eps);
  return r;
}

std::array<double, 2> softmax2(double z0, double z1) {
  const double m = std::max(z0, z1);
  const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
  const double s = e0 + e1;
  return {e0 / s, e1 / s};
}

HeadResult head_forward(const Tensor3& h4, const Matrix& w6, std::span<const double> b6) {
  const std::size_t batch = h4.dim0(), maps = h4.dim1();
  if (w6.rows() != maps || w6.cols() != 2 || b6.size() != 2)
    throw ShapeError("head_forward: dense layer shape does not match feature maps");
  HeadResult r{Matrix(batch, maps), Matrix(batch, 2), Matrix(batch, 2)};
  const double len = static_cast<double>(h4.dim2());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < maps; ++i) {
      double sum = 0.0;
      for (double v : h4.row(b, i)) sum += v;
      r.h5(b, i) = sum / len;
    }
    for (std::size_t c = 0; c < 2; ++c) {
      double z = b6[c];
      for (std::size_t i = 0; i < maps; ++i) z += w6(i, c) * r.h5(b, i);
      r.h6(b, c) = z;
    }
    const auto p = softmax2(r.h6(b, 0), r.h6(b, 1));
    r.h7(b, 0) = p[0];
    r.h7(b, 1) = p[1];
  }
  return r;
}

namespace {

struct ConvStage {
  Tensor3 h1;
  Tensor3 h2;
};

ConvStage conv_stage(const Tensor3& x, const ModelParams& params, const ModelConfig& config) {
  if (x.dim1() != config.channels || x.dim2() != config.length)
    throw ShapeError("forward: input is " + std::to_string(x.dim1()) + " x " +
                     std::to_string(x.dim2()) + ", model expects " +
                     std::to_string(config.channels) + " x " + std::to_string(config.length));
  ConvStage s;
  switch (config.variant) {
    case Variant::kFull:
    case Variant::kNoBatchNorm:
      s.h1 = pointwise_forward(x, params.w1, params.b1);
      s.h2 = depthwise_forward(s.h1, params.w2, params.b2);
      break;
    case Variant::kConv1d:
      s.h2 = conv1d_forward(x, params.w2, params.b2, config.kernel_length);
      break;
    case Variant::kNoPointwise:
      s.h2 = depthwise_forward(x, params.w2, params.b2);
      break;
    case Variant::kNoDepthwise:
      s.h1 = pointwise_forward(x, params.w1, params.b1);
      s.h2 = s.h1;
      break;
  }
  return s;
}

}  // namespace

ForwardCache forward(const Tensor3& x, const ModelParams& params, const ModelConfig& config,
                     const BnStats* fixed_stats) {
  config.validate();
  if (x.dim0() == 0) throw ShapeError("forward: empty batch");
  ForwardCache c;
  auto stage = conv_stage(x, params, config);
  c.input = x;
  c.h1 = std::move(stage.h1);
  c.h2 = std::move(stage.h2);
  c.h3 = relu(c.h2);
  if (config.has_batchnorm()) {
    if (fixed_stats) {
      c.stats = *fixed_stats;
      c.stats_from_batch = false;
    } else {
      c.stats = batch_statistics(c.h3);
    }
    c.h4 = batchnorm_apply(c.h3, c.stats, params.gamma, params.beta, config.bn_epsilon);
  } else {
    c.h4 = c.h3;
  }
  auto head = head_forward(c.h4, params.w6, params.b6);
  c.h5 = std::move(head.h5);
  c.h6 = std::move(head.h6);
  c.h7 = std::move(head.h7);
  return c;
}

BnStats population_statistics(const Tensor3& x, const ModelParams& params,
                              const ModelConfig& config, std::size_t chunk) {
  const std::size_t maps = config.feature_maps();
  BnStats acc{std::vector<double>(maps, 0.0), std::vector<double>(maps, 0.0)};
  if (!config.has_batchnorm()) return acc;
  if (chunk == 0) chunk = 1;
  if (x.dim0() <= chunk) return batch_statistics(relu(conv_stage(x, params, config).h2));
  std::vector<double> m2(maps, 0.0);
  double n_acc = 0.0;
  const std::size_t per = x.dim1() * x.dim2();
  for (std::size_t start = 0; start < x.dim0(); start += chunk) {
    const std::size_t len = std::min(chunk, x.dim0() - start);
    Tensor3 part(len, x.dim1(), x.dim2());
    std::copy(x.data().begin() + start * per, x.data().begin() + (start + len) * per,
              part.data().begin());
    const Tensor3 h3 = relu(conv_stage(part, params, config).h2);
    const BnStats s = batch_statistics(h3);
    const double n_b = static_cast<double>(len * h3.dim2());
    const double n = n_acc + n_b;
    for (std::size_t i = 0; i < maps; ++i) {
      const double delta = s.mean[i] - acc.mean[i];
      acc.mean[i] += delta * n_b / n;
      m2[i] += s.var[i] * n_b + delta * delta * n_acc * n_b / n;
    }
    n_acc = n;
  }
  for (std::size_t i = 0; i < maps; ++i) acc.var[i] = n_acc > 0 ? m2[i] / n_acc : 0.0;
  return acc;
}

std::vector<int> predict_classes(const ForwardCache& cache) {
  std::vector<int> out(cache.batch());
  for (std::size_t b = 0; b < out.size(); ++b) out[b] = cache.h7(b, 1) > cache.h7(b, 0) ? 1 : 0;
  return out;
}

}  // namespace drowsy
