#include "drowsy/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace drowsy {

double cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() != labels.size() || logits.cols() != 2)
    throw ShapeError("cross_entropy_loss: logits/labels mismatch");
  if (labels.empty()) throw ShapeError("cross_entropy_loss: empty batch");
  double total = 0.0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const double z0 = logits(b, 0), z1 = logits(b, 1);
    const double m = std::max(z0, z1);
    const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    total += lse - logits(b, static_cast<std::size_t>(labels[b]));
  }
  return total / static_cast<double>(labels.size());
}

namespace {

// Kernel gradient and (optionally) input gradient of a depthwise layer whose
// node i reads channel i / 2 of `in`.
void depthwise_backward(const Tensor3& dh2, const Tensor3& in, const Matrix& w2, Matrix& dw2,
                        std::vector<double>& db2, Tensor3* din) {
  const std::size_t l = w2.cols(), len = dh2.dim2();
  for (std::size_t b = 0; b < dh2.dim0(); ++b)
    for (std::size_t i = 0; i < dh2.dim1(); ++i) {
      const auto g = dh2.row(b, i);
      const auto src = in.row(b, i / 2);
      auto acc = dw2.row(i);
      double bias = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double gj = g[j];
        bias += gj;
        const double* s = src.data() + j;
        for (std::size_t r = 0; r < l; ++r) acc[r] += gj * s[r];
      }
      db2[i] += bias;
      if (din) {
        auto dst = din->row(b, i / 2);
        for (std::size_t r = 0; r < l; ++r) {
          const double wr = w2(i, r);
          double* d = dst.data() + r;
          for (std::size_t j = 0; j < len; ++j) d[j] += wr * g[j];
        }
      }
    }
}

void conv1d_backward(const Tensor3& dh2, const Tensor3& x, std::size_t l, Matrix& dw,
                     std::vector<double>& db) {
  const std::size_t len = dh2.dim2();
  for (std::size_t b = 0; b < dh2.dim0(); ++b)
    for (std::size_t i = 0; i < dh2.dim1(); ++i) {
      const auto g = dh2.row(b, i);
      auto acc = dw.row(i);
      double bias = 0.0;
      for (double gj : g) bias += gj;
      db[i] += bias;
      for (std::size_t p = 0; p < x.dim1(); ++p) {
        const auto src = x.row(b, p);
        double* a = acc.data() + p * l;
        for (std::size_t j = 0; j < len; ++j) {
          const double gj = g[j];
          const double* s = src.data() + j;
          for (std::size_t r = 0; r < l; ++r) a[r] += gj * s[r];
        }
      }
    }
}

void pointwise_backward(const Tensor3& dh1, const Tensor3& x, Matrix& dw1,
                        std::vector<double>& db1) {
  for (std::size_t b = 0; b < dh1.dim0(); ++b)
    for (std::size_t k = 0; k < dh1.dim1(); ++k) {
      const auto g = dh1.row(b, k);
      double bias = 0.0;
      for (double v : g) bias += v;
      db1[k] += bias;
      for (std::size_t p = 0; p < x.dim1(); ++p) {
        const auto src = x.row(b, p);
        double dot = 0.0;
        for (std::size_t t = 0; t < g.size(); ++t) dot += g[t] * src[t];
        dw1(k, p) += dot;
      }
    }
}

}  // namespace

Gradients backward(const ForwardCache& cache, std::span<const int> labels,
                   const ModelParams& params, const ModelConfig& config) {
  const std::size_t batch = cache.batch();
  if (labels.size() != batch) throw ShapeError("backward: label count differs from batch");
  const std::size_t maps = config.feature_maps();
  const std::size_t len = cache.h4.dim2();
  Gradients g = ModelParams::zeros(config);

  // Softmax + cross-entropy: d loss / d h6 = (h7 - onehot) / B.
  Matrix dh6(batch, 2);
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      dh6(b, c) = (cache.h7(b, c) - (labels[b] == static_cast<int>(c) ? 1.0 : 0.0)) * inv_batch;

  Matrix dh5(batch, maps);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < 2; ++c) {
      g.b6[c] += dh6(b, c);
      for (std::size_t i = 0; i < maps; ++i) {
        g.w6(i, c) += cache.h5(b, i) * dh6(b, c);
        dh5(b, i) += params.w6(i, c) * dh6(b, c);
      }
    }

  // Pooling spreads dh5 evenly over time.
  Tensor3 dh3(batch, maps, len);
  const double inv_len = 1.0 / static_cast<double>(len);
  if (config.has_batchnorm()) {
    const double count = static_cast<double>(batch * len);
    for (std::size_t i = 0; i < maps; ++i) {
      const double inv_std = 1.0 / std::sqrt(cache.stats.var[i] + config.bn_epsilon);
      const double mean = cache.stats.mean[i];
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double d4 = dh5(b, i) * inv_len;
        const double dxhat = d4 * params.gamma[i];
        double row_xhat = 0.0;
        for (double v : cache.h3.row(b, i)) row_xhat += (v - mean) * inv_std;
        g.gamma[i] += d4 * row_xhat;
        g.beta[i] += d4 * static_cast<double>(len);
        sum_dxhat += dxhat * static_cast<double>(len);
        sum_dxhat_xhat += dxhat * row_xhat;
      }
      for (std::size_t b = 0; b < batch; ++b) {
        const double dxhat = dh5(b, i) * inv_len * params.gamma[i];
        const auto h3 = cache.h3.row(b, i);
        auto out = dh3.row(b, i);
        for (std::size_t j = 0; j < len; ++j) {
          if (cache.stats_from_batch) {
            const double xhat = (h3[j] - mean) * inv_std;
            out[j] = inv_std / count * (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
          } else {
            out[j] = dxhat * inv_std;
          }
        }
      }
    }
  } else {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < maps; ++i) {
        auto out = dh3.row(b, i);
        std::fill(out.begin(), out.end(), dh5(b, i) * inv_len);
      }
  }

  // ReLU.
  Tensor3& dh2 = dh3;
  for (std::size_t k = 0; k < dh2.size(); ++k)
    if (!(cache.h2.data()[k] > 0.0)) dh2.data()[k] = 0.0;

  switch (config.variant) {
    case Variant::kFull:
    case Variant::kNoBatchNorm: {
      Tensor3 dh1(batch, config.spatial_filters, config.length);
      depthwise_backward(dh2, cache.h1, params.w2, g.w2, g.b2, &dh1);
      pointwise_backward(dh1, cache.input, g.w1, g.b1);
      break;
    }
    case Variant::kNoPointwise:
      depthwise_backward(dh2, cache.input, params.w2, g.w2, g.b2, nullptr);
      break;
    case Variant::kConv1d:
      conv1d_backward(dh2, cache.input, config.kernel_length, g.w2, g.b2);
      break;
    case Variant::kNoDepthwise:
      pointwise_backward(dh2, cache.input, g.w1, g.b1);
      break;
  }
  return g;
}

AdamState AdamState::for_params(const ModelParams& params) {
  AdamState s;
  s.first_moment = params;
  s.second_moment = params;
  s.first_moment.for_each([](const char*, std::span<double> t) {
    std::fill(t.begin(), t.end(), 0.0);
  });
  s.second_moment.for_each([](const char*, std::span<double> t) {
    std::fill(t.begin(), t.end(), 0.0);
  });
  return s;
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state) {
  if (state.first_moment.parameter_count() != params.parameter_count())
    state = AdamState::for_params(params);
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);

  std::vector<std::span<double>> p, m, v;
  std::vector<std::span<const double>> g;
  params.for_each([&](const char*, std::span<double> s) { p.push_back(s); });
  state.first_moment.for_each([&](const char*, std::span<double> s) { m.push_back(s); });
  state.second_moment.for_each([&](const char*, std::span<double> s) { v.push_back(s); });
  grads.for_each([&](const char*, std::span<const double> s) { g.push_back(s); });

  for (std::size_t k = 0; k < p.size(); ++k) {
    if (g[k].size() != p[k].size()) throw ShapeError("adam_step: gradient shape mismatch");
    for (std::size_t e = 0; e < p[k].size(); ++e) {
      const double gi = g[k][e];
      m[k][e] = state.beta1 * m[k][e] + (1.0 - state.beta1) * gi;
      v[k][e] = state.beta2 * v[k][e] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[k][e] / c1;
      const double vhat = v[k][e] / c2;
      p[k][e] -= state.eta * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

FitResult fit(const DatasetBundle& train, const ModelConfig& config, const TrainOptions& options,
              const EpochCallback& on_epoch) {
  config.validate();
  if (train.samples.empty()) throw DataError("fit: empty training set");
  if (options.epochs < 1) throw UsageError("fit: epochs must be >= 1");
  if (options.batch_size == 0) throw UsageError("fit: batch size must be positive");

  const auto start = std::chrono::steady_clock::now();
  FitResult result;
  result.params = init_params(config, derive_seed(options.seed, {1}));
  result.report.seed = options.seed;
  AdamState adam = AdamState::for_params(result.params);
  Rng shuffler(derive_seed(options.seed, {2}));

  const std::size_t n = train.samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffler.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start_idx = 0; start_idx < n; start_idx += options.batch_size) {
      const std::size_t stop = std::min(n, start_idx + options.batch_size);
      std::span<const std::size_t> idx(order.data() + start_idx, stop - start_idx);
      const Tensor3 x = stack_signals(train.samples, idx);
      std::vector<int> labels(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) labels[b] = to_int(train.samples[idx[b]].label);

      const ForwardCache cache = forward(x, result.params, config);
      const double loss = cross_entropy_loss(cache.h6, labels);
      if (!std::isfinite(loss))
        throw NumericalError("fit: non-finite loss at epoch " + std::to_string(epoch));
      loss_sum += loss * static_cast<double>(idx.size());
      const auto pred = predict_classes(cache);
      for (std::size_t b = 0; b < idx.size(); ++b) correct += pred[b] == labels[b] ? 1 : 0;

      const Gradients grads = backward(cache, labels, result.params, config);
      adam_step(result.params, grads, adam);
    }
    if (!result.params.all_finite())
      throw NumericalError("fit: parameters diverged at epoch " + std::to_string(epoch));
    result.report.epochs.push_back({epoch, loss_sum / static_cast<double>(n),
                                    static_cast<double>(correct) / static_cast<double>(n),
                                    adam.step_count});
    if (on_epoch) on_epoch(epoch, result.params);
  }
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_train_report_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,loss,acc\n" << std::setprecision(10);
  for (const auto& e : report.epochs) out << e.epoch << ',' << e.loss << ',' << e.accuracy << '\n';
}

}  // namespace drowsy
