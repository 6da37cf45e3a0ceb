#include <gtest/gtest.h>

#include <cmath>

#include "drowsy/model.hpp"
#include "test_support.hpp"

using namespace drowsy;
using drowsy::testing::randomize;
using drowsy::testing::random_tensor;
using drowsy::testing::tiny_config;

namespace {

// Direct loop evaluation of the full architecture, batch statistics.
Matrix naive_full_likelihoods(const Tensor3& x, const ModelParams& p, const ModelConfig& c) {
  const std::size_t B = x.dim0(), m = c.channels, n = c.length, N1 = c.spatial_filters, l = c.kernel_length;
  const std::size_t T = n - l + 1, maps = 2 * N1;
  Tensor3 h1(B, N1, n), h3(B, maps, T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < N1; ++k)
      for (std::size_t t = 0; t < n; ++t) {
        double s = p.b1[k];
        for (std::size_t q = 0; q < m; ++q) s += p.w1(k, q) * x(b, q, t);
        h1(b, k, t) = s;
      }
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < maps; ++i)
      for (std::size_t t = 0; t < T; ++t) {
        double s = p.b2[i];
        for (std::size_t r = 0; r < l; ++r) s += p.w2(i, r) * h1(b, i / 2, t + r);
        h3(b, i, t) = std::max(s, 0.0);
      }
  Matrix out(B, 2);
  std::vector<double> mean(maps, 0.0), var(maps, 0.0);
  const double count = static_cast<double>(B * T);
  for (std::size_t i = 0; i < maps; ++i) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t) mean[i] += h3(b, i, t) / count;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t) var[i] += (h3(b, i, t) - mean[i]) * (h3(b, i, t) - mean[i]) / count;
  }
  for (std::size_t b = 0; b < B; ++b) {
    double z[2] = {p.b6[0], p.b6[1]};
    for (std::size_t i = 0; i < maps; ++i) {
      double pooled = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        pooled += (p.gamma[i] * (h3(b, i, t) - mean[i]) / std::sqrt(var[i] + c.bn_epsilon) + p.beta[i]) /
                  static_cast<double>(T);
      z[0] += p.w6(i, 0) * pooled;
      z[1] += p.w6(i, 1) * pooled;
    }
    const double e0 = std::exp(z[0]), e1 = std::exp(z[1]);
    out(b, 0) = e0 / (e0 + e1);
    out(b, 1) = e1 / (e0 + e1);
  }
  return out;
}

}  // namespace

TEST(Config, DefaultsAndValidation) {
  const ModelConfig c;
  EXPECT_EQ(c.channels, 30u);
  EXPECT_EQ(c.length, 384u);
  EXPECT_EQ(c.spatial_filters, 16u);
  EXPECT_EQ(c.kernel_length, 64u);
  EXPECT_DOUBLE_EQ(c.bn_epsilon, 1e-5);
  EXPECT_EQ(c.feature_maps(), 32u);
  EXPECT_EQ(c.feature_length(), 321u);
  ModelConfig bad = c;
  bad.kernel_length = 400;
  EXPECT_THROW(bad.validate(), UsageError);
  EXPECT_THROW(variant_from_string("resnet"), UsageError);
  for (Variant v : kAllVariants) EXPECT_EQ(variant_from_string(to_string(v)), v);
}

TEST(Config, VariantGeometry) {
  ModelConfig c;
  c.variant = Variant::kConv1d;
  EXPECT_EQ(c.feature_maps(), 32u);
  EXPECT_EQ(c.feature_length(), 321u);
  c.variant = Variant::kNoPointwise;
  EXPECT_EQ(c.feature_maps(), 60u);
  c.variant = Variant::kNoDepthwise;
  EXPECT_EQ(c.feature_maps(), 16u);
  EXPECT_EQ(c.feature_length(), 384u);
}

TEST(InitParams, DeterministicAndBounded) {
  const ModelConfig c;
  const ModelParams a = init_params(c, 3), b = init_params(c, 3);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, init_params(c, 4));
  for (double v : a.w1.data()) EXPECT_LE(std::abs(v), std::sqrt(6.0 / 30.0));
  for (double g : a.gamma) EXPECT_EQ(g, 1.0);
  for (double v : a.b6) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(a.w1.rows(), 16u);
  EXPECT_EQ(a.w2.rows(), 32u);
  EXPECT_EQ(a.w2.cols(), 64u);
  EXPECT_EQ(a.w6.rows(), 32u);
}

TEST(Pointwise, ZeroInputGivesBias) {
  const Tensor3 x(1, 3, 5);
  Matrix w(2, 3, 0.7);
  const std::vector<double> b = {0.25, -1.5};
  const Tensor3 h = pointwise_forward(x, w, b);
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_EQ(h(0, 0, t), 0.25);
    EXPECT_EQ(h(0, 1, t), -1.5);
  }
}

TEST(Pointwise, SelectorRowAndDotProductOracle) {
  const Tensor3 x = random_tensor(2, 3, 4, 11);
  Matrix w(2, 3);
  w(0, 2) = 1.0;
  const Tensor3 sel = pointwise_forward(x, w, std::vector<double>(2, 0.0));
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(sel(1, 0, t), x(1, 2, t));

  Rng rng(2);
  for (double& v : w.data()) v = rng.normal();
  const std::vector<double> b = {0.1, -0.2};
  const Tensor3 h = pointwise_forward(x, w, b);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t t = 0; t < 4; ++t) {
        double oracle = b[k];
        for (std::size_t p = 0; p < 3; ++p) oracle += w(k, p) * x(s, p, t);
        EXPECT_NEAR(h(s, k, t), oracle, 1e-12);
      }
}

TEST(Pointwise, LinearWithoutBias) {
  const Tensor3 x = random_tensor(1, 4, 6, 1), y = random_tensor(1, 4, 6, 2);
  Matrix w(3, 4);
  Rng rng(3);
  for (double& v : w.data()) v = rng.normal();
  const std::vector<double> zero(3, 0.0);
  Tensor3 combo(1, 4, 6);
  for (std::size_t k = 0; k < combo.size(); ++k) combo.data()[k] = 2.0 * x.data()[k] - 0.5 * y.data()[k];
  const Tensor3 fx = pointwise_forward(x, w, zero), fy = pointwise_forward(y, w, zero);
  const Tensor3 fc = pointwise_forward(combo, w, zero);
  for (std::size_t k = 0; k < fc.size(); ++k)
    EXPECT_NEAR(fc.data()[k], 2.0 * fx.data()[k] - 0.5 * fy.data()[k], 1e-5 * (1.0 + std::abs(fc.data()[k])));
}

TEST(Depthwise, DeltaKernelAndSlidingOracle) {
  const Tensor3 h1 = random_tensor(1, 1, 6, 4);
  Matrix delta(2, 3);
  delta(0, 0) = 1.0;
  delta(1, 0) = 1.0;
  const Tensor3 d = depthwise_forward(h1, delta, std::vector<double>(2, 0.0));
  ASSERT_EQ(d.dim2(), 4u);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(d(0, 0, t), h1(0, 0, t));

  Matrix w(2, 3);
  Rng rng(9);
  for (double& v : w.data()) v = rng.normal();
  const std::vector<double> b = {0.3, -0.4};
  const Tensor3 out = depthwise_forward(h1, w, b);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t t = 0; t < 4; ++t) {
      double oracle = b[i];
      for (std::size_t r = 0; r < 3; ++r) oracle += w(i, r) * h1(0, 0, t + r);
      EXPECT_NEAR(out(0, i, t), oracle, 1e-12);
    }
}

TEST(Depthwise, NodeDependsOnlyOnItsSourceChannel) {
  Tensor3 h1 = random_tensor(1, 4, 12, 5);
  Matrix w(8, 5);
  Rng rng(6);
  for (double& v : w.data()) v = rng.normal();
  const std::vector<double> b(8, 0.0);
  const Tensor3 before = depthwise_forward(h1, w, b);
  for (std::size_t t = 0; t < 12; ++t) h1(0, 2, t) += 10.0;
  const Tensor3 after = depthwise_forward(h1, w, b);
  for (std::size_t i = 0; i < 8; ++i) {
    const bool reads_channel_2 = i / 2 == 2;
    for (std::size_t t = 0; t < 8; ++t) {
      if (reads_channel_2) EXPECT_NE(after(0, i, t), before(0, i, t));
      else EXPECT_EQ(after(0, i, t), before(0, i, t));
    }
  }
}

TEST(Conv1d, MatchesMultiChannelOracle) {
  const Tensor3 x = random_tensor(2, 3, 7, 8);
  const std::size_t l = 3, maps = 4;
  Matrix w(maps, 3 * l);
  Rng rng(10);
  for (double& v : w.data()) v = rng.normal();
  const std::vector<double> b = {0.1, 0.2, 0.3, 0.4};
  const Tensor3 out = conv1d_forward(x, w, b, l);
  ASSERT_EQ(out.dim2(), 5u);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < maps; ++i)
      for (std::size_t t = 0; t < 5; ++t) {
        double oracle = b[i];
        for (std::size_t p = 0; p < 3; ++p)
          for (std::size_t r = 0; r < l; ++r) oracle += w(i, p * l + r) * x(s, p, t + r);
        EXPECT_NEAR(out(s, i, t), oracle, 1e-12);
      }
}

TEST(BatchNorm, ConstantInputGivesBeta) {
  const Tensor3 h(2, 2, 5, 3.0);
  const std::vector<double> gamma = {2.0, 0.5}, beta = {0.7, -0.3};
  const auto r = batchnorm_forward(h, gamma, beta, 1e-5);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 5; ++t) {
      EXPECT_NEAR(r.out(b, 0, t), 0.7, 1e-12);
      EXPECT_NEAR(r.out(b, 1, t), -0.3, 1e-12);
    }
}

TEST(BatchNorm, OutputIsStandardised) {
  Tensor3 h = random_tensor(3, 4, 50, 12, 3.0);
  for (double& v : h.data()) v += 5.0;
  const auto r = batchnorm_forward(h, std::vector<double>(4, 1.0), std::vector<double>(4, 0.0), 1e-5);
  const BnStats s = batch_statistics(r.out);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(s.mean[i], 0.0, 1e-6);
    EXPECT_NEAR(s.var[i], 1.0, 1e-3);
  }
}

TEST(BatchNorm, StandardInputIsNearlyUnchanged) {
  Tensor3 h = random_tensor(1, 1, 200, 13);
  const BnStats s0 = batch_statistics(h);
  for (double& v : h.data()) v = (v - s0.mean[0]) / std::sqrt(s0.var[0]);
  const std::vector<double> gamma{1.0}, beta{0.0};
  const auto r = batchnorm_forward(h, gamma, beta, 1e-5);
  for (std::size_t t = 0; t < 200; ++t) EXPECT_NEAR(r.out(0, 0, t), h(0, 0, t), 1e-4);
}

TEST(Head, PoolingAndSoftmax) {
  Tensor3 h4(1, 2, 4);
  for (std::size_t t = 0; t < 4; ++t) h4(0, 0, t) = 1.5, h4(0, 1, t) = static_cast<double>(t);
  Matrix w6(2, 2);
  const HeadResult r = head_forward(h4, w6, std::vector<double>(2, 0.0));
  EXPECT_DOUBLE_EQ(r.h5(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(r.h5(0, 1), 1.5);
  EXPECT_DOUBLE_EQ(r.h7(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(r.h7(0, 1), 0.5);

  for (auto [a, b] : {std::pair{3.0, -1.0}, {800.0, 799.0}, {-50.0, 20.0}}) {
    const auto s = softmax2(a, b);
    const double m = std::max(a, b);
    const double oracle0 = std::exp(a - m) / (std::exp(a - m) + std::exp(b - m));
    EXPECT_NEAR(s[0], oracle0, 1e-15);
    EXPECT_NEAR(s[0] + s[1], 1.0, 1e-12);
  }
}

TEST(Forward, ShapeChainOfTheFullModel) {
  const ModelConfig c;
  const ModelParams p = init_params(c, 1);
  const Tensor3 x = random_tensor(1, 30, 384, 1, 10.0);
  const ForwardCache f = forward(x, p, c);
  EXPECT_EQ(f.h1.dim1(), 16u);
  EXPECT_EQ(f.h1.dim2(), 384u);
  EXPECT_EQ(f.h2.dim1(), 32u);
  EXPECT_EQ(f.h2.dim2(), 321u);
  EXPECT_EQ(f.h4.dim1(), 32u);
  EXPECT_EQ(f.h4.dim2(), 321u);
  EXPECT_EQ(f.h5.cols(), 32u);
  EXPECT_EQ(f.h7.cols(), 2u);
  EXPECT_NEAR(f.h7(0, 0) + f.h7(0, 1), 1.0, 1e-6);
  for (std::size_t k = 0; k < f.h2.size(); ++k) EXPECT_EQ(f.h3.data()[k], std::max(f.h2.data()[k], 0.0));
}

TEST(Forward, MatchesNaiveOracle) {
  const ModelConfig c = tiny_config();
  ModelParams p = ModelParams::zeros(c);
  randomize(p, 21);
  const Tensor3 x = random_tensor(4, 3, 10, 22);
  const ForwardCache f = forward(x, p, c);
  const Matrix oracle = naive_full_likelihoods(x, p, c);
  for (std::size_t k = 0; k < oracle.size(); ++k) EXPECT_NEAR(f.h7.data()[k], oracle.data()[k], 1e-12);
}

TEST(Forward, ZeroWeightsGiveEvenOdds) {
  const ModelConfig c;
  const ModelParams p = ModelParams::zeros(c);
  const ForwardCache f = forward(random_tensor(2, 30, 384, 3), p, c);
  for (double v : f.h7.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Forward, EveryVariantRunsAndIsBitStable) {
  for (Variant v : kAllVariants) {
    const ModelConfig c = tiny_config(v);
    ModelParams p = ModelParams::zeros(c);
    randomize(p, 31);
    const Tensor3 x = random_tensor(1, 3, 10, 32);
    const ForwardCache a = forward(x, p, c), b = forward(x, p, c);
    EXPECT_EQ(a.h7, b.h7) << to_string(v);
    EXPECT_EQ(a.h4.dim1(), c.feature_maps()) << to_string(v);
    EXPECT_EQ(a.h4.dim2(), c.feature_length()) << to_string(v);
    for (double q : a.h7.data()) {
      EXPECT_GT(q, 0.0);
      EXPECT_LT(q, 1.0);
    }
  }
}

TEST(Forward, NoBatchNormPassesActivationsThrough) {
  const ModelConfig c = tiny_config(Variant::kNoBatchNorm);
  ModelParams p = ModelParams::zeros(c);
  randomize(p, 41);
  const ForwardCache f = forward(random_tensor(2, 3, 10, 42), p, c);
  EXPECT_EQ(f.h4.data(), f.h3.data());
}

TEST(PopulationStatistics, EqualBatchStatisticsForAnyChunking) {
  const ModelConfig c = tiny_config();
  ModelParams p = ModelParams::zeros(c);
  randomize(p, 51);
  const Tensor3 x = random_tensor(23, 3, 10, 52);
  const BnStats whole = forward(x, p, c).stats;
  for (std::size_t chunk : {1u, 4u, 7u, 23u, 64u}) {
    const BnStats s = population_statistics(x, p, c, chunk);
    for (std::size_t i = 0; i < whole.mean.size(); ++i) {
      EXPECT_NEAR(s.mean[i], whole.mean[i], 1e-12);
      EXPECT_NEAR(s.var[i], whole.var[i], 1e-12);
    }
  }
}

TEST(Forward, FixedStatisticsDecoupleSamples) {
  const ModelConfig c = tiny_config();
  ModelParams p = ModelParams::zeros(c);
  randomize(p, 61);
  const Tensor3 x = random_tensor(6, 3, 10, 62);
  const BnStats stats = population_statistics(x, p, c);
  const ForwardCache whole = forward(x, p, c, &stats);
  EXPECT_FALSE(whole.stats_from_batch);
  Tensor3 one(1, 3, 10);
  std::copy(x.data().begin() + 30, x.data().begin() + 60, one.data().begin());
  const ForwardCache single = forward(one, p, c, &stats);
  EXPECT_NEAR(single.h7(0, 1), whole.h7(1, 1), 1e-12);
  // Without context a lone sample is normalised by its own statistics.
  const ForwardCache own = forward(one, p, c);
  EXPECT_TRUE(own.stats_from_batch);
}

TEST(Checkpoint, RoundTripStoresSinglePrecision) {
  const ModelConfig c = tiny_config(Variant::kConv1d);
  ModelParams p = ModelParams::zeros(c);
  randomize(p, 71);
  const Checkpoint ck{c, p, 99, 7};
  const auto bytes = encode_checkpoint(ck);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "EEGW");
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back.config, c);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.epoch, 7);
  std::vector<double> a, b;
  p.for_each([&](const char*, std::span<const double> t) { a.insert(a.end(), t.begin(), t.end()); });
  back.params.for_each([&](const char*, std::span<const double> t) { b.insert(b.end(), t.begin(), t.end()); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(b[k], static_cast<double>(static_cast<float>(a[k])));
  EXPECT_EQ(encode_checkpoint(back), bytes);

  auto broken = bytes;
  broken[0] = 'X';
  EXPECT_THROW(decode_checkpoint(broken), DataError);
  broken = bytes;
  broken.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(broken), DataError);
}

TEST(Checkpoint, ConfigJson) {
  const ModelConfig c = config_from_json(R"({"N1": 8, "l": 32, "variant": "no_pointwise"})");
  EXPECT_EQ(c.spatial_filters, 8u);
  EXPECT_EQ(c.kernel_length, 32u);
  EXPECT_EQ(c.variant, Variant::kNoPointwise);
  EXPECT_EQ(config_from_json(config_to_json(c)), c);
  EXPECT_THROW(config_from_json("{"), UsageError);
  EXPECT_THROW(config_from_json(R"({"l": 1000})"), UsageError);
}
