#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "drowsy/interpret.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace drowsy;
using drowsy::testing::randomize;
using drowsy::testing::random_tensor;
using drowsy::testing::scratch_dir;
using drowsy::testing::tiny_config;

namespace {

double gaussian_sum_oracle(std::span<const TracedPoint> pts, std::size_t channel, double q, double sigma) {
  double s = 0.0;
  for (const auto& p : pts)
    if (p.channel == channel)
      s += std::exp(-(q - p.center) * (q - p.center) / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi));
  return s;
}

ModelConfig small_full() {
  ModelConfig c;
  c.channels = 6;
  c.length = 40;
  c.spatial_filters = 3;
  c.kernel_length = 7;
  return c;
}

}  // namespace

TEST(ActivationMap, ElementwiseProductAndSumIdentity) {
  const ModelConfig c = small_full();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelParams p = ModelParams::zeros(c);
    randomize(p, seed);
    const Tensor3 x = random_tensor(3, c.channels, c.length, seed + 100);
    const ForwardCache f = forward(x, p, c);
    for (std::size_t s = 0; s < 3; ++s)
      for (int cls : {0, 1}) {
        const ActivationMap m = class_activation_map(f, p, cls, s);
        double total = 0.0;
        for (std::size_t i = 0; i < m.values.rows(); ++i)
          for (std::size_t j = 0; j < m.values.cols(); ++j) {
            EXPECT_EQ(m.values(i, j), p.w6(i, static_cast<std::size_t>(cls)) * f.h4(s, i, j));
            total += m.values(i, j);
          }
        const double expected =
            static_cast<double>(c.feature_length()) * (f.h6(s, static_cast<std::size_t>(cls)) - p.b6[static_cast<std::size_t>(cls)]);
        EXPECT_NEAR(total, expected, 1e-9 * (1.0 + std::abs(expected)));
      }
  }
}

TEST(ActivationMap, ZeroDenseColumnGivesZeroMap) {
  const ModelConfig c = small_full();
  ModelParams p = ModelParams::zeros(c);
  randomize(p, 5);
  for (std::size_t i = 0; i < p.w6.rows(); ++i) p.w6(i, 1) = 0.0;
  const ForwardCache f = forward(random_tensor(1, c.channels, c.length, 6), p, c);
  const ActivationMap m = class_activation_map(f, p, 1);
  for (double v : m.values.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(class_activation_map(f, p, 2), UsageError);
}

TEST(TopLocations, TieRulesAndSortOracle) {
  ActivationMap single{Matrix(4, 5), 0};
  single.values(2, 3) = 0.8;
  const auto one = top_locations(single, 1);
  EXPECT_EQ(one[0].node, 2u);
  EXPECT_EQ(one[0].time, 3u);

  ActivationMap flat{Matrix(3, 4, 1.0), 0};
  const auto first = top_locations(flat, 6);
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_EQ(first[k].node, k / 4);
    EXPECT_EQ(first[k].time, k % 4);
  }

  ActivationMap rnd{Matrix(32, 50), 1};
  Rng rng(7);
  for (double& v : rnd.values.data()) v = std::round(rng.normal() * 20.0) / 20.0;  // forces ties
  std::vector<std::size_t> idx(rnd.values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return rnd.values.data()[a] > rnd.values.data()[b]; });
  const auto top = top_locations(rnd, 100);
  for (std::size_t k = 0; k < 100; ++k) {
    EXPECT_EQ(top[k].node * 50 + top[k].time, idx[k]);
    EXPECT_EQ(top[k].value, rnd.values.data()[idx[k]]);
  }
  EXPECT_THROW(top_locations(rnd, rnd.values.size() + 1), UsageError);
}

TEST(Trace, SingleChannelAlwaysWins) {
  ModelConfig c = small_full();
  c.channels = 1;
  ModelParams p = ModelParams::zeros(c);
  randomize(p, 8);
  const Tensor3 x = random_tensor(1, 1, c.length, 9);
  for (std::size_t i = 0; i < p.w2.rows(); ++i) EXPECT_EQ(trace_location(i, 4, x, 0, p).channel, 0u);
}

TEST(Trace, OnlyContributingChannel) {
  const ModelConfig c = small_full();
  ModelParams p = ModelParams::zeros(c);
  for (double& v : p.w1.data()) v = 0.5;
  for (double& v : p.w2.data()) v = 1.0;
  Tensor3 x(1, c.channels, c.length);
  for (std::size_t t = 0; t < c.length; ++t) x(0, 4, t) = 1.0;
  const TracedPoint tp = trace_location(3, 10, x, 0, p);
  EXPECT_EQ(tp.channel, 4u);
  EXPECT_DOUBLE_EQ(tp.center, 10 + (c.kernel_length - 1) / 2.0);
}

TEST(Trace, ExhaustiveOracleAndBounds) {
  const ModelConfig c = small_full();
  const std::size_t T = c.feature_length(), l = c.kernel_length;
  Rng pick(10);
  for (int trial = 0; trial < 200; ++trial) {
    ModelParams p = ModelParams::zeros(c);
    randomize(p, 1000 + static_cast<std::uint64_t>(trial));
    const Tensor3 x = random_tensor(2, c.channels, c.length, 2000 + static_cast<std::uint64_t>(trial));
    const std::size_t i = pick.below(p.w2.rows()), j = pick.below(T), s = pick.below(2);
    std::size_t best = 0;
    double best_v = -INFINITY;
    for (std::size_t q = 0; q < c.channels; ++q) {
      double conv = 0.0;
      for (std::size_t r = 0; r < l; ++r) conv += p.w2(i, r) * x(s, q, j + r);
      const double v = p.w1(i / 2, q) * conv;
      if (v > best_v) best_v = v, best = q;
    }
    const TracedPoint tp = trace_location(i, j, x, s, p);
    EXPECT_EQ(tp.channel, best);
    EXPECT_GE(tp.center, (l - 1) / 2.0);
    EXPECT_LE(tp.center, static_cast<double>(T - 1) + (l - 1) / 2.0);
  }
}

TEST(Heatmap, SingleGaussianPeaksOnItsChannel) {
  const std::vector<TracedPoint> pts = {{2, 191.5}};
  const Heatmap h = build_heatmap(pts, 30, 384, 32.0);
  EXPECT_FALSE(h.degenerate);
  EXPECT_DOUBLE_EQ(h.map(2, 191), 1.0);
  EXPECT_DOUBLE_EQ(h.map(2, 192), 1.0);
  EXPECT_DOUBLE_EQ(h.map(0, 0), -1.0);
  const auto best = std::max_element(h.channel_summary.begin(), h.channel_summary.end());
  EXPECT_EQ(best - h.channel_summary.begin(), 2);
}

TEST(Heatmap, SymmetricPairHasEqualMaxima) {
  const std::vector<TracedPoint> pts = {{1, 100.0}, {7, 100.0}};
  const Heatmap h = build_heatmap(pts, 30, 384);
  const auto row_max = [&](std::size_t r) {
    const auto row = h.map.row(r);
    return *std::max_element(row.begin(), row.end());
  };
  EXPECT_EQ(row_max(1), row_max(7));
  EXPECT_EQ(row_max(1), 1.0);
}

TEST(Heatmap, RandomPointsMatchGaussianSumOracle) {
  Rng rng(11);
  std::vector<TracedPoint> pts;
  for (int k = 0; k < 100; ++k) pts.push_back({rng.below(30), 31.5 + static_cast<double>(rng.below(321))});
  const Heatmap h = build_heatmap(pts, 30, 384, 32.0);
  for (std::size_t p = 0; p < 30; ++p)
    for (std::size_t q = 0; q < 384; ++q) {
      EXPECT_NEAR(h.raw(p, q), gaussian_sum_oracle(pts, p, static_cast<double>(q), 32.0), 1e-10);
      EXPECT_GE(h.map(p, q), -1.0);
      EXPECT_LE(h.map(p, q), 1.0);
    }
  EXPECT_EQ(*std::max_element(h.map.data().begin(), h.map.data().end()), 1.0);
}

TEST(Heatmap, NormalisationIgnoresPositiveRescaling) {
  std::vector<TracedPoint> pts = {{0, 50.0}, {3, 60.0}, {3, 200.0}};
  const Heatmap a = build_heatmap(pts, 5, 300, 10.0);
  // Doubling every Gaussian doubles the raw map.
  pts.insert(pts.end(), pts.begin(), pts.end());
  const Heatmap b = build_heatmap(pts, 5, 300, 10.0);
  for (std::size_t k = 0; k < a.map.size(); ++k) {
    EXPECT_NEAR(b.raw.data()[k], 2.0 * a.raw.data()[k], 1e-12);
    EXPECT_NEAR(b.map.data()[k], a.map.data()[k], 1e-12);
  }
}

TEST(InterpretSample, LikelihoodsMatchForwardAndDegenerateCase) {
  const ModelConfig c = small_full();
  ModelParams p = ModelParams::zeros(c);
  randomize(p, 12);
  const Tensor3 x = random_tensor(1, c.channels, c.length, 13);
  InterpretOptions opt;
  opt.top_n = 20;
  const Interpretation r = interpret_sample(x, p, c, nullptr, opt);
  const ForwardCache f = forward(x, p, c);
  EXPECT_EQ(r.likelihoods[0], f.h7(0, 0));
  EXPECT_EQ(r.likelihoods[1], f.h7(0, 1));
  EXPECT_EQ(r.locations.size(), 20u);
  EXPECT_DOUBLE_EQ(r.heatmap.sigma, c.kernel_length / 2.0);

  for (std::size_t i = 0; i < p.w6.rows(); ++i) p.w6(i, 0) = p.w6(i, 1) = 0.0;
  const Interpretation d = interpret_sample(x, p, c, nullptr, opt);
  EXPECT_TRUE(d.heatmap.degenerate);
  for (double v : d.heatmap.map.data()) EXPECT_EQ(v, -1.0);

  ModelConfig other = c;
  other.variant = Variant::kConv1d;
  EXPECT_THROW(interpret_sample(x, ModelParams::zeros(other), other), UsageError);
}

TEST(InterpretSample, ContextStatisticsReproduceBatchPredictions) {
  const ModelConfig c = small_full();
  ModelParams p = ModelParams::zeros(c);
  randomize(p, 14);
  const Tensor3 batch = random_tensor(5, c.channels, c.length, 15);
  const BnStats stats = population_statistics(batch, p, c);
  const ForwardCache whole = forward(batch, p, c);
  Tensor3 one(1, c.channels, c.length);
  const std::size_t per = c.channels * c.length;
  std::copy(batch.data().begin() + 2 * per, batch.data().begin() + 3 * per, one.data().begin());
  const Interpretation r = interpret_sample(one, p, c, &stats);
  EXPECT_NEAR(r.likelihoods[1], whole.h7(2, 1), 1e-12);
}

TEST(Export, CsvJsonAndSvg) {
  ModelConfig c;
  ModelParams p = init_params(c, 3);
  const Tensor3 x = random_tensor(1, 30, 384, 16, 5.0);
  const Interpretation r = interpret_sample(x, p, c);
  const auto dir = scratch_dir("export");
  const HeatmapMetadata meta{4, 1, 17};
  write_heatmap_csv(r.heatmap, dir / "h.csv");
  write_interpretation_json(r, meta, dir / "h.json");
  write_heatmap_svg(r, x, 0, meta, dir / "h.svg");

  std::ifstream csv(dir / "h.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 383);
  }
  EXPECT_EQ(rows, 30u);

  std::ifstream js(dir / "h.json");
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j["subject"], 4);
  EXPECT_EQ(j["index"], 17);
  EXPECT_EQ(j["top_locations"].size(), 100u);
  EXPECT_GE(j["top_locations"][0]["p"].get<int>(), 1);
  EXPECT_EQ(j["channel_summary"].size(), 30u);
  EXPECT_TRUE(j["channel_summary"].contains("CZ"));

  std::ifstream svg(dir / "h.svg");
  std::string head;
  std::getline(svg, head);
  EXPECT_EQ(head.rfind("<svg", 0), 0u);
}
