#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <numbers>
#include <thread>

#include "drowsy/baselines.hpp"

namespace drowsy {

namespace {

constexpr double kFloor = 1e-12;

std::string channel_label(std::size_t c) {
  return c < kChannels ? std::string(channel_names()[c]) : "ch" + std::to_string(c + 1);
}

// Band powers of one PSD row in kBands order.
std::array<double, 4> bands_of(const PsdEstimate& psd, std::size_t c) {
  std::array<double, 4> out{};
  for (std::size_t b = 0; b < kBands.size(); ++b)
    out[b] = band_power(psd.frequencies, psd.power.row(c), kBands[b].lo_hz, kBands[b].hi_hz);
  return out;
}

std::vector<double> channel_series(const EegSample& sample, std::size_t c) {
  std::vector<double> s(sample.length);
  for (std::size_t t = 0; t < sample.length; ++t) s[t] = sample.at(c, t);
  return s;
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

bool matches(std::span<const double> x, std::size_t i, std::size_t j, std::size_t len, double r) {
  for (std::size_t k = 0; k < len; ++k)
    if (std::abs(x[i + k] - x[j + k]) > r) return false;
  return true;
}

}  // namespace

FeatureVector relative_power(const PsdEstimate& psd) {
  FeatureVector out;
  for (std::size_t c = 0; c < psd.power.rows(); ++c) {
    const auto p = bands_of(psd, c);
    const double total = p[0] + p[1] + p[2] + p[3];
    if (!(total > 0.0)) out.flags.push_back(channel_label(c) + ": zero band power, uniform shares");
    for (std::size_t b = 0; b < 4; ++b) {
      out.values.push_back(total > 0.0 ? p[b] / total : 0.25);
      out.schema.push_back(channel_label(c) + ":rel_" + kBands[b].name);
    }
  }
  return out;
}

FeatureVector log_power(const PsdEstimate& psd) {
  FeatureVector out;
  for (std::size_t c = 0; c < psd.power.rows(); ++c) {
    const auto p = bands_of(psd, c);
    for (std::size_t b = 0; b < 4; ++b) {
      out.values.push_back(std::log(p[b] + kFloor));
      out.schema.push_back(channel_label(c) + ":log_" + kBands[b].name);
    }
  }
  return out;
}

FeatureVector power_ratios(const PsdEstimate& psd) {
  static constexpr const char* kNames[] = {"theta_alpha_over_beta", "alpha_over_beta",
                                           "theta_alpha_over_alpha_beta", "theta_over_beta"};
  FeatureVector out;
  for (std::size_t c = 0; c < psd.power.rows(); ++c) {
    const auto p = bands_of(psd, c);
    const double theta = p[1], alpha = p[2], beta = p[3];
    const double r[4] = {(theta + alpha) / std::max(beta, kFloor), alpha / std::max(beta, kFloor),
                         (theta + alpha) / std::max(alpha + beta, kFloor),
                         theta / std::max(beta, kFloor)};
    for (std::size_t k = 0; k < 4; ++k) {
      out.values.push_back(r[k]);
      out.schema.push_back(channel_label(c) + ":" + kNames[k]);
    }
  }
  return out;
}

double mexican_hat(double t) {
  const double norm = 2.0 / (std::sqrt(3.0) * std::pow(std::numbers::pi, 0.25));
  return norm * (1.0 - t * t) * std::exp(-0.5 * t * t);
}

std::vector<double> mexican_hat_transform(std::span<const double> series, double scale) {
  if (!(scale > 0.0)) throw UsageError("mexican_hat_transform: scale must be positive");
  const auto K = static_cast<std::ptrdiff_t>(std::floor(8.0 * scale));
  std::vector<double> kernel(static_cast<std::size_t>(2 * K + 1));
  const double amp = 1.0 / std::sqrt(scale);
  for (std::ptrdiff_t k = -K; k <= K; ++k)
    kernel[static_cast<std::size_t>(k + K)] = amp * mexican_hat(static_cast<double>(k) / scale);

  const auto n = static_cast<std::ptrdiff_t>(series.size());
  std::vector<double> out(series.size(), 0.0);
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    double acc = 0.0;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(-K, t - (n - 1));
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(K, t);
    for (std::ptrdiff_t k = lo; k <= hi; ++k)
      acc += series[static_cast<std::size_t>(t - k)] * kernel[static_cast<std::size_t>(k + K)];
    out[static_cast<std::size_t>(t)] = acc;
  }
  return out;
}

double energy_entropy(std::span<const double> energies) {
  double total = 0.0;
  for (double e : energies) total += e;
  if (!(total > 0.0)) return 0.0;
  double h = 0.0;
  for (double e : energies) {
    if (e <= 0.0) continue;
    const double p = e / total;
    h -= p * std::log(p);
  }
  return h;
}

FeatureVector wavelet_entropy(const EegSample& sample) {
  FeatureVector out;
  std::vector<double> energies(kWaveletScales.size());
  for (std::size_t c = 0; c < sample.channels; ++c) {
    const auto series = channel_series(sample, c);
    for (std::size_t s = 0; s < kWaveletScales.size(); ++s) {
      double e = 0.0;
      for (double v : mexican_hat_transform(series, kWaveletScales[s])) e += v * v;
      energies[s] = e;
    }
    const double total = energies[0] + energies[1] + energies[2] + energies[3] + energies[4] +
                         energies[5] + energies[6];
    if (!(total > 0.0)) out.flags.push_back(channel_label(c) + ": zero signal, wavelet entropy 0");
    out.values.push_back(energy_entropy(energies));
    out.schema.push_back(channel_label(c) + ":wavelet_entropy");
  }
  return out;
}

double sample_entropy(std::span<const double> x, const EntropyParams& p) {
  const std::size_t N = x.size(), m = p.m;
  if (N <= m + 1) throw ShapeError("sample_entropy: series too short");
  const double r = p.r_factor * sample_sd(x);
  // Both template lengths use the same N - m starting points.
  const std::size_t count = N - m;
  double A = 0.0, B = 0.0;
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = i + 1; j < count; ++j) {
      if (!matches(x, i, j, m, r)) continue;
      B += 1.0;
      if (std::abs(x[i + m] - x[j + m]) <= r) A += 1.0;
    }
  const double pairs = static_cast<double>(count) * static_cast<double>(count - 1) / 2.0;
  // No matches at all: report the largest value the sample size can resolve.
  if (A == 0.0 || B == 0.0) return std::log(pairs);
  return std::log(B / A);
}

double approximate_entropy(std::span<const double> x, const EntropyParams& p) {
  const std::size_t N = x.size(), m = p.m;
  if (N <= m + 1) throw ShapeError("approximate_entropy: series too short");
  const double r = p.r_factor * sample_sd(x);
  auto phi = [&](std::size_t len) {
    const std::size_t count = N - len + 1;
    double sum = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t c = 0;
      for (std::size_t j = 0; j < count; ++j)
        if (matches(x, i, j, len, r)) ++c;
      sum += std::log(static_cast<double>(c) / static_cast<double>(count));
    }
    return sum / static_cast<double>(count);
  };
  return phi(m) - phi(m + 1);
}

double fuzzy_entropy(std::span<const double> x, const EntropyParams& p) {
  const std::size_t N = x.size(), m = p.m;
  if (N <= m + 1) throw ShapeError("fuzzy_entropy: series too short");
  const double r = p.r_factor * sample_sd(x);
  if (!(r > 0.0)) return 0.0;
  const std::size_t count = N - m;
  auto phi = [&](std::size_t len) {
    std::vector<double> means(count);
    for (std::size_t i = 0; i < count; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < len; ++k) s += x[i + k];
      means[i] = s / static_cast<double>(len);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = i + 1; j < count; ++j) {
        double d = 0.0;
        for (std::size_t k = 0; k < len; ++k)
          d = std::max(d, std::abs((x[i + k] - means[i]) - (x[j + k] - means[j])));
        sum += std::exp(-std::pow(d / r, p.fuzzy_power));
      }
    // Each unordered pair counts for both i and j.
    return 2.0 * sum / (static_cast<double>(count) * static_cast<double>(count - 1));
  };
  const double a = phi(m), b = phi(m + 1);
  if (!(a > 0.0) || !(b > 0.0)) throw NumericalError("fuzzy_entropy: vanishing similarity");
  return std::log(a) - std::log(b);
}

double spectral_entropy(std::span<const double> bins) {
  return energy_entropy(bins);
}

FeatureVector four_entropies(const EegSample& sample) {
  FeatureVector out;
  const std::vector<double> freqs = welch_frequencies();
  for (std::size_t c = 0; c < sample.channels; ++c) {
    const auto series = channel_series(sample, c);
    const auto psd = welch_density(series);
    std::vector<double> in_range;
    for (std::size_t k = 0; k < freqs.size(); ++k)
      if (freqs[k] >= 1.0 && freqs[k] <= 32.0) in_range.push_back(psd[k]);
    double total = 0.0;
    for (double v : in_range) total += v;
    if (!(total > 0.0)) out.flags.push_back(channel_label(c) + ": zero 1-32 Hz power, spectral entropy 0");

    const std::string ch = channel_label(c);
    out.values.push_back(sample_entropy(series));
    out.schema.push_back(ch + ":sample_entropy");
    out.values.push_back(fuzzy_entropy(series));
    out.schema.push_back(ch + ":fuzzy_entropy");
    out.values.push_back(approximate_entropy(series));
    out.schema.push_back(ch + ":approximate_entropy");
    out.values.push_back(spectral_entropy(in_range));
    out.schema.push_back(ch + ":spectral_entropy");
  }
  return out;
}

std::string to_string(Extractor e) {
  switch (e) {
    case Extractor::kRelativePower: return "relative_power";
    case Extractor::kLogPower: return "log_power";
    case Extractor::kPowerRatio: return "power_ratio";
    case Extractor::kWaveletEntropy: return "wavelet_entropy";
    case Extractor::kFourEntropies: return "four_entropies";
  }
  return "?";
}

Extractor extractor_from_string(const std::string& s) {
  for (Extractor e : kAllExtractors)
    if (to_string(e) == s) return e;
  throw UsageError("unknown feature extractor '" + s + "'");
}

FeatureVector extract(const EegSample& sample, Extractor extractor) {
  switch (extractor) {
    case Extractor::kRelativePower: return relative_power(welch_psd(sample));
    case Extractor::kLogPower: return log_power(welch_psd(sample));
    case Extractor::kPowerRatio: return power_ratios(welch_psd(sample));
    case Extractor::kWaveletEntropy: return wavelet_entropy(sample);
    case Extractor::kFourEntropies: return four_entropies(sample);
  }
  throw UsageError("unknown feature extractor");
}

void normalize_per_subject(Matrix& values, std::span<const int> subjects) {
  if (subjects.size() != values.rows()) throw ShapeError("normalize_per_subject: row count mismatch");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < subjects.size(); ++r) groups[subjects[r]].push_back(r);
  for (const auto& [subject, rows] : groups) {
    const double n = static_cast<double>(rows.size());
    for (std::size_t c = 0; c < values.cols(); ++c) {
      double mean = 0.0;
      for (std::size_t r : rows) mean += values(r, c);
      mean /= n;
      double var = 0.0;
      for (std::size_t r : rows) var += (values(r, c) - mean) * (values(r, c) - mean);
      const double sd = std::sqrt(var / n);
      for (std::size_t r : rows) values(r, c) = sd > 0.0 ? (values(r, c) - mean) / sd : 0.0;
    }
  }
}

FeatureMatrix extract_features(const DatasetBundle& bundle, Extractor extractor, unsigned threads) {
  const std::size_t n = bundle.samples.size();
  if (n == 0) throw DataError("extract_features: empty bundle");
  std::vector<FeatureVector> rows(n);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) rows[i] = extract(bundle.samples[i], extractor);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += threads) rows[i] = extract(bundle.samples[i], extractor);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  FeatureMatrix out;
  out.schema = rows[0].schema;
  out.values = Matrix(n, out.schema.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].values.size() != out.schema.size())
      throw ShapeError("extract_features: inconsistent feature length");
    std::copy(rows[i].values.begin(), rows[i].values.end(), out.values.row(i).begin());
    if (!rows[i].flags.empty()) ++out.flagged_samples;
    out.labels.push_back(static_cast<int>(bundle.samples[i].label));
    out.subjects.push_back(bundle.samples[i].subject_id);
  }
  if (extractor == Extractor::kFourEntropies) normalize_per_subject(out.values, out.subjects);
  for (double v : out.values.data())
    if (!std::isfinite(v)) throw NumericalError("extract_features: non-finite feature value");
  return out;
}

void write_feature_csv(const FeatureMatrix& features, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "subject,label";
  for (const auto& s : features.schema) out << ',' << s;
  out << '\n';
  char buf[40];
  for (std::size_t r = 0; r < features.values.rows(); ++r) {
    out << features.subjects[r] << ',' << features.labels[r];
    for (double v : features.values.row(r)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace drowsy
