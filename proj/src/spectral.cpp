#include <cmath>
#include <complex>
#include <numbers>
#include <unsupported/Eigen/FFT>

#include "drowsy/baselines.hpp"

namespace drowsy {

namespace {

std::vector<double> periodic_hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k)
    w[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
  return w;
}

}  // namespace

std::vector<double> welch_frequencies(const WelchOptions& options) {
  const std::size_t bins = options.segment_length / 2 + 1;
  std::vector<double> f(bins);
  for (std::size_t k = 0; k < bins; ++k)
    f[k] = static_cast<double>(k) * options.sample_rate_hz / static_cast<double>(options.segment_length);
  return f;
}

std::vector<double> welch_density(std::span<const double> series, const WelchOptions& options) {
  const std::size_t L = options.segment_length;
  if (L < 2 || options.overlap >= L) throw UsageError("welch: invalid segment configuration");
  if (series.size() < L) throw ShapeError("welch: series shorter than one segment");
  const std::size_t step = L - options.overlap;
  const std::size_t segments = 1 + (series.size() - L) / step;
  const std::vector<double> window = periodic_hann(L);
  double w2 = 0.0;
  for (double w : window) w2 += w * w;
  const double scale = 1.0 / (options.sample_rate_hz * w2);

  const std::size_t bins = L / 2 + 1;
  std::vector<double> psd(bins, 0.0);
  Eigen::FFT<double> fft;
  std::vector<double> seg(L);
  std::vector<std::complex<double>> spec;
  for (std::size_t s = 0; s < segments; ++s) {
    const auto chunk = series.subspan(s * step, L);
    double mean = 0.0;
    for (double v : chunk) mean += v;
    mean /= static_cast<double>(L);
    for (std::size_t k = 0; k < L; ++k) seg[k] = (chunk[k] - mean) * window[k];
    fft.fwd(spec, seg);
    for (std::size_t k = 0; k < bins; ++k) {
      double p = std::norm(spec[k]) * scale;
      // One-sided: fold negative frequencies except DC and (even-length) Nyquist.
      if (k != 0 && !(L % 2 == 0 && k == L / 2)) p *= 2.0;
      psd[k] += p;
    }
  }
  for (double& p : psd) p /= static_cast<double>(segments);
  return psd;
}

PsdEstimate welch_psd(const EegSample& sample, const WelchOptions& options) {
  if (sample.signal.size() != sample.channels * sample.length)
    throw ShapeError("welch_psd: signal size does not match channels x length");
  PsdEstimate out;
  out.frequencies = welch_frequencies(options);
  out.power = Matrix(sample.channels, out.frequencies.size());
  std::vector<double> series(sample.length);
  for (std::size_t c = 0; c < sample.channels; ++c) {
    for (std::size_t t = 0; t < sample.length; ++t) series[t] = sample.at(c, t);
    const auto d = welch_density(series, options);
    std::copy(d.begin(), d.end(), out.power.row(c).begin());
  }
  return out;
}

double band_power(std::span<const double> frequencies, std::span<const double> density, double lo_hz,
                  double hi_hz) {
  if (frequencies.size() != density.size()) throw ShapeError("band_power: length mismatch");
  double total = 0.0;
  bool have_prev = false;
  double pf = 0.0, pd = 0.0;
  for (std::size_t k = 0; k < frequencies.size(); ++k) {
    const double f = frequencies[k];
    if (f < lo_hz || f > hi_hz) continue;
    if (have_prev) total += 0.5 * (density[k] + pd) * (f - pf);
    pf = f;
    pd = density[k];
    have_prev = true;
  }
  return total;
}

}  // namespace drowsy
