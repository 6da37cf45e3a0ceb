#include <algorithm>
#include <cmath>
#include <numbers>

#include "drowsy/dataset.hpp"

namespace drowsy {

namespace {

constexpr std::array<std::size_t, 9> kCentral = {8, 9, 10, 13, 14, 15, 18, 19, 20};
constexpr std::array<std::size_t, 10> kPeripheral = {2, 6, 7, 11, 12, 16, 17, 21, 22, 26};
constexpr std::array<std::size_t, 2> kFrontal = {0, 1};

constexpr double kBackgroundUv = 8.0;
constexpr std::size_t kWarmup = 256;

// Pink noise by Paul Kellet's filter bank, rescaled to unit RMS.
std::vector<double> pink_noise(Rng& rng, std::size_t n) {
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n + kWarmup; ++k) {
    const double white = rng.normal();
    b0 = 0.99886 * b0 + white * 0.0555179;
    b1 = 0.99332 * b1 + white * 0.0750759;
    b2 = 0.96900 * b2 + white * 0.1538520;
    b3 = 0.86650 * b3 + white * 0.3104856;
    b4 = 0.55000 * b4 + white * 0.5329522;
    b5 = -0.7616 * b5 - white * 0.0168980;
    const double v = b0 + b1 + b2 + b3 + b4 + b5 + b6 + white * 0.5362;
    b6 = white * 0.115926;
    if (k >= kWarmup) out[k - kWarmup] = v;
  }
  double mean = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double& v : out) {
    v -= mean;
    ss += v * v;
  }
  const double rms = std::sqrt(ss / static_cast<double>(n));
  if (rms > 0.0)
    for (double& v : out) v /= rms;
  return out;
}

}  // namespace

std::span<const std::size_t> synth_central_channels() { return kCentral; }
std::span<const std::size_t> synth_peripheral_channels() { return kPeripheral; }

void inject_spindle(EegSample& sample, std::size_t channel, std::size_t onset, std::size_t duration,
                    double amplitude_uv, double freq_hz) {
  if (channel >= sample.channels || onset + duration > sample.length || duration < 2)
    throw ShapeError("inject_spindle: burst outside the sample");
  for (std::size_t k = 0; k < duration; ++k) {
    const double env =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) /
                             static_cast<double>(duration - 1));
    const double t = static_cast<double>(k) / kSampleRateHz;
    sample.signal[channel * sample.length + onset + k] +=
        static_cast<float>(amplitude_uv * env * std::sin(2.0 * std::numbers::pi * freq_hz * t));
  }
}

SyntheticBundle synth_generate_annotated(std::size_t n_subjects, std::size_t n_per_class,
                                         std::uint64_t seed) {
  if (n_subjects < 2) throw UsageError("synth_generate: need at least 2 subjects");
  if (n_per_class < 10) throw UsageError("synth_generate: need at least 10 samples per class");

  SyntheticBundle out;
  out.bundle.kind = BundleKind::kSynthetic;
  const std::size_t n = kSamplesPerWindow;

  for (std::size_t subj = 0; subj < n_subjects; ++subj) {
    Rng rng(derive_seed(seed, {subj}));
    std::array<double, kChannels> gain{};
    for (double& g : gain) g = rng.uniform(0.7, 1.3);

    // Classes interleaved so that any prefix of a subject is roughly balanced.
    for (std::size_t k = 0; k < 2 * n_per_class; ++k) {
      EegSample s;
      s.subject_id = static_cast<int>(subj + 1);
      s.label = (k % 2 == 0) ? Label::kAlert : Label::kDrowsy;
      s.signal.assign(kChannels * n, 0.0f);
      for (std::size_t ch = 0; ch < kChannels; ++ch) {
        const auto noise = pink_noise(rng, n);
        for (std::size_t t = 0; t < n; ++t)
          s.signal[ch * n + t] = static_cast<float>(kBackgroundUv * gain[ch] * noise[t]);
      }

      SynthAnnotation note;
      if (s.label == Label::kDrowsy) {
        const std::size_t ch = kCentral[rng.below(kCentral.size())];
        const auto duration = static_cast<std::size_t>(std::lround(rng.uniform(0.5, 1.0) * kSampleRateHz));
        const std::size_t onset = rng.below(n - duration + 1);
        const double amp = rng.uniform(25.0, 35.0) * gain[ch];
        inject_spindle(s, ch, onset, duration, amp, rng.uniform(9.5, 10.5));
        note.spindle_channel = static_cast<int>(ch);
        s.local_rt = rng.uniform(1.5, 3.0);
      } else {
        const std::size_t n_beta = 2 + rng.below(3);
        for (std::size_t b = 0; b < n_beta; ++b) {
          const std::size_t ch = kPeripheral[rng.below(kPeripheral.size())];
          const double f = rng.uniform(20.0, 25.0);
          const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
          const double amp = rng.uniform(5.0, 8.0) * gain[ch];
          for (std::size_t t = 0; t < n; ++t)
            s.signal[ch * n + t] += static_cast<float>(
                amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) / kSampleRateHz +
                               phase));
        }
        if (rng.uniform() < 0.3) {
          const double center = rng.uniform(0.0, static_cast<double>(n));
          const double width = 0.2 * kSampleRateHz;
          const double amp = rng.uniform(30.0, 50.0);
          for (std::size_t ch : kFrontal)
            for (std::size_t t = 0; t < n; ++t) {
              const double z = (static_cast<double>(t) - center) / width;
              s.signal[ch * n + t] += static_cast<float>(amp * gain[ch] * std::exp(-0.5 * z * z));
            }
        }
        s.local_rt = rng.uniform(0.4, 0.8);
      }
      out.bundle.samples.push_back(std::move(s));
      out.annotations.push_back(note);
    }
  }
  return out;
}

DatasetBundle synth_generate(std::size_t n_subjects, std::size_t n_per_class, std::uint64_t seed) {
  return synth_generate_annotated(n_subjects, n_per_class, seed).bundle;
}

}  // namespace drowsy
