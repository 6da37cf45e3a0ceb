#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "drowsy/common.hpp"
#include "drowsy/dataset.hpp"

namespace drowsy {

// ---------------------------------------------------------------------------
// Spectral estimation

struct WelchOptions {
  std::size_t segment_length = 128;
  std::size_t overlap = 64;
  double sample_rate_hz = kSampleRateHz;
};

struct PsdEstimate {
  std::vector<double> frequencies;  // Hz, ascending
  Matrix power;                     // channels x frequencies, one-sided density
};

/// Welch density of one series: periodic Hann segments, mean removed per
/// segment, averaged over segments.
std::vector<double> welch_density(std::span<const double> series, const WelchOptions& options = {});
std::vector<double> welch_frequencies(const WelchOptions& options = {});

PsdEstimate welch_psd(const EegSample& sample, const WelchOptions& options = {});

struct Band {
  const char* name;
  double lo_hz;
  double hi_hz;
};

inline constexpr std::array<Band, 4> kBands = {
    Band{"delta", 1.0, 4.0}, Band{"theta", 4.0, 8.0}, Band{"alpha", 8.0, 12.0},
    Band{"beta", 12.0, 30.0}};

/// Trapezoidal integral of `density` over bins with lo <= f <= hi.
double band_power(std::span<const double> frequencies, std::span<const double> density, double lo_hz,
                  double hi_hz);

// ---------------------------------------------------------------------------
// Feature extractors

struct FeatureVector {
  std::vector<double> values;
  std::vector<std::string> schema;  // "<channel>:<feature>" per value
  std::vector<std::string> flags;   // degenerate-input notes, empty when clean
};

FeatureVector relative_power(const PsdEstimate& psd);
FeatureVector log_power(const PsdEstimate& psd);
FeatureVector power_ratios(const PsdEstimate& psd);

inline constexpr std::array<double, 7> kWaveletScales = {0.5, 1, 2, 4, 8, 16, 32};

/// Mexican-hat mother wavelet, unit L2 norm.
double mexican_hat(double t);
/// "Same"-length wavelet coefficients at `scale`, support |k| <= 8 * scale.
std::vector<double> mexican_hat_transform(std::span<const double> series, double scale);
/// Shannon entropy (nats) of energies normalised to a distribution. Returns
/// 0 when all energies are zero.
double energy_entropy(std::span<const double> energies);

FeatureVector wavelet_entropy(const EegSample& sample);

struct EntropyParams {
  std::size_t m = 2;
  double r_factor = 0.2;  // r = r_factor * SD
  double fuzzy_power = 2.0;
};

double sample_entropy(std::span<const double> series, const EntropyParams& p = {});
double approximate_entropy(std::span<const double> series, const EntropyParams& p = {});
double fuzzy_entropy(std::span<const double> series, const EntropyParams& p = {});
/// Shannon entropy of a non-negative spectrum normalised to sum 1.
double spectral_entropy(std::span<const double> bins);

/// Per channel: sample, fuzzy, approximate and spectral entropy (1-32 Hz).
FeatureVector four_entropies(const EegSample& sample);

enum class Extractor { kRelativePower, kLogPower, kPowerRatio, kWaveletEntropy, kFourEntropies };
inline constexpr std::array<Extractor, 5> kAllExtractors = {
    Extractor::kRelativePower, Extractor::kLogPower, Extractor::kPowerRatio,
    Extractor::kWaveletEntropy, Extractor::kFourEntropies};
std::string to_string(Extractor e);
Extractor extractor_from_string(const std::string& s);

struct FeatureMatrix {
  Matrix values;  // samples x features
  std::vector<std::string> schema;
  std::vector<int> labels;
  std::vector<int> subjects;
  std::size_t flagged_samples = 0;
};

FeatureVector extract(const EegSample& sample, Extractor extractor);

/// Extracts every sample; FourEntropies features are then z-normalised per
/// subject, using that subject's own samples.
FeatureMatrix extract_features(const DatasetBundle& bundle, Extractor extractor,
                               unsigned threads = 1);

/// In-place z-score of every column within each subject group.
void normalize_per_subject(Matrix& values, std::span<const int> subjects);

/// CSV with a schema header row, then subject,label,features.
void write_feature_csv(const FeatureMatrix& features, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Classifiers

enum class ClassifierKind { kGnb, kLda, kQda, kLr, kKnn };
inline constexpr std::array<ClassifierKind, 5> kAllClassifiers = {
    ClassifierKind::kGnb, ClassifierKind::kLda, ClassifierKind::kQda, ClassifierKind::kLr,
    ClassifierKind::kKnn};
std::string to_string(ClassifierKind k);
ClassifierKind classifier_from_string(const std::string& s);

struct ClassifierOptions {
  std::size_t knn_k = 5;
  double ridge = 1e-6;
  double lr_lambda = 1.0;
  double lr_tolerance = 1e-6;
  int lr_max_iterations = 500;
  double gnb_var_smoothing = 1e-9;
};

/// A fitted binary classifier over labels {0, 1}.
class ClassifierModel {
 public:
  virtual ~ClassifierModel() = default;
  virtual ClassifierKind kind() const = 0;
  virtual std::size_t feature_count() const = 0;
  std::vector<int> predict(const Matrix& features) const;

 protected:
  virtual int predict_row(std::span<const double> x) const = 0;
};

std::unique_ptr<ClassifierModel> fit_classifier(ClassifierKind kind, const Matrix& features,
                                                std::span<const int> labels,
                                                const ClassifierOptions& options = {});

}  // namespace drowsy
