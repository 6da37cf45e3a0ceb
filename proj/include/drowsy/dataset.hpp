#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "drowsy/common.hpp"

namespace drowsy {

enum class Label : std::uint8_t { kAlert = 0, kDrowsy = 1 };

inline int to_int(Label l) { return static_cast<int>(l); }

/// One lane-departure event with the EEG window that preceded it.
struct Trial {
  int subject_id = 0;
  int session_id = 0;
  std::vector<float> signal;  // kChannels x kSamplesPerWindow, channel-major, microvolts
  double local_rt = 0.0;      // seconds
  double global_rt = 0.0;     // seconds
};

/// A labelled EEG window. Signal is channel-major (`channels` rows of `length`).
struct EegSample {
  int subject_id = 0;
  Label label = Label::kAlert;
  std::size_t channels = kChannels;
  std::size_t length = kSamplesPerWindow;
  std::vector<float> signal;
  // Reaction time of the originating trial; NaN when unknown (e.g. imported data).
  double local_rt = std::numeric_limits<double>::quiet_NaN();
  int session_id = 0;

  float at(std::size_t ch, std::size_t t) const { return signal[ch * length + t]; }
  bool operator==(const EegSample&) const;
};

enum class BundleKind { kBalanced, kUnbalanced, kSynthetic };

std::string to_string(BundleKind kind);
BundleKind bundle_kind_from_string(const std::string& s);

struct ClassCounts {
  std::size_t alert = 0;
  std::size_t drowsy = 0;
  std::size_t total() const { return alert + drowsy; }
  bool operator==(const ClassCounts&) const = default;
};

struct DatasetBundle {
  std::vector<EegSample> samples;
  BundleKind kind = BundleKind::kUnbalanced;

  /// Per-subject (alert, drowsy) counts, recomputed from `samples`.
  std::map<int, ClassCounts> per_subject_counts() const;
  /// Subject ids in ascending order.
  std::vector<int> subjects() const;
  bool operator==(const DatasetBundle&) const = default;
};

/// Samples of one recording session after reaction-time labelling.
struct LabeledSession {
  int subject_id = 0;
  int session_id = 0;
  std::vector<EegSample> samples;
  std::size_t rejected_nonfinite = 0;

  ClassCounts counts() const;
};

/// 5th percentile of the local reaction times, linear interpolation between
/// order statistics (rank 0.05 * (N - 1)).
double alert_reaction_time(std::span<const double> local_rts);

/// Mean local RT over events whose onset lies in [t - window_s, t], including
/// the event itself, so early events use whatever prefix exists.
std::vector<double> global_reaction_times(std::span<const double> onsets_s,
                                          std::span<const double> local_rts,
                                          double window_s = 90.0);

/// Labels one session's trials. Alert iff both RTs < 1.5 alertRT, drowsy iff
/// both RTs > 2.5 alertRT; everything else is discarded.
LabeledSession label_by_reaction_time(std::span<const Trial> session);

/// Drops sessions with fewer than `min_per_class` samples of either class and
/// keeps, per subject, the session with the smallest class imbalance.
DatasetBundle filter_and_select_sessions(std::span<const LabeledSession> sessions,
                                         std::size_t min_per_class = 50);

/// Per subject, trims the majority class down to the minority count, keeping
/// the shortest-RT alert or the longest-RT drowsy samples.
DatasetBundle build_balanced(const DatasetBundle& unbalanced);

struct LosoSplit {
  DatasetBundle train;
  DatasetBundle test;
};

LosoSplit loso_split(const DatasetBundle& bundle, int held_out);

// ---------------------------------------------------------------------------
// Synthetic fixture

/// Indices (into channel_names()) that may carry drowsy spindles.
std::span<const std::size_t> synth_central_channels();
/// Indices that carry alert beta activity.
std::span<const std::size_t> synth_peripheral_channels();

struct SynthAnnotation {
  // Channel carrying the 10 Hz spindle for drowsy samples, -1 for alert ones.
  int spindle_channel = -1;
};

struct SyntheticBundle {
  DatasetBundle bundle;
  std::vector<SynthAnnotation> annotations;  // parallel to bundle.samples
};

SyntheticBundle synth_generate_annotated(std::size_t n_subjects, std::size_t n_per_class,
                                         std::uint64_t seed);
DatasetBundle synth_generate(std::size_t n_subjects, std::size_t n_per_class, std::uint64_t seed);

/// Adds a Hann-enveloped 10 Hz burst to one channel of `sample`.
void inject_spindle(EegSample& sample, std::size_t channel, std::size_t onset,
                    std::size_t duration, double amplitude_uv, double freq_hz = 10.0);

// ---------------------------------------------------------------------------
// "EEGB v1" container

class ContainerError : public DataError {
 public:
  using DataError::DataError;
};
class MagicError : public ContainerError {
 public:
  using ContainerError::ContainerError;
};
class TruncatedError : public ContainerError {
 public:
  using ContainerError::ContainerError;
};
class DimensionError : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

std::vector<std::uint8_t> encode_container(const DatasetBundle& bundle);
DatasetBundle decode_container(std::span<const std::uint8_t> bytes);

void export_container(const DatasetBundle& bundle, const std::filesystem::path& path);
DatasetBundle import_container(const std::filesystem::path& path);

/// Writes `subject,label,index` rows.
void export_metadata_csv(const DatasetBundle& bundle, const std::filesystem::path& path);

/// Adapter for the published arrays: a raw little-endian f32 file holding
/// S x 30 x 384 values, plus one integer per line for subject index and state.
DatasetBundle import_published_arrays(const std::filesystem::path& signals_f32,
                                      const std::filesystem::path& subject_index,
                                      const std::filesystem::path& states, BundleKind kind);

/// Inverse of import_published_arrays: writes signals.f32, subject_index.txt
/// and states.txt into `dir`.
void export_published_arrays(const DatasetBundle& bundle, const std::filesystem::path& dir);

/// Stacks samples into a batch x channels x length tensor.
Tensor3 stack_signals(std::span<const EegSample> samples);
Tensor3 stack_signals(std::span<const EegSample> samples, std::span<const std::size_t> indices);

}  // namespace drowsy
