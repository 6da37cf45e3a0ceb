#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "drowsy/baselines.hpp"
#include "drowsy/dataset.hpp"
#include "drowsy/model.hpp"

namespace drowsy {

/// Binary metrics with drowsy as the positive class. Precision or recall is
/// NaN (and flagged) when its denominator is zero.
struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  bool precision_undefined = false;
  bool recall_undefined = false;

  std::size_t total() const { return tp + fp + tn + fn; }
};

Metrics metrics(std::span<const int> predictions, std::span<const int> labels);

struct FoldResult {
  int subject = 0;
  int repeat = 0;
  int epoch = 0;  // 0 for protocols without epochs
  Metrics metrics;
};

struct EpochAggregate {
  int epoch = 0;
  std::size_t folds = 0;
  double mean_accuracy = 0.0;
  double stderr_accuracy = 0.0;  // sample SD over folds / sqrt(folds); 0 for one fold
  double mean_precision = 0.0;   // over folds where it is defined; NaN if none
  double mean_recall = 0.0;
};

struct EvalReport {
  std::string protocol;  // loso_balanced, loso_unbalanced, baseline
  std::string variant;   // model variant or "<extractor>+<classifier>"
  std::vector<FoldResult> folds;
  std::vector<EpochAggregate> aggregates;

  /// Aggregate with the highest mean accuracy (earliest epoch on ties).
  const EpochAggregate& peak() const;
};

/// Per-epoch mean and standard error over all folds, in ascending epoch order.
std::vector<EpochAggregate> aggregate(std::span<const FoldResult> folds);

/// Called once per trained fold model; calls are serialised.
using FoldModelCallback = std::function<void(int repeat, int subject, const ModelParams& params)>;

struct EvalOptions {
  int epochs = 11;
  int repeats = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::size_t batch_size = 50;
  FoldModelCallback on_fold_model;
  std::function<void(const std::string&)> progress;
};

/// Seed of the training run for one (repeat, held-out subject) fold.
std::uint64_t fold_seed(std::uint64_t base, int repeat, int subject);

/// Repeated LOSO on a balanced bundle, test accuracy after every epoch.
/// Batch norm at test time uses statistics of the whole held-out set.
EvalReport evaluate_loso_balanced(const DatasetBundle& bundle, const ModelConfig& config,
                                  const EvalOptions& options);

/// Trains on other subjects' balanced data, tests on the held-out subject's
/// unbalanced data. Both bundles must contain the same subjects.
EvalReport evaluate_loso_unbalanced(const DatasetBundle& balanced, const DatasetBundle& unbalanced,
                                    const ModelConfig& config, const EvalOptions& options);

/// Deterministic LOSO for a feature extractor and classifier pair.
EvalReport evaluate_baseline(const DatasetBundle& bundle, Extractor extractor, ClassifierKind kind,
                             unsigned threads = 1, const ClassifierOptions& classifier = {});

/// evaluate_loso_balanced for every architecture variant.
std::vector<EvalReport> evaluate_variants(const DatasetBundle& bundle, const ModelConfig& base,
                                          const EvalOptions& options);

/// CSV: protocol,variant,subject,repeat,epoch,acc,precision,recall,tp,fp,tn,fn
void write_report_csv(std::span<const EvalReport> reports, const std::filesystem::path& path);
std::string report_csv(std::span<const EvalReport> reports);
/// Per-epoch aggregates, peak epoch and per-subject means of every report.
void write_summary_json(std::span<const EvalReport> reports, const std::filesystem::path& path);

}  // namespace drowsy
