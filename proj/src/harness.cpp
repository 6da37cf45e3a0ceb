#include "drowsy/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "drowsy/training.hpp"

namespace drowsy {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<int> labels_of(std::span<const EegSample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(to_int(s.label));
  return out;
}

// Predictions for a whole test set, normalised with that set's statistics.
std::vector<int> predict_population(const Tensor3& x, const ModelParams& params,
                                    const ModelConfig& config) {
  constexpr std::size_t kChunk = 64;
  const BnStats stats = population_statistics(x, params, config, kChunk);
  std::vector<int> out;
  out.reserve(x.dim0());
  const std::size_t per = x.dim1() * x.dim2();
  for (std::size_t start = 0; start < x.dim0(); start += kChunk) {
    const std::size_t len = std::min(kChunk, x.dim0() - start);
    Tensor3 part(len, x.dim1(), x.dim2());
    std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(start * per),
              x.data().begin() + static_cast<std::ptrdiff_t>((start + len) * per), part.data().begin());
    const auto pred = predict_classes(forward(part, params, config, &stats));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

// Runs `job(k)` for k in [0, count) on up to `threads` workers. The first
// exception (by job index) is rethrown after all workers finish.
void run_jobs(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& job) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  std::vector<std::exception_ptr> errors(count);
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) job(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t k; (k = next.fetch_add(1)) < count;) {
        try {
          job(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void audit_training_set(const DatasetBundle& train, int held_out) {
  for (const auto& s : train.samples)
    if (s.subject_id == held_out)
      throw DataError("audit: training set contains held-out subject " + std::to_string(held_out));
}

struct LosoJob {
  int repeat;
  int subject;
};

EvalReport run_loso(const std::string& protocol, const DatasetBundle& train_source,
                    const DatasetBundle& test_source, const ModelConfig& config,
                    const EvalOptions& options) {
  config.validate();
  if (options.epochs < 1) throw UsageError("epochs must be at least 1");
  if (options.repeats < 1) throw UsageError("repeats must be at least 1");
  const std::vector<int> subjects = train_source.subjects();
  if (subjects.size() < 2) throw DataError("LOSO needs at least two subjects");

  std::vector<LosoJob> jobs;
  for (int r = 0; r < options.repeats; ++r)
    for (int s : subjects) jobs.push_back({r, s});
  std::vector<std::vector<FoldResult>> results(jobs.size());
  std::mutex callback_mutex;

  run_jobs(jobs.size(), options.threads, [&](std::size_t k) {
    const LosoJob job = jobs[k];
    DatasetBundle train = loso_split(train_source, job.subject).train;
    const DatasetBundle test = loso_split(test_source, job.subject).test;
    audit_training_set(train, job.subject);
    if (test.samples.empty())
      throw DataError("held-out subject " + std::to_string(job.subject) + " has no test samples");
    const Tensor3 x_test = stack_signals(test.samples);
    const std::vector<int> y_test = labels_of(test.samples);

    TrainOptions topt;
    topt.epochs = options.epochs;
    topt.seed = fold_seed(options.seed, job.repeat, job.subject);
    topt.batch_size = options.batch_size;
    auto& out = results[k];
    const FitResult fitted = fit(train, config, topt, [&](int epoch, const ModelParams& params) {
      out.push_back({job.subject, job.repeat, epoch, metrics(predict_population(x_test, params, config), y_test)});
    });
    std::lock_guard lock(callback_mutex);
    if (options.on_fold_model) options.on_fold_model(job.repeat, job.subject, fitted.params);
    if (options.progress)
      options.progress(protocol + " " + to_string(config.variant) + " repeat " + std::to_string(job.repeat) +
                       " subject " + std::to_string(job.subject) + " done");
  });

  EvalReport report;
  report.protocol = protocol;
  report.variant = to_string(config.variant);
  for (auto& r : results) report.folds.insert(report.folds.end(), r.begin(), r.end());
  report.aggregates = aggregate(report.folds);
  return report;
}

}  // namespace

Metrics metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw ShapeError("metrics: length mismatch");
  if (labels.empty()) throw DataError("metrics: empty input");
  Metrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = predictions[i] == 1, truth = labels[i] == 1;
    if (pred && truth) ++m.tp;
    else if (pred) ++m.fp;
    else if (truth) ++m.fn;
    else ++m.tn;
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(labels.size());
  m.precision_undefined = m.tp + m.fp == 0;
  m.recall_undefined = m.tp + m.fn == 0;
  m.precision = m.precision_undefined ? kNaN : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  m.recall = m.recall_undefined ? kNaN : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  return m;
}

std::vector<EpochAggregate> aggregate(std::span<const FoldResult> folds) {
  std::map<int, std::vector<const FoldResult*>> by_epoch;
  for (const auto& f : folds) by_epoch[f.epoch].push_back(&f);
  std::vector<EpochAggregate> out;
  for (const auto& [epoch, group] : by_epoch) {
    EpochAggregate a;
    a.epoch = epoch;
    a.folds = group.size();
    const double n = static_cast<double>(group.size());
    double sum = 0.0;
    for (const auto* f : group) sum += f->metrics.accuracy;
    a.mean_accuracy = sum / n;
    if (group.size() > 1) {
      double ss = 0.0;
      for (const auto* f : group) ss += (f->metrics.accuracy - a.mean_accuracy) * (f->metrics.accuracy - a.mean_accuracy);
      a.stderr_accuracy = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    double ps = 0.0, rs = 0.0;
    std::size_t pn = 0, rn = 0;
    for (const auto* f : group) {
      if (!f->metrics.precision_undefined) ps += f->metrics.precision, ++pn;
      if (!f->metrics.recall_undefined) rs += f->metrics.recall, ++rn;
    }
    a.mean_precision = pn ? ps / static_cast<double>(pn) : kNaN;
    a.mean_recall = rn ? rs / static_cast<double>(rn) : kNaN;
    out.push_back(a);
  }
  return out;
}

const EpochAggregate& EvalReport::peak() const {
  if (aggregates.empty()) throw DataError("report has no aggregates");
  const EpochAggregate* best = &aggregates.front();
  for (const auto& a : aggregates)
    if (a.mean_accuracy > best->mean_accuracy) best = &a;
  return *best;
}

std::uint64_t fold_seed(std::uint64_t base, int repeat, int subject) {
  return derive_seed(base, {static_cast<std::uint64_t>(repeat), static_cast<std::uint64_t>(subject)});
}

EvalReport evaluate_loso_balanced(const DatasetBundle& bundle, const ModelConfig& config,
                                  const EvalOptions& options) {
  return run_loso("loso_balanced", bundle, bundle, config, options);
}

EvalReport evaluate_loso_unbalanced(const DatasetBundle& balanced, const DatasetBundle& unbalanced,
                                    const ModelConfig& config, const EvalOptions& options) {
  const auto a = balanced.subjects(), b = unbalanced.subjects();
  if (a != b) {
    std::string missing;
    for (int s : a)
      if (!std::binary_search(b.begin(), b.end(), s)) missing += " " + std::to_string(s);
    for (int s : b)
      if (!std::binary_search(a.begin(), a.end(), s)) missing += " " + std::to_string(s);
    throw DataError("balanced and unbalanced bundles differ in subjects:" + missing);
  }
  return run_loso("loso_unbalanced", balanced, unbalanced, config, options);
}

EvalReport evaluate_baseline(const DatasetBundle& bundle, Extractor extractor, ClassifierKind kind,
                             unsigned threads, const ClassifierOptions& classifier) {
  const FeatureMatrix features = extract_features(bundle, extractor, threads);
  const std::vector<int> subjects = bundle.subjects();
  if (subjects.size() < 2) throw DataError("LOSO needs at least two subjects");
  EvalReport report;
  report.protocol = "baseline";
  report.variant = to_string(extractor) + "+" + to_string(kind);
  for (int held_out : subjects) {
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t r = 0; r < features.subjects.size(); ++r)
      (features.subjects[r] == held_out ? test_rows : train_rows).push_back(r);
    auto take = [&](const std::vector<std::size_t>& rows, Matrix& X, std::vector<int>& y) {
      X = Matrix(rows.size(), features.values.cols());
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto src = features.values.row(rows[k]);
        std::copy(src.begin(), src.end(), X.row(k).begin());
        y.push_back(features.labels[rows[k]]);
      }
    };
    Matrix X_train, X_test;
    std::vector<int> y_train, y_test;
    take(train_rows, X_train, y_train);
    take(test_rows, X_test, y_test);
    const auto model = fit_classifier(kind, X_train, y_train, classifier);
    report.folds.push_back({held_out, 0, 0, metrics(model->predict(X_test), y_test)});
  }
  report.aggregates = aggregate(report.folds);
  return report;
}

std::vector<EvalReport> evaluate_variants(const DatasetBundle& bundle, const ModelConfig& base,
                                          const EvalOptions& options) {
  std::vector<EvalReport> out;
  for (Variant v : kAllVariants) {
    ModelConfig config = base;
    config.variant = v;
    out.push_back(evaluate_loso_balanced(bundle, config, options));
  }
  return out;
}

}  // namespace drowsy
