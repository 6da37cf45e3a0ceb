// Command-line front end: dataset plumbing, training, LOSO evaluation and
// heatmap interpretation. Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "drowsy/baselines.hpp"
#include "drowsy/dataset.hpp"
#include "drowsy/harness.hpp"
#include "drowsy/interpret.hpp"
#include "drowsy/model.hpp"
#include "drowsy/training.hpp"

namespace fs = std::filesystem;
using namespace drowsy;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string config_path;
  std::string out = ".";
  int epochs = 0;   // 0: command default
  int repeats = 0;  // 0: command default
  unsigned threads = 1;
};

ModelConfig load_config(const Globals& g) {
  if (g.config_path.empty()) return {};
  std::ifstream in(g.config_path);
  if (!in) throw UsageError("cannot read config " + g.config_path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

fs::path out_dir(const Globals& g) {
  fs::path p(g.out);
  fs::create_directories(p);
  return p;
}

DatasetBundle load_bundle(const std::string& path) {
  if (path.empty()) throw UsageError("a dataset path is required (--data)");
  return import_container(path);
}

EvalOptions eval_options(const Globals& g, int default_epochs, int default_repeats) {
  EvalOptions o;
  o.epochs = g.epochs > 0 ? g.epochs : default_epochs;
  o.repeats = g.repeats > 0 ? g.repeats : default_repeats;
  o.seed = g.seed;
  o.threads = g.threads;
  o.progress = [](const std::string& msg) { std::cerr << msg << '\n'; };
  return o;
}

void write_reports(const Globals& g, const std::vector<EvalReport>& reports) {
  const fs::path dir = out_dir(g);
  write_report_csv(reports, dir / "report.csv");
  write_summary_json(reports, dir / "summary.json");
  for (const auto& r : reports) {
    const auto& p = r.peak();
    std::printf("%s %s: peak mean accuracy %.4f +- %.4f at epoch %d\n", r.protocol.c_str(),
                r.variant.c_str(), p.mean_accuracy, p.stderr_accuracy, p.epoch);
  }
}

std::pair<std::size_t, std::size_t> parse_range(const std::string& text, std::size_t limit) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("--range expects START:END");
  std::size_t a = 0, b = 0;
  try {
    a = std::stoul(text.substr(0, colon));
    b = std::stoul(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("--range expects non-negative integers START:END");
  }
  if (a >= b || b > limit) throw UsageError("--range out of bounds for " + std::to_string(limit) + " samples");
  return {a, b};
}

int run(int argc, char** argv) {
  CLI::App app{"EEG drowsiness classification with an interpretable separable CNN"};
  app.require_subcommand(1);
  Globals g;
  auto add_globals = [&](CLI::App* a) {
    a->add_option("--seed", g.seed, "Base random seed");
    a->add_option("--config", g.config_path, "Model config JSON (m, n, N1, l, variant, bn_epsilon)");
    a->add_option("--out", g.out, "Output directory");
    a->add_option("--epochs", g.epochs, "Training epochs");
    a->add_option("--repeats", g.repeats, "LOSO repetitions");
    a->add_option("--threads", g.threads, "Worker threads");
  };
  add_globals(&app);

  // dataset
  auto* dataset = app.add_subcommand("dataset", "Import, export, synthesise or summarise datasets");
  dataset->require_subcommand(1);

  std::string signals, subject_index, states, kind = "unbalanced", input, output;
  auto* ds_import = dataset->add_subcommand("import", "Convert published arrays to a container");
  ds_import->add_option("--signals", signals, "Raw f32 signal file")->required();
  ds_import->add_option("--subjects", subject_index, "Subject index text file")->required();
  ds_import->add_option("--states", states, "State (label) text file")->required();
  ds_import->add_option("--kind", kind, "balanced | unbalanced");
  ds_import->add_option("--output", output, "Container path (default <out>/dataset.eegb)");
  add_globals(ds_import);

  auto* ds_export = dataset->add_subcommand("export", "Write raw arrays and metadata CSV from a container");
  ds_export->add_option("--data", input, "Container path")->required();
  add_globals(ds_export);

  std::size_t n_subjects = 4, per_class = 100;
  auto* ds_synth = dataset->add_subcommand("synth", "Generate the synthetic separable fixture");
  ds_synth->add_option("--subjects", n_subjects, "Number of subjects");
  ds_synth->add_option("--per-class", per_class, "Samples per class per subject");
  ds_synth->add_option("--output", output, "Container path (default <out>/synthetic.eegb)");
  add_globals(ds_synth);

  auto* ds_stats = dataset->add_subcommand("stats", "Per-subject class counts");
  ds_stats->add_option("--data", input, "Container path")->required();
  add_globals(ds_stats);

  // train
  std::string variant;
  auto* train = app.add_subcommand("train", "Train one model on a whole bundle");
  train->add_option("--data", input, "Container path")->required();
  train->add_option("--variant", variant, "full | conv1d | no_depthwise | no_pointwise | no_batchnorm");
  add_globals(train);

  // eval
  auto* eval = app.add_subcommand("eval", "Leave-one-subject-out evaluation");
  eval->require_subcommand(1);
  auto* ev_loso = eval->add_subcommand("loso", "Repeated LOSO on a balanced bundle");
  ev_loso->add_option("--data", input, "Balanced container")->required();
  ev_loso->add_option("--variant", variant, "Model variant");
  add_globals(ev_loso);

  std::string unbalanced_path;
  auto* ev_unbal = eval->add_subcommand("unbalanced", "Train balanced, test unbalanced");
  ev_unbal->add_option("--data", input, "Balanced container")->required();
  ev_unbal->add_option("--unbalanced", unbalanced_path, "Unbalanced container")->required();
  ev_unbal->add_option("--variant", variant, "Model variant");
  add_globals(ev_unbal);

  std::string extractor = "all", classifier = "all";
  auto* ev_base = eval->add_subcommand("baseline", "Feature extractor + classifier LOSO");
  ev_base->add_option("--data", input, "Container")->required();
  ev_base->add_option("--extractor", extractor,
                      "relative_power | log_power | power_ratio | wavelet_entropy | four_entropies | all");
  ev_base->add_option("--classifier", classifier, "gnb | lda | qda | lr | knn | all");
  add_globals(ev_base);

  auto* ev_var = eval->add_subcommand("variants", "Balanced LOSO for every architecture variant");
  ev_var->add_option("--data", input, "Balanced container")->required();
  add_globals(ev_var);

  // interpret
  std::string model_path, range, context = "subject";
  std::optional<std::size_t> sample;
  std::size_t top_n = 100;
  std::optional<double> sigma;
  auto* interp = app.add_subcommand("interpret", "Heatmaps (CSV, SVG, JSON) for selected samples");
  interp->add_option("--data", input, "Container")->required();
  interp->add_option("--model", model_path, "Checkpoint")->required();
  auto* opt_sample = interp->add_option("--sample", sample, "Sample index (0-based)");
  auto* opt_range = interp->add_option("--range", range, "Half-open index range START:END");
  opt_sample->excludes(opt_range);
  interp->add_option("--top-n", top_n, "Discriminative locations per sample");
  interp->add_option("--sigma", sigma, "Gaussian width in samples (default l/2)");
  interp->add_option("--context", context, "Batch-norm statistics: subject | sample")
      ->check(CLI::IsMember({"subject", "sample"}));
  add_globals(interp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (ds_import->parsed()) {
    const DatasetBundle b = import_published_arrays(signals, subject_index, states, bundle_kind_from_string(kind));
    const fs::path dest = output.empty() ? out_dir(g) / "dataset.eegb" : fs::path(output);
    export_container(b, dest);
    std::printf("imported %zu samples from %zu subjects to %s\n", b.samples.size(), b.subjects().size(),
                dest.string().c_str());
  } else if (ds_export->parsed()) {
    const DatasetBundle b = load_bundle(input);
    const fs::path dir = out_dir(g);
    export_published_arrays(b, dir);
    export_metadata_csv(b, dir / "metadata.csv");
    std::printf("exported %zu samples to %s\n", b.samples.size(), dir.string().c_str());
  } else if (ds_synth->parsed()) {
    if (n_subjects < 1 || per_class < 1) throw UsageError("--subjects and --per-class must be positive");
    const DatasetBundle b = synth_generate(n_subjects, per_class, g.seed);
    const fs::path dest = output.empty() ? out_dir(g) / "synthetic.eegb" : fs::path(output);
    export_container(b, dest);
    std::printf("wrote %zu synthetic samples to %s\n", b.samples.size(), dest.string().c_str());
  } else if (ds_stats->parsed()) {
    const DatasetBundle b = load_bundle(input);
    std::printf("kind %s, %zu samples\nsubject,alert,drowsy,total\n", to_string(b.kind).c_str(), b.samples.size());
    for (const auto& [subject, c] : b.per_subject_counts())
      std::printf("%d,%zu,%zu,%zu\n", subject, c.alert, c.drowsy, c.total());
  } else if (train->parsed()) {
    ModelConfig config = load_config(g);
    if (!variant.empty()) config.variant = variant_from_string(variant);
    const DatasetBundle b = load_bundle(input);
    TrainOptions opt;
    opt.epochs = g.epochs > 0 ? g.epochs : 11;
    opt.seed = g.seed;
    const FitResult r = fit(b, config, opt);
    const fs::path dir = out_dir(g);
    save_checkpoint({config, r.params, g.seed, opt.epochs}, dir / "model.eegw");
    write_train_report_csv(r.report, dir / "train_report.csv");
    const auto& last = r.report.epochs.back();
    std::printf("trained %d epochs: loss %.4f, training accuracy %.4f\n", last.epoch, last.loss, last.accuracy);
  } else if (ev_loso->parsed() || ev_unbal->parsed() || ev_var->parsed()) {
    ModelConfig config = load_config(g);
    if (!variant.empty()) config.variant = variant_from_string(variant);
    const DatasetBundle b = load_bundle(input);
    std::vector<EvalReport> reports;
    if (ev_loso->parsed()) {
      reports.push_back(evaluate_loso_balanced(b, config, eval_options(g, 11, 1)));
    } else if (ev_unbal->parsed()) {
      const DatasetBundle u = load_bundle(unbalanced_path);
      reports.push_back(evaluate_loso_unbalanced(b, u, config, eval_options(g, 11, 1)));
    } else {
      reports = evaluate_variants(b, config, eval_options(g, 11, 1));
    }
    write_reports(g, reports);
  } else if (ev_base->parsed()) {
    const DatasetBundle b = load_bundle(input);
    std::vector<Extractor> extractors;
    std::vector<ClassifierKind> classifiers;
    if (extractor == "all") extractors.assign(kAllExtractors.begin(), kAllExtractors.end());
    else extractors.push_back(extractor_from_string(extractor));
    if (classifier == "all") classifiers.assign(kAllClassifiers.begin(), kAllClassifiers.end());
    else classifiers.push_back(classifier_from_string(classifier));
    std::vector<EvalReport> reports;
    for (Extractor e : extractors)
      for (ClassifierKind k : classifiers) reports.push_back(evaluate_baseline(b, e, k, g.threads));
    write_reports(g, reports);
  } else if (interp->parsed()) {
    const DatasetBundle b = load_bundle(input);
    const Checkpoint ckpt = load_checkpoint(model_path);
    std::size_t first = 0, last = 0;
    if (sample) {
      if (*sample >= b.samples.size()) throw UsageError("--sample out of range");
      first = *sample;
      last = first + 1;
    } else if (!range.empty()) {
      std::tie(first, last) = parse_range(range, b.samples.size());
    } else {
      throw UsageError("interpret needs --sample or --range");
    }
    InterpretOptions opt;
    opt.top_n = top_n;
    opt.sigma = sigma;
    std::map<int, BnStats> subject_stats;
    const fs::path dir = out_dir(g);
    for (std::size_t k = first; k < last; ++k) {
      const EegSample& s = b.samples[k];
      const BnStats* ctx = nullptr;
      if (context == "subject") {
        auto it = subject_stats.find(s.subject_id);
        if (it == subject_stats.end()) {
          std::vector<std::size_t> idx;
          for (std::size_t i = 0; i < b.samples.size(); ++i)
            if (b.samples[i].subject_id == s.subject_id) idx.push_back(i);
          it = subject_stats
                   .emplace(s.subject_id, population_statistics(stack_signals(b.samples, idx), ckpt.params, ckpt.config))
                   .first;
        }
        ctx = &it->second;
      }
      const std::size_t one[] = {k};
      const Tensor3 x = stack_signals(b.samples, one);
      const Interpretation result = interpret_sample(x, ckpt.params, ckpt.config, ctx, opt);
      const HeatmapMetadata meta{s.subject_id, to_int(s.label), k};
      const std::string stem = "heatmap_" + std::to_string(k);
      write_heatmap_csv(result.heatmap, dir / (stem + ".csv"));
      write_heatmap_svg(result, x, 0, meta, dir / (stem + ".svg"));
      write_interpretation_json(result, meta, dir / (stem + ".json"));
      std::printf("sample %zu: class %d (p_drowsy %.3f)%s\n", k, result.predicted_class, result.likelihoods[1],
                  result.heatmap.degenerate ? ", degenerate heatmap" : "");
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
