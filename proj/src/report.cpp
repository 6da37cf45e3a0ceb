#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "drowsy/harness.hpp"
#include "json.hpp"

namespace drowsy {

namespace {

std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::ordered_json real_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::string report_csv(std::span<const EvalReport> reports) {
  std::string out = "protocol,variant,subject,repeat,epoch,acc,precision,recall,tp,fp,tn,fn\n";
  for (const auto& r : reports)
    for (const auto& f : r.folds) {
      const Metrics& m = f.metrics;
      out += r.protocol + ',' + r.variant + ',' + std::to_string(f.subject) + ',' + std::to_string(f.repeat) +
             ',' + std::to_string(f.epoch) + ',' + fmt_real(m.accuracy) + ',' + fmt_real(m.precision) + ',' +
             fmt_real(m.recall) + ',' + std::to_string(m.tp) + ',' + std::to_string(m.fp) + ',' +
             std::to_string(m.tn) + ',' + std::to_string(m.fn) + '\n';
    }
  return out;
}

void write_report_csv(std::span<const EvalReport> reports, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << report_csv(reports);
}

void write_summary_json(std::span<const EvalReport> reports, const std::filesystem::path& path) {
  auto root = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["protocol"] = r.protocol;
    j["variant"] = r.variant;
    j["folds"] = r.folds.size();
    auto epochs = nlohmann::ordered_json::array();
    for (const auto& a : r.aggregates)
      epochs.push_back({{"epoch", a.epoch},
                        {"folds", a.folds},
                        {"mean_accuracy", real_or_null(a.mean_accuracy)},
                        {"stderr_accuracy", real_or_null(a.stderr_accuracy)},
                        {"mean_precision", real_or_null(a.mean_precision)},
                        {"mean_recall", real_or_null(a.mean_recall)}});
    j["epochs"] = epochs;
    if (!r.aggregates.empty()) {
      const auto& p = r.peak();
      j["peak"] = {{"epoch", p.epoch}, {"mean_accuracy", p.mean_accuracy}, {"stderr_accuracy", p.stderr_accuracy}};
      // Per-subject means at the last epoch.
      const int last = r.aggregates.back().epoch;
      std::map<int, std::array<double, 4>> per;  // acc, precision, recall, count
      for (const auto& f : r.folds) {
        if (f.epoch != last) continue;
        auto& s = per[f.subject];
        s[0] += f.metrics.accuracy;
        s[1] += f.metrics.precision;
        s[2] += f.metrics.recall;
        s[3] += 1.0;
      }
      auto subjects = nlohmann::ordered_json::array();
      for (const auto& [subject, s] : per)
        subjects.push_back({{"subject", subject},
                            {"accuracy", real_or_null(s[0] / s[3])},
                            {"precision", real_or_null(s[1] / s[3])},
                            {"recall", real_or_null(s[2] / s[3])}});
      j["subjects_at_epoch"] = last;
      j["subjects"] = subjects;
    }
    root.push_back(j);
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << root.dump(2) << '\n';
}

}  // namespace drowsy
