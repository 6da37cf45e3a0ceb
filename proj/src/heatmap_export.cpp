#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "drowsy/dataset.hpp"
#include "drowsy/interpret.hpp"
#include "json.hpp"

namespace drowsy {

void write_heatmap_csv(const Heatmap& heatmap, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[32];
  for (std::size_t p = 0; p < heatmap.map.rows(); ++p) {
    const auto row = heatmap.map.row(p);
    for (std::size_t q = 0; q < row.size(); ++q) {
      std::snprintf(buf, sizeof buf, "%.6f", row[q]);
      out << (q ? "," : "") << buf;
    }
    out << '\n';
  }
}

void write_interpretation_json(const Interpretation& interp, const HeatmapMetadata& meta,
                               const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["subject"] = meta.subject;
  j["label"] = meta.label;
  j["index"] = meta.index;
  j["likelihoods"] = {interp.likelihoods[0], interp.likelihoods[1]};
  j["class"] = interp.predicted_class;
  j["degenerate"] = interp.heatmap.degenerate;
  j["sigma"] = interp.heatmap.sigma;
  auto locs = nlohmann::ordered_json::array();
  for (const auto& l : interp.locations)
    locs.push_back({{"i", l.node + 1},
                    {"j", l.time + 1},
                    {"value", l.value},
                    {"p", l.channel + 1},
                    {"q", l.center + 1.0}});
  j["top_locations"] = locs;
  auto summary = nlohmann::ordered_json::object();
  for (std::size_t p = 0; p < interp.heatmap.channel_summary.size(); ++p) {
    const std::string name = p < kChannels ? std::string(channel_names()[p]) : std::to_string(p + 1);
    summary[name] = interp.heatmap.channel_summary[p];
  }
  j["channel_summary"] = summary;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

namespace {

// Diverging palette: -1 blue, 0 white, +1 red.
std::string diverging_color(double v) {
  v = std::clamp(v, -1.0, 1.0);
  int r, g, b;
  if (v < 0) {
    const double t = -v;
    r = static_cast<int>(std::lround(255 * (1 - t) + 59 * t));
    g = static_cast<int>(std::lround(255 * (1 - t) + 76 * t));
    b = static_cast<int>(std::lround(255 * (1 - t) + 192 * t));
  } else {
    r = static_cast<int>(std::lround(255 * (1 - v) + 180 * v));
    g = static_cast<int>(std::lround(255 * (1 - v) + 4 * v));
    b = static_cast<int>(std::lround(255 * (1 - v) + 38 * v));
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

void write_heatmap_svg(const Interpretation& interp, const Tensor3& x, std::size_t sample,
                       const HeatmapMetadata& meta, const std::filesystem::path& path) {
  const Matrix& map = interp.heatmap.map;
  const std::size_t channels = map.rows(), length = map.cols();
  constexpr double kLabelW = 50, kPlotW = 900, kRowH = 22, kTop = 40, kBarGap = 30, kBarW = 150;
  constexpr std::size_t kBlock = 4;
  const double height = kTop + kRowH * static_cast<double>(channels) + 20;
  const double width = kLabelW + kPlotW + kBarGap + kBarW + 20;
  const double dx = kPlotW / static_cast<double>(length);

  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "font-family=\"sans-serif\" font-size=\"10\">\n",
                width, height);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.0f\" y=\"20\" font-size=\"13\">Subject %d, label %s, "
                "likelihood alert %.3f / drowsy %.3f</text>\n",
                kLabelW, meta.subject, meta.label == 1 ? "drowsy" : "alert",
                interp.likelihoods[0], interp.likelihoods[1]);
  out << buf;

  for (std::size_t p = 0; p < channels; ++p) {
    const double y0 = kTop + kRowH * static_cast<double>(p);
    const std::string name = p < kChannels ? std::string(channel_names()[p]) : std::to_string(p + 1);
    std::snprintf(buf, sizeof buf, "<text x=\"4\" y=\"%.1f\">%s</text>\n", y0 + kRowH * 0.65,
                  name.c_str());
    out << buf;
    for (std::size_t q = 0; q < length; q += kBlock) {
      const std::size_t stop = std::min(length, q + kBlock);
      double avg = 0.0;
      for (std::size_t t = q; t < stop; ++t) avg += map(p, t);
      avg /= static_cast<double>(stop - q);
      std::snprintf(buf, sizeof buf,
                    "<rect x=\"%.2f\" y=\"%.1f\" width=\"%.2f\" height=\"%.1f\" fill=\"%s\"/>\n",
                    kLabelW + dx * static_cast<double>(q), y0, dx * static_cast<double>(stop - q),
                    kRowH, diverging_color(avg).c_str());
      out << buf;
    }

    const auto sig = x.row(sample, p);
    double peak = 1e-12;
    for (double v : sig) peak = std::max(peak, std::abs(v));
    out << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"0.6\" points=\"";
    for (std::size_t t = 0; t < length; ++t) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", kLabelW + dx * (static_cast<double>(t) + 0.5),
                    y0 + kRowH / 2 - 0.45 * kRowH * sig[t] / peak);
      out << buf;
    }
    out << "\"/>\n";

    const double s = p < interp.heatmap.channel_summary.size() ? interp.heatmap.channel_summary[p] : -1.0;
    const double bar = kBarW * (s + 1.0) / 2.0;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.2f\" height=\"%.1f\" fill=\"%s\" "
                  "stroke=\"#555\" stroke-width=\"0.3\"/>\n",
                  kLabelW + kPlotW + kBarGap, y0 + 3, std::max(bar, 0.0), kRowH - 6,
                  diverging_color(s).c_str());
    out << buf;
  }
  out << "</svg>\n";
}

}  // namespace drowsy
