#include "drowsy/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>

namespace drowsy {

bool EegSample::operator==(const EegSample& o) const {
  const bool rt_equal =
      (std::isnan(local_rt) && std::isnan(o.local_rt)) || local_rt == o.local_rt;
  return subject_id == o.subject_id && label == o.label && channels == o.channels &&
         length == o.length && signal == o.signal && rt_equal && session_id == o.session_id;
}

std::string to_string(BundleKind kind) {
  switch (kind) {
    case BundleKind::kBalanced:
      return "balanced";
    case BundleKind::kUnbalanced:
      return "unbalanced";
    case BundleKind::kSynthetic:
      return "synthetic";
  }
  return "unknown";
}

BundleKind bundle_kind_from_string(const std::string& s) {
  if (s == "balanced") return BundleKind::kBalanced;
  if (s == "unbalanced") return BundleKind::kUnbalanced;
  if (s == "synthetic") return BundleKind::kSynthetic;
  throw DataError("unknown bundle kind '" + s + "'");
}

std::map<int, ClassCounts> DatasetBundle::per_subject_counts() const {
  std::map<int, ClassCounts> counts;
  for (const auto& s : samples) {
    auto& c = counts[s.subject_id];
    (s.label == Label::kAlert ? c.alert : c.drowsy)++;
  }
  return counts;
}

std::vector<int> DatasetBundle::subjects() const {
  std::set<int> ids;
  for (const auto& s : samples) ids.insert(s.subject_id);
  return {ids.begin(), ids.end()};
}

ClassCounts LabeledSession::counts() const {
  ClassCounts c;
  for (const auto& s : samples) (s.label == Label::kAlert ? c.alert : c.drowsy)++;
  return c;
}

double alert_reaction_time(std::span<const double> local_rts) {
  if (local_rts.empty()) throw DataError("alert_reaction_time: empty session");
  std::vector<double> sorted(local_rts.begin(), local_rts.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = 0.05 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> global_reaction_times(std::span<const double> onsets_s,
                                          std::span<const double> local_rts, double window_s) {
  if (onsets_s.size() != local_rts.size())
    throw DataError("global_reaction_times: onset/RT length mismatch");
  std::vector<double> out(onsets_s.size());
  for (std::size_t k = 0; k < onsets_s.size(); ++k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t e = 0; e < onsets_s.size(); ++e) {
      if (onsets_s[e] <= onsets_s[k] && onsets_s[e] >= onsets_s[k] - window_s) {
        sum += local_rts[e];
        ++n;
      }
    }
    out[k] = sum / static_cast<double>(n);
  }
  return out;
}

LabeledSession label_by_reaction_time(std::span<const Trial> session) {
  if (session.empty()) throw DataError("label_by_reaction_time: empty session");
  LabeledSession out;
  out.subject_id = session.front().subject_id;
  out.session_id = session.front().session_id;

  std::vector<const Trial*> valid;
  for (const auto& t : session) {
    if (!std::isfinite(t.local_rt) || !std::isfinite(t.global_rt)) {
      std::cerr << "warning: subject " << t.subject_id << " session " << t.session_id
                << ": trial with non-finite reaction time rejected\n";
      ++out.rejected_nonfinite;
      continue;
    }
    valid.push_back(&t);
  }
  if (valid.empty()) throw DataError("label_by_reaction_time: no trial with finite RT");

  std::vector<double> rts;
  rts.reserve(valid.size());
  for (const Trial* t : valid) rts.push_back(t->local_rt);
  const double alert_rt = alert_reaction_time(rts);

  for (const Trial* t : valid) {
    if (t->signal.size() != kChannels * kSamplesPerWindow)
      throw ShapeError("label_by_reaction_time: trial signal must be 30 x 384");
    const bool alert = t->local_rt < 1.5 * alert_rt && t->global_rt < 1.5 * alert_rt;
    const bool drowsy = t->local_rt > 2.5 * alert_rt && t->global_rt > 2.5 * alert_rt;
    if (!alert && !drowsy) continue;
    EegSample s;
    s.subject_id = t->subject_id;
    s.session_id = t->session_id;
    s.label = alert ? Label::kAlert : Label::kDrowsy;
    s.signal = t->signal;
    s.local_rt = t->local_rt;
    out.samples.push_back(std::move(s));
  }
  return out;
}

DatasetBundle filter_and_select_sessions(std::span<const LabeledSession> sessions,
                                         std::size_t min_per_class) {
  // subject -> index of chosen session, in first-seen subject order
  std::vector<int> subject_order;
  std::map<int, std::size_t> chosen;
  for (std::size_t k = 0; k < sessions.size(); ++k) {
    const ClassCounts c = sessions[k].counts();
    if (c.alert < min_per_class || c.drowsy < min_per_class) continue;
    const int sid = sessions[k].subject_id;
    auto it = chosen.find(sid);
    if (it == chosen.end()) {
      chosen[sid] = k;
      subject_order.push_back(sid);
      continue;
    }
    auto imbalance = [](const ClassCounts& cc) {
      return cc.alert > cc.drowsy ? cc.alert - cc.drowsy : cc.drowsy - cc.alert;
    };
    if (imbalance(c) < imbalance(sessions[it->second].counts())) it->second = k;
  }
  if (chosen.empty()) throw DataError("filter_and_select_sessions: no session survives");

  DatasetBundle out;
  out.kind = BundleKind::kUnbalanced;
  for (int sid : subject_order) {
    const auto& session = sessions[chosen[sid]];
    out.samples.insert(out.samples.end(), session.samples.begin(), session.samples.end());
  }
  return out;
}

DatasetBundle build_balanced(const DatasetBundle& unbalanced) {
  std::vector<bool> keep(unbalanced.samples.size(), true);
  for (const auto& [sid, counts] : unbalanced.per_subject_counts()) {
    if (counts.alert == 0 || counts.drowsy == 0)
      throw DataError("build_balanced: subject " + std::to_string(sid) +
                      " lacks one of the classes");
    if (counts.alert == counts.drowsy) continue;
    const Label majority = counts.alert > counts.drowsy ? Label::kAlert : Label::kDrowsy;
    const std::size_t target = std::min(counts.alert, counts.drowsy);

    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < unbalanced.samples.size(); ++k) {
      const auto& s = unbalanced.samples[k];
      if (s.subject_id != sid || s.label != majority) continue;
      if (std::isnan(s.local_rt))
        throw DataError("build_balanced: majority-class sample of subject " +
                        std::to_string(sid) + " has no local reaction time");
      idx.push_back(k);
    }
    // Most representative first: shortest RT for alert, longest for drowsy.
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const double ra = unbalanced.samples[a].local_rt;
      const double rb = unbalanced.samples[b].local_rt;
      return majority == Label::kAlert ? ra < rb : ra > rb;
    });
    for (std::size_t r = target; r < idx.size(); ++r) keep[idx[r]] = false;
  }

  DatasetBundle out;
  out.kind = BundleKind::kBalanced;
  for (std::size_t k = 0; k < unbalanced.samples.size(); ++k)
    if (keep[k]) out.samples.push_back(unbalanced.samples[k]);
  return out;
}

LosoSplit loso_split(const DatasetBundle& bundle, int held_out) {
  LosoSplit split;
  split.train.kind = bundle.kind;
  split.test.kind = bundle.kind;
  for (const auto& s : bundle.samples)
    (s.subject_id == held_out ? split.test : split.train).samples.push_back(s);
  if (split.test.samples.empty())
    throw DataError("loso_split: subject " + std::to_string(held_out) + " not in bundle");
  return split;
}

Tensor3 stack_signals(std::span<const EegSample> samples) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return stack_signals(samples, idx);
}

Tensor3 stack_signals(std::span<const EegSample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) return {};
  const std::size_t ch = samples[indices.front()].channels;
  const std::size_t len = samples[indices.front()].length;
  Tensor3 out(indices.size(), ch, len);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& s = samples[indices[b]];
    if (s.channels != ch || s.length != len || s.signal.size() != ch * len)
      throw ShapeError("stack_signals: inconsistent sample dimensions");
    std::copy(s.signal.begin(), s.signal.end(), out.data().begin() + b * ch * len);
  }
  return out;
}

}  // namespace drowsy
