#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "bissm/io.hpp"
#include "bissm/score_series.hpp"

namespace bissm {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;

  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

struct RocResult {
  double auc = 0.0;
  std::vector<RocPoint> points;  // (0,0) ... (1,1), one point per distinct score
};

struct F1Result {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double threshold = 0.0;
};

struct EvalReport {
  double auc = 0.0;
  double best_f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double threshold = 0.0;
  std::size_t samples = 0;
  std::size_t positives = 0;
  std::vector<RocPoint> roc;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> class_counts(const ScoreSeries& s, const char* op) {
  s.validate();
  std::size_t pos = 0;
  for (const auto& r : s.records) pos += static_cast<std::size_t>(r.label);
  const std::size_t neg = s.size() - pos;
  if (pos == 0 || neg == 0) {
    throw DataError(std::string(op) + ": both normal and anomalous labels are required");
  }
  return {pos, neg};
}

/// Indices sorted by descending score.
inline std::vector<std::size_t> descending(const ScoreSeries& s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return s.records[a].score > s.records[b].score; });
  return idx;
}

}  // namespace detail

/// AUC as the Mann-Whitney rank statistic (tied scores count 1/2), plus the
/// ROC curve traced by lowering the threshold through each distinct score.
inline RocResult roc_auc(const ScoreSeries& series) {
  const auto [pos, neg] = detail::class_counts(series, "roc_auc");
  const auto idx = detail::descending(series);

  RocResult out;
  out.points.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  // Each tie group of (dp positives, dn negatives) contributes dn*tp_before +
  // dn*dp/2 discordance-free pairs, counted from the negatives' side.
  double concordant = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::size_t dp = 0, dn = 0;
    const double score = series.records[idx[i]].score;
    while (j < idx.size() && series.records[idx[j]].score == score) {
      (series.records[idx[j]].label == 1 ? dp : dn) += 1;
      ++j;
    }
    concordant += static_cast<double>(dn) * (static_cast<double>(tp) + 0.5 * static_cast<double>(dp));
    tp += dp;
    fp += dn;
    out.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos)});
    i = j;
  }
  out.auc = concordant / (static_cast<double>(pos) * static_cast<double>(neg));
  return out;
}

/// Trapezoidal area under a ROC curve.
inline double trapezoid_auc(const std::vector<RocPoint>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) * 0.5;
  }
  return area;
}

/// Precision/recall/F1 when flagging every score >= threshold.
inline F1Result f1_at(const ScoreSeries& series, double threshold) {
  std::size_t tp = 0, fp = 0, pos = 0;
  for (const auto& r : series.records) {
    pos += static_cast<std::size_t>(r.label);
    if (r.score >= threshold) (r.label == 1 ? tp : fp) += 1;
  }
  F1Result out;
  out.threshold = threshold;
  if (tp + fp > 0) out.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (pos > 0) out.recall = static_cast<double>(tp) / static_cast<double>(pos);
  if (out.precision + out.recall > 0.0) {
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  }
  return out;
}

/// Maximum F1 over every distinct score used as threshold. Ties go to the
/// higher precision, then to the lower threshold.
inline F1Result best_f1(const ScoreSeries& series) {
  const auto [pos, neg] = detail::class_counts(series, "best_f1");
  const auto idx = detail::descending(series);
  F1Result best;
  bool have = false;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double score = series.records[idx[i]].score;
    while (i < idx.size() && series.records[idx[i]].score == score) {
      (series.records[idx[i]].label == 1 ? tp : fp) += 1;
      ++i;
    }
    F1Result cand;
    cand.threshold = score;
    cand.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    cand.recall = static_cast<double>(tp) / static_cast<double>(pos);
    if (tp > 0) cand.f1 = 2.0 * cand.precision * cand.recall / (cand.precision + cand.recall);
    // Thresholds are visited in decreasing order, so ">=" on precision lets
    // an exact tie move to the lower threshold.
    const bool better =
        !have || cand.f1 > best.f1 || (cand.f1 == best.f1 && cand.precision >= best.precision);
    if (better) {
      best = cand;
      have = true;
    }
  }
  return best;
}

inline EvalReport evaluate(const ScoreSeries& series) {
  auto roc = roc_auc(series);
  auto f1 = best_f1(series);
  EvalReport r;
  r.auc = roc.auc;
  r.best_f1 = f1.f1;
  r.precision = f1.precision;
  r.recall = f1.recall;
  r.threshold = f1.threshold;
  r.samples = series.size();
  for (const auto& rec : series.records) r.positives += static_cast<std::size_t>(rec.label);
  r.roc = std::move(roc.points);
  return r;
}

/// Writes `key = value` text to `path` and the ROC curve as `fpr,tpr` CSV to
/// `roc_path`.
inline void write_report(const EvalReport& r, const std::filesystem::path& path,
                         const std::filesystem::path& roc_path) {
  std::string text;
  text += "auc = " + io::format_double(r.auc) + "\n";
  text += "best_f1 = " + io::format_double(r.best_f1) + "\n";
  text += "precision = " + io::format_double(r.precision) + "\n";
  text += "recall = " + io::format_double(r.recall) + "\n";
  text += "threshold = " + io::format_double(r.threshold) + "\n";
  text += "samples = " + std::to_string(r.samples) + "\n";
  text += "positives = " + std::to_string(r.positives) + "\n";
  io::write_file(path, text);

  std::string csv = "fpr,tpr\n";
  for (const auto& p : r.roc) csv += io::format_double(p.fpr) + "," + io::format_double(p.tpr) + "\n";
  io::write_file(roc_path, csv);
}

inline EvalReport read_report(const std::filesystem::path& path, const std::filesystem::path& roc_path) {
  auto kv = io::parse_key_values(io::read_file(path), path.string());
  auto num = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(path.string() + ": missing key '" + key + "'");
    auto v = io::parse_double(it->second);
    if (!v) throw DataError(path.string() + ": key '" + key + "' is not a number");
    return *v;
  };
  EvalReport r;
  r.auc = num("auc");
  r.best_f1 = num("best_f1");
  r.precision = num("precision");
  r.recall = num("recall");
  r.threshold = num("threshold");
  r.samples = static_cast<std::size_t>(num("samples"));
  r.positives = static_cast<std::size_t>(num("positives"));

  const std::string csv = io::read_file(roc_path);
  std::size_t pos = 0;
  bool header = true;
  while (pos < csv.size()) {
    const std::size_t nl = csv.find('\n', pos);
    std::string_view line = std::string_view(csv).substr(pos, nl == std::string::npos ? csv.npos : nl - pos);
    pos = nl == std::string::npos ? csv.size() : nl + 1;
    if (io::trim(line).empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    auto cells = io::split(line, ',');
    auto f = cells.size() == 2 ? io::parse_double(cells[0]) : std::nullopt;
    auto t = cells.size() == 2 ? io::parse_double(cells[1]) : std::nullopt;
    if (!f || !t) throw DataError(roc_path.string() + ": malformed ROC row");
    r.roc.push_back({*f, *t});
  }
  return r;
}

}  // namespace bissm
