#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "bissm/io.hpp"

namespace bissm {

struct ScoreRecord {
  double time_index = 0.0;
  double score = 0.0;
  int label = 0;

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

/// Per-time-step anomaly scores aligned with ground-truth labels.
struct ScoreSeries {
  std::vector<ScoreRecord> records;

  std::size_t size() const { return records.size(); }

  void validate() const {
    for (const auto& r : records) {
      if (!std::isfinite(r.score)) {
        throw NumericError("score series: non-finite score at time " + io::format_double(r.time_index));
      }
      if (r.label != 0 && r.label != 1) {
        throw DataError("score series: label at time " + io::format_double(r.time_index) + " is not 0 or 1");
      }
    }
  }

  friend bool operator==(const ScoreSeries&, const ScoreSeries&) = default;
};

inline void write_score_csv(const ScoreSeries& series, const std::filesystem::path& path) {
  std::string out = "time_index,score,label\n";
  for (const auto& r : series.records) {
    out += io::format_double(r.time_index) + "," + io::format_double(r.score) + "," + std::to_string(r.label) + "\n";
  }
  io::write_file(path, out);
}

inline ScoreSeries read_score_csv(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  ScoreSeries series;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = std::string_view(text).substr(pos, nl == std::string::npos ? text.npos : nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    ++line_no;
    if (io::trim(line).empty()) continue;
    auto cells = io::split(line, ',');
    if (header) {
      if (cells != std::vector<std::string>{"time_index", "score", "label"}) {
        throw DataError(path.string() + ": expected header 'time_index,score,label'");
      }
      header = false;
      continue;
    }
    if (cells.size() != 3) throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    auto t = io::parse_double(cells[0]);
    auto s = io::parse_double(cells[1]);
    auto y = io::parse_double(cells[2]);
    if (!t || !s || !y || (*y != 0.0 && *y != 1.0)) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed score row");
    }
    series.records.push_back({*t, *s, static_cast<int>(*y)});
  }
  if (header) throw DataError(path.string() + ": empty score file");
  series.validate();
  return series;
}

}  // namespace bissm
