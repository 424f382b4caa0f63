#pragma once

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bissm/io.hpp"
#include "bissm/tensor.hpp"

namespace bissm {

enum class ColumnKind { kContinuous, kDiscrete };

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::kContinuous;
  std::vector<double> values;

  friend bool operator==(const Column&, const Column&) = default;
};

/// Raw multivariate series: signal variables x, control variables u and
/// optional binary labels, all of equal length.
struct TimeSeriesFrame {
  std::string time_name = "time_index";
  std::vector<double> time;
  std::vector<Column> signals;
  std::vector<Column> controls;
  std::optional<std::vector<int>> labels;

  std::size_t length() const { return time.size(); }

  void validate() const {
    const std::size_t n = time.size();
    auto check = [&](const Column& c) {
      if (c.values.size() != n) {
        throw DataError("frame column '" + c.name + "' has " + std::to_string(c.values.size()) +
                        " rows, expected " + std::to_string(n));
      }
    };
    for (const auto& c : signals) check(c);
    for (const auto& c : controls) check(c);
    if (labels) {
      if (labels->size() != n) throw DataError("frame labels have the wrong length");
      for (int y : *labels) {
        if (y != 0 && y != 1) throw DataError("frame labels must be 0 or 1");
      }
    }
  }

  friend bool operator==(const TimeSeriesFrame&, const TimeSeriesFrame&) = default;
};

// ---------------------------------------------------------------------------
// Schema

struct ColumnSpec {
  std::string pattern;  // exact name or fnmatch glob
  ColumnKind kind = ColumnKind::kContinuous;
};

/// Column roles and windowing parameters of a dataset, read from a
/// `key = value` file:
///
///   time           = time_index          (optional; row number otherwise)
///   signals        = FIT101, LIT101      (names or globs)
///   controls       = MV101:discrete, P1*:discrete, u
///   label          = label               (optional)
///   label_positive = Attack              (optional; else labels must be 0/1)
///   drop           = AIT201, ...         (never used, even if a glob matches)
///   xl = 8, ul = 16, downsample = 1
struct Schema {
  std::string time_column;
  std::vector<ColumnSpec> signals;
  std::vector<ColumnSpec> controls;
  std::string label_column;
  std::vector<std::string> label_positive;
  std::vector<std::string> drop;
  std::size_t xl = 8;
  std::size_t ul = 16;
  std::size_t downsample = 1;

  static Schema parse(std::string_view text, const std::string& source = "schema") {
    auto kv = io::parse_key_values(text, source);
    Schema s;
    auto list = [](const std::string& v) {
      std::vector<std::string> out;
      if (io::trim(v).empty()) return out;
      for (auto& item : io::split(v, ',')) {
        if (!item.empty()) out.push_back(item);
      }
      return out;
    };
    auto specs = [&](const std::string& v) {
      std::vector<ColumnSpec> out;
      for (const auto& item : list(v)) {
        ColumnSpec spec;
        const std::size_t colon = item.rfind(':');
        spec.pattern = item;
        if (colon != std::string::npos) {
          const std::string kind(io::trim(std::string_view(item).substr(colon + 1)));
          spec.pattern = std::string(io::trim(std::string_view(item).substr(0, colon)));
          if (kind == "discrete") {
            spec.kind = ColumnKind::kDiscrete;
          } else if (kind != "continuous") {
            throw ConfigError(source + ": unknown column kind '" + kind + "' for '" + spec.pattern + "'");
          }
        }
        out.push_back(spec);
      }
      return out;
    };
    auto count = [&](const std::string& key, std::size_t& dst) {
      auto it = kv.find(key);
      if (it == kv.end()) return;
      auto v = io::parse_double(it->second);
      if (!v || *v < 1 || std::floor(*v) != *v) {
        throw ConfigError(source + ": '" + key + "' must be a positive integer, got '" + it->second + "'");
      }
      dst = static_cast<std::size_t>(*v);
    };

    for (const auto& [key, value] : kv) {
      static const std::set<std::string> known = {"time",  "signals", "controls", "label",
                                                  "label_positive", "drop", "xl", "ul", "downsample"};
      if (!known.contains(key)) throw ConfigError(source + ": unknown schema key '" + key + "'");
    }
    if (auto it = kv.find("time"); it != kv.end()) s.time_column = it->second;
    if (auto it = kv.find("signals"); it != kv.end()) s.signals = specs(it->second);
    if (auto it = kv.find("controls"); it != kv.end()) s.controls = specs(it->second);
    if (auto it = kv.find("label"); it != kv.end()) s.label_column = it->second;
    if (auto it = kv.find("label_positive"); it != kv.end()) s.label_positive = list(it->second);
    if (auto it = kv.find("drop"); it != kv.end()) s.drop = list(it->second);
    count("xl", s.xl);
    count("ul", s.ul);
    count("downsample", s.downsample);
    if (s.signals.empty()) throw ConfigError(source + ": schema declares no signal columns");
    return s;
  }

  static Schema load(const std::filesystem::path& path) {
    return parse(io::read_file(path), path.string());
  }
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline bool is_glob(const std::string& p) {
  return p.find_first_of("*?[") != std::string::npos;
}

struct ResolvedColumn {
  std::size_t index;
  std::string name;
  ColumnKind kind;
};

}  // namespace detail

/// Reads a header-first comma-separated file, keeping only the columns the
/// schema assigns a role. Rows keep file order.
inline TimeSeriesFrame load_csv(const std::filesystem::path& path, const Schema& schema) {
  const std::string text = io::read_file(path);
  const std::string src = path.string();
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&](std::string_view& line) {
    while (pos < text.size()) {
      const std::size_t nl = text.find('\n', pos);
      line = std::string_view(text).substr(pos, nl == std::string::npos ? text.npos : nl - pos);
      pos = nl == std::string::npos ? text.size() : nl + 1;
      ++line_no;
      if (!io::trim(line).empty()) return true;
    }
    return false;
  };

  std::string_view line;
  if (!next_line(line)) throw DataError(src + ": empty file, header row expected");
  std::vector<std::string> header = io::split(line, ',');
  if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].erase(0, 3);

  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };
  auto require = [&](const std::string& name) {
    auto idx = find(name);
    if (!idx) throw DataError(src + ": column '" + name + "' not found in header");
    return *idx;
  };

  std::set<std::string> claimed(schema.drop.begin(), schema.drop.end());
  std::optional<std::size_t> time_idx;
  if (!schema.time_column.empty()) {
    time_idx = require(schema.time_column);
    claimed.insert(schema.time_column);
  }
  std::optional<std::size_t> label_idx;
  if (!schema.label_column.empty()) {
    label_idx = require(schema.label_column);
    claimed.insert(schema.label_column);
  }
  // Explicit names are claimed before globs so a glob never steals them.
  for (const auto* group : {&schema.signals, &schema.controls}) {
    for (const auto& spec : *group) {
      if (detail::is_glob(spec.pattern)) continue;
      for (const auto& d : schema.drop) {
        if (d == spec.pattern) throw ConfigError(src + ": column '" + d + "' is both used and dropped");
      }
      require(spec.pattern);
      if (!claimed.insert(spec.pattern).second) {
        throw ConfigError(src + ": column '" + spec.pattern + "' assigned more than one role");
      }
    }
  }
  auto resolve = [&](const std::vector<ColumnSpec>& specs) {
    std::vector<detail::ResolvedColumn> out;
    for (const auto& spec : specs) {
      if (!detail::is_glob(spec.pattern)) {
        out.push_back({*find(spec.pattern), spec.pattern, spec.kind});
        continue;
      }
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (claimed.contains(header[i])) continue;
        if (fnmatch(spec.pattern.c_str(), header[i].c_str(), 0) == 0) {
          claimed.insert(header[i]);
          out.push_back({i, header[i], spec.kind});
        }
      }
    }
    return out;
  };
  // Controls resolve first so `signals = *` can mean "everything else".
  const auto control_cols = resolve(schema.controls);
  const auto signal_cols = resolve(schema.signals);
  if (signal_cols.empty()) throw DataError(src + ": schema matched no signal columns");

  TimeSeriesFrame frame;
  if (!schema.time_column.empty()) frame.time_name = schema.time_column;
  for (const auto& c : signal_cols) frame.signals.push_back({c.name, c.kind, {}});
  for (const auto& c : control_cols) frame.controls.push_back({c.name, c.kind, {}});
  if (label_idx) frame.labels.emplace();

  const std::set<std::string> positive(schema.label_positive.begin(), schema.label_positive.end());
  std::size_t row = 0;
  while (next_line(line)) {
    ++row;
    const auto cells = io::split(line, ',');
    if (cells.size() != header.size()) {
      throw DataError(src + ":" + std::to_string(line_no) + ": row has " + std::to_string(cells.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    auto number = [&](std::size_t idx) {
      auto v = io::parse_double(cells[idx]);
      if (!v || !std::isfinite(*v)) {
        throw DataError(src + ":" + std::to_string(line_no) + ": cannot parse '" + cells[idx] +
                        "' in column '" + header[idx] + "' as a number");
      }
      return *v;
    };
    frame.time.push_back(time_idx ? number(*time_idx) : static_cast<double>(row));
    for (std::size_t i = 0; i < signal_cols.size(); ++i) {
      frame.signals[i].values.push_back(number(signal_cols[i].index));
    }
    for (std::size_t i = 0; i < control_cols.size(); ++i) {
      frame.controls[i].values.push_back(number(control_cols[i].index));
    }
    if (label_idx) {
      int y = 0;
      if (!positive.empty()) {
        y = positive.contains(cells[*label_idx]) ? 1 : 0;
      } else {
        const double v = number(*label_idx);
        if (v != 0.0 && v != 1.0) {
          throw DataError(src + ":" + std::to_string(line_no) + ": label '" + cells[*label_idx] +
                          "' is not 0 or 1");
        }
        y = static_cast<int>(v);
      }
      frame.labels->push_back(y);
    }
  }
  frame.validate();
  return frame;
}

/// Writes time, signals, controls and (if present) a `label` column.
inline void write_csv(const TimeSeriesFrame& frame, const std::filesystem::path& path) {
  frame.validate();
  std::string out = frame.time_name;
  for (const auto& c : frame.signals) out += "," + c.name;
  for (const auto& c : frame.controls) out += "," + c.name;
  if (frame.labels) out += ",label";
  out += '\n';
  for (std::size_t r = 0; r < frame.length(); ++r) {
    out += io::format_double(frame.time[r]);
    for (const auto& c : frame.signals) out += "," + io::format_double(c.values[r]);
    for (const auto& c : frame.controls) out += "," + io::format_double(c.values[r]);
    if (frame.labels) out += "," + std::to_string((*frame.labels)[r]);
    out += '\n';
  }
  io::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Keeps rows 0, factor, 2*factor, ...; a kept row is anomalous if any row in
/// the block it stands for is.
inline TimeSeriesFrame downsample(const TimeSeriesFrame& frame, std::size_t factor) {
  if (factor == 0) throw ConfigError("downsample: factor must be at least 1");
  if (factor == 1) return frame;
  TimeSeriesFrame out;
  out.time_name = frame.time_name;
  for (const auto& c : frame.signals) out.signals.push_back({c.name, c.kind, {}});
  for (const auto& c : frame.controls) out.controls.push_back({c.name, c.kind, {}});
  if (frame.labels) out.labels.emplace();
  for (std::size_t r = 0; r < frame.length(); r += factor) {
    out.time.push_back(frame.time[r]);
    for (std::size_t i = 0; i < frame.signals.size(); ++i) {
      out.signals[i].values.push_back(frame.signals[i].values[r]);
    }
    for (std::size_t i = 0; i < frame.controls.size(); ++i) {
      out.controls[i].values.push_back(frame.controls[i].values[r]);
    }
    if (frame.labels) {
      int y = 0;
      for (std::size_t k = r; k < std::min(r + factor, frame.length()); ++k) y |= (*frame.labels)[k];
      out.labels->push_back(y);
    }
  }
  return out;
}

struct ColumnNormalization {
  std::string name;
  ColumnKind kind = ColumnKind::kContinuous;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> categories;  // sorted, discrete only

  double normalize(double v) const { return max > min ? (v - min) / (max - min) : 0.0; }
  double denormalize(double v) const { return max > min ? v * (max - min) + min : min; }

  friend bool operator==(const ColumnNormalization&, const ColumnNormalization&) = default;
};

/// Min-max ranges for continuous columns and category lists for discrete
/// ones, fitted on training data only.
struct NormalizationSpec {
  std::vector<ColumnNormalization> signals;
  std::vector<ColumnNormalization> controls;

  friend bool operator==(const NormalizationSpec&, const NormalizationSpec&) = default;
};

inline NormalizationSpec fit_normalization(const TimeSeriesFrame& train) {
  train.validate();
  if (train.length() == 0) throw DataError("fit_normalization: empty training frame");
  auto fit = [](const Column& c) {
    ColumnNormalization n;
    n.name = c.name;
    n.kind = c.kind;
    auto [lo, hi] = std::minmax_element(c.values.begin(), c.values.end());
    n.min = *lo;
    n.max = *hi;
    if (c.kind == ColumnKind::kDiscrete) {
      std::set<double> cats(c.values.begin(), c.values.end());
      n.categories.assign(cats.begin(), cats.end());
    }
    return n;
  };
  NormalizationSpec spec;
  for (const auto& c : train.signals) spec.signals.push_back(fit(c));
  for (const auto& c : train.controls) spec.controls.push_back(fit(c));
  return spec;
}

/// Continuous columns map to (v - min) / (max - min) without clamping
/// (constant columns map to 0). Discrete columns become one 0/1 column per
/// training category, named `name=value`; unseen values become all zeros.
inline TimeSeriesFrame apply_normalization(const TimeSeriesFrame& frame, const NormalizationSpec& spec) {
  frame.validate();
  if (frame.signals.size() != spec.signals.size() || frame.controls.size() != spec.controls.size()) {
    throw DataError("apply_normalization: frame columns do not match the fitted normalization");
  }
  auto transform = [](const Column& c, const ColumnNormalization& n, std::vector<Column>& out) {
    if (c.name != n.name) {
      throw DataError("apply_normalization: column '" + c.name + "' where '" + n.name + "' was fitted");
    }
    if (n.kind == ColumnKind::kContinuous) {
      Column o{c.name, ColumnKind::kContinuous, {}};
      o.values.reserve(c.values.size());
      for (double v : c.values) o.values.push_back(n.normalize(v));
      out.push_back(std::move(o));
      return;
    }
    for (double cat : n.categories) {
      Column o{c.name + "=" + io::format_double(cat), ColumnKind::kContinuous, {}};
      o.values.reserve(c.values.size());
      for (double v : c.values) o.values.push_back(v == cat ? 1.0 : 0.0);
      out.push_back(std::move(o));
    }
  };
  TimeSeriesFrame out;
  out.time_name = frame.time_name;
  out.time = frame.time;
  out.labels = frame.labels;
  for (std::size_t i = 0; i < frame.signals.size(); ++i) transform(frame.signals[i], spec.signals[i], out.signals);
  for (std::size_t i = 0; i < frame.controls.size(); ++i) {
    transform(frame.controls[i], spec.controls[i], out.controls);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windowing

/// Sliding windows over a (normalized) frame. Window i ends at frame row
/// `end_rows[i]`; its signal part spans the last `xl` rows of the signal
/// columns and its control part the last `ul` rows of signals + controls.
/// Both are flattened time-major, columns in frame order.
struct WindowedDataset {
  std::size_t xl = 0;
  std::size_t ul = 0;
  std::size_t signal_dim = 0;
  std::size_t control_dim = 0;  // signal columns + control columns
  std::vector<double> signal;
  std::vector<double> control;
  std::vector<int> labels;
  std::vector<std::size_t> end_rows;
  std::vector<double> end_times;

  std::size_t size() const { return end_rows.size(); }
  std::size_t signal_width() const { return xl * signal_dim; }
  std::size_t control_width() const { return ul * control_dim; }

  std::span<const double> signal_window(std::size_t i) const {
    return std::span<const double>(signal).subspan(i * signal_width(), signal_width());
  }
  std::span<const double> control_window(std::size_t i) const {
    return std::span<const double>(control).subspan(i * control_width(), control_width());
  }

  /// True when window j ends one row after window i.
  bool consecutive(std::size_t i, std::size_t j) const { return end_rows[j] == end_rows[i] + 1; }

  Tensor gather_signal(std::span<const std::size_t> idx) const {
    Tensor t(idx.size(), signal_width());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto w = signal_window(idx[r]);
      std::copy(w.begin(), w.end(), t.row_span(r).begin());
    }
    return t;
  }
  Tensor gather_control(std::span<const std::size_t> idx) const {
    Tensor t(idx.size(), control_width());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto w = control_window(idx[r]);
      std::copy(w.begin(), w.end(), t.row_span(r).begin());
    }
    return t;
  }

  /// Windows [begin, end).
  WindowedDataset slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) throw DataError("WindowedDataset::slice: range out of bounds");
    WindowedDataset out;
    out.xl = xl;
    out.ul = ul;
    out.signal_dim = signal_dim;
    out.control_dim = control_dim;
    out.signal.assign(signal.begin() + begin * signal_width(), signal.begin() + end * signal_width());
    out.control.assign(control.begin() + begin * control_width(), control.begin() + end * control_width());
    out.labels.assign(labels.begin() + begin, labels.begin() + end);
    out.end_rows.assign(end_rows.begin() + begin, end_rows.begin() + end);
    out.end_times.assign(end_times.begin() + begin, end_times.begin() + end);
    return out;
  }

  friend bool operator==(const WindowedDataset&, const WindowedDataset&) = default;
};

/// Window label is the label of its final row. The first window ends at row
/// max(xl, ul) - 1 (0-based), so stride 1 gives length - max(xl, ul) + 1
/// windows.
inline WindowedDataset make_windows(const TimeSeriesFrame& frame, std::size_t xl, std::size_t ul,
                                    std::size_t stride = 1) {
  frame.validate();
  if (xl == 0 || ul == 0 || stride == 0) throw ConfigError("make_windows: xl, ul and stride must be positive");
  const std::size_t span = std::max(xl, ul);
  if (frame.length() < span) {
    throw DataError("make_windows: series of length " + std::to_string(frame.length()) +
                    " is shorter than the window length " + std::to_string(span));
  }
  WindowedDataset ds;
  ds.xl = xl;
  ds.ul = ul;
  ds.signal_dim = frame.signals.size();
  ds.control_dim = frame.signals.size() + frame.controls.size();
  for (std::size_t end = span - 1; end < frame.length(); end += stride) {
    for (std::size_t r = end + 1 - xl; r <= end; ++r) {
      for (const auto& c : frame.signals) ds.signal.push_back(c.values[r]);
    }
    for (std::size_t r = end + 1 - ul; r <= end; ++r) {
      for (const auto& c : frame.signals) ds.control.push_back(c.values[r]);
      for (const auto& c : frame.controls) ds.control.push_back(c.values[r]);
    }
    ds.labels.push_back(frame.labels ? (*frame.labels)[end] : 0);
    ds.end_rows.push_back(end);
    ds.end_times.push_back(frame.time[end]);
  }
  return ds;
}

/// Chronological split: the first `fraction` of windows train, the rest validate.
inline std::pair<WindowedDataset, WindowedDataset> split_train_val(const WindowedDataset& windows,
                                                                   double fraction = 0.75) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split_train_val: fraction must be in (0, 1)");
  const auto cut = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(windows.size())));
  if (cut == 0 || cut == windows.size()) {
    throw DataError("split_train_val: " + std::to_string(windows.size()) +
                    " windows leave one side of the split empty");
  }
  return {windows.slice(0, cut), windows.slice(cut, windows.size())};
}

// ---------------------------------------------------------------------------
// Synthetic generator

/// Rows [first, last] (1-based, inclusive) get their own noise scales and label 1.
struct NoiseOverride {
  std::size_t first = 0;
  std::size_t last = 0;
  double sigma_w = 0.0;
  double sigma_v = 0.0;
};

struct AnomalySpec {
  std::vector<NoiseOverride> ranges;

  /// The last `tail` rows of every `period` rows.
  static AnomalySpec periodic(std::size_t length, std::size_t period, std::size_t tail, double sigma_w,
                              double sigma_v) {
    AnomalySpec spec;
    for (std::size_t start = 1; start <= length; start += period) {
      const std::size_t block_end = std::min(start + period - 1, length);
      if (block_end + 1 < start + tail) continue;
      spec.ranges.push_back({block_end - tail + 1, block_end, sigma_w, sigma_v});
    }
    return spec;
  }
};

struct SyntheticSeries {
  TimeSeriesFrame frame;             // x, u, labels
  std::vector<double> ground_truth;  // x with w = v = 0
};

/// Control level at 1-based time t: ceil((t - 1000 floor((t-1)/1000)) / 100),
/// a staircase 1..10 repeating every 1000 steps.
inline int synth_control(std::size_t t) {
  const std::size_t r = t - 1000 * ((t - 1) / 1000);
  return static_cast<int>((r + 99) / 100);
}

/// s = sin(t-1) + sin(u) + w, x = s + v with w ~ N(0, sigma_w^2), v ~ N(0, sigma_v^2).
inline SyntheticSeries synth_generate(std::size_t length, double sigma_w, double sigma_v,
                                      const AnomalySpec& anomalies, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticSeries out;
  out.frame.time_name = "time_index";
  out.frame.signals.push_back({"x", ColumnKind::kContinuous, {}});
  out.frame.controls.push_back({"u", ColumnKind::kContinuous, {}});
  out.frame.labels.emplace();
  auto& x = out.frame.signals[0].values;
  auto& u = out.frame.controls[0].values;
  for (std::size_t t = 1; t <= length; ++t) {
    double sw = sigma_w;
    double sv = sigma_v;
    int label = 0;
    for (const auto& r : anomalies.ranges) {
      if (t >= r.first && t <= r.last) {
        sw = r.sigma_w;
        sv = r.sigma_v;
        label = 1;
      }
    }
    const double w = normal(rng);
    const double v = normal(rng);
    const int ut = synth_control(t);
    const double clean = std::sin(static_cast<double>(t - 1)) + std::sin(static_cast<double>(ut));
    out.frame.time.push_back(static_cast<double>(t));
    u.push_back(ut);
    x.push_back(clean + sw * w + sv * v);
    out.frame.labels->push_back(label);
    out.ground_truth.push_back(clean);
  }
  return out;
}

}  // namespace bissm
