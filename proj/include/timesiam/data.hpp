#pragma once

// Data pipeline: CSV ingest, chronological splits, per-window instance
// normalization, masking rules, and past/current pair sampling for
// self-supervised pre-training.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "timesiam/common.hpp"

namespace timesiam {

// Small row-major double matrix for raw data (no gradients).
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

// 0/1 mask aligned with a Mat: 1 = masked (to be reconstructed).
struct BoolMat {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> v;

  BoolMat() = default;
  BoolMat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0) {}
  uint8_t& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  uint8_t at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  long count() const {
    long k = 0;
    for (uint8_t b : v) k += b;
    return k;
  }
};

// A multivariate series: values[t][c], optional per-row timestamps.
struct TimeSeriesFrame {
  std::vector<std::string> channel_names;
  std::vector<std::string> timestamps;  // empty when no timestamp column
  Mat values;

  int length() const { return values.rows; }
  int channels() const { return values.cols; }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

inline bool parse_double(const std::string& s, double& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  size_t pos = 0;
  try {
    out = std::stod(t, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == t.size();
}

}  // namespace detail

// Loads a CSV with a header row. When `timestamp_column` names a header
// field, that column is kept as text; every other column must parse as a
// number. Rows containing non-finite values (nan/inf) are dropped; cells
// that fail to parse at all are an error.
inline TimeSeriesFrame load_csv(const std::string& path,
                                const std::string& timestamp_column = "") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty data file: " + path);
  const auto header = detail::split_csv_line(line);

  int ts_index = -1;
  if (!timestamp_column.empty()) {
    for (size_t i = 0; i < header.size(); ++i)
      if (detail::trim(header[i]) == timestamp_column) ts_index = static_cast<int>(i);
    if (ts_index < 0)
      throw DataError("timestamp column '" + timestamp_column + "' not found in " + path);
  }

  TimeSeriesFrame frame;
  for (size_t i = 0; i < header.size(); ++i)
    if (static_cast<int>(i) != ts_index)
      frame.channel_names.push_back(detail::trim(header[i]));
  const int n_channels = static_cast<int>(frame.channel_names.size());
  if (n_channels == 0) throw DataError("no value columns in " + path);

  std::vector<double> flat;
  std::vector<std::string> stamps;
  int row_number = 1;  // header was row 1
  while (std::getline(in, line)) {
    ++row_number;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError(path + ": row " + std::to_string(row_number) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(header.size()));
    std::vector<double> row(n_channels);
    std::string stamp;
    int ci = 0;
    bool finite = true;
    for (size_t f = 0; f < fields.size(); ++f) {
      if (static_cast<int>(f) == ts_index) {
        stamp = detail::trim(fields[f]);
        continue;
      }
      double val = 0.0;
      if (!detail::parse_double(fields[f], val))
        throw DataError(path + ": row " + std::to_string(row_number) +
                        ", column '" + detail::trim(header[f]) +
                        "': cannot parse '" + detail::trim(fields[f]) + "' as a number");
      if (!std::isfinite(val)) finite = false;
      row[ci++] = val;
    }
    if (!finite) continue;  // skip rows with nan/inf values
    flat.insert(flat.end(), row.begin(), row.end());
    if (ts_index >= 0) stamps.push_back(stamp);
  }

  const int n_rows = static_cast<int>(flat.size()) / n_channels;
  if (n_rows == 0) throw DataError("no usable data rows in " + path);
  frame.values = Mat(n_rows, n_channels);
  frame.values.v = std::move(flat);
  frame.timestamps = std::move(stamps);

  // Timestamps must be strictly increasing. Integer stamps compare
  // numerically; anything else (e.g. ISO dates of one format) compares as
  // text, which orders correctly for uniform-width date strings.
  if (!frame.timestamps.empty()) {
    bool all_int = true;
    std::vector<long long> as_int(frame.timestamps.size());
    for (size_t i = 0; i < frame.timestamps.size() && all_int; ++i) {
      try {
        size_t pos = 0;
        as_int[i] = std::stoll(frame.timestamps[i], &pos);
        all_int = pos == frame.timestamps[i].size();
      } catch (const std::exception&) {
        all_int = false;
      }
    }
    for (size_t i = 1; i < frame.timestamps.size(); ++i) {
      const bool ok = all_int ? as_int[i] > as_int[i - 1]
                              : frame.timestamps[i] > frame.timestamps[i - 1];
      if (!ok)
        throw DataError(path + ": timestamps not strictly increasing ('" +
                        frame.timestamps[i - 1] + "' then '" + frame.timestamps[i] + "')");
    }
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Chronological splits.

struct SplitFrames {
  TimeSeriesFrame train, val, test;
};

namespace detail {

inline TimeSeriesFrame take_rows(const TimeSeriesFrame& f, int r0, int r1) {
  TimeSeriesFrame out;
  out.channel_names = f.channel_names;
  out.values = Mat(r1 - r0, f.channels());
  for (int i = r0; i < r1; ++i)
    for (int c = 0; c < f.channels(); ++c) out.values.at(i - r0, c) = f.values.at(i, c);
  if (!f.timestamps.empty())
    out.timestamps.assign(f.timestamps.begin() + r0, f.timestamps.begin() + r1);
  return out;
}

}  // namespace detail

// Splits rows [0, L) into train / val / test in time order. Ratios must be
// positive and sum to at most 1; sizes are floored, train gets no remainder.
inline SplitFrames chronological_split(const TimeSeriesFrame& f, double train_ratio,
                                       double val_ratio, double test_ratio) {
  if (train_ratio <= 0 || val_ratio < 0 || test_ratio < 0 ||
      train_ratio + val_ratio + test_ratio > 1.0 + 1e-9)
    throw ConfigError("split ratios must be positive and sum to at most 1");
  const int L = f.length();
  const int n_train = static_cast<int>(std::floor(train_ratio * L));
  const int n_val = static_cast<int>(std::floor(val_ratio * L));
  const int n_test = static_cast<int>(std::floor(test_ratio * L));
  if (n_train <= 0 || n_train + n_val + n_test > L)
    throw ConfigError("split ratios leave no rows for some split");
  SplitFrames out;
  out.train = detail::take_rows(f, 0, n_train);
  out.val = detail::take_rows(f, n_train, n_train + n_val);
  out.test = detail::take_rows(f, n_train + n_val, n_train + n_val + n_test);
  return out;
}

// Same split boundaries, but val and test are extended backward by
// `context - 1` rows so that every evaluation window of length `context`
// ending inside the split has a full history. With context = T this
// reproduces the usual benchmark sample counts (split windows overlap the
// preceding split's tail but never its *evaluation* region).
inline SplitFrames chronological_split_with_context(const TimeSeriesFrame& f,
                                                    double train_ratio, double val_ratio,
                                                    double test_ratio, int context) {
  if (context < 1) throw ConfigError("split context must be at least 1");
  SplitFrames plain = chronological_split(f, train_ratio, val_ratio, test_ratio);
  const int L = f.length();
  const int n_train = plain.train.length();
  const int n_val = plain.val.length();
  const int n_test = plain.test.length();
  SplitFrames out;
  out.train = std::move(plain.train);
  const int v0 = std::max(0, n_train - (context - 1));
  out.val = detail::take_rows(f, v0, n_train + n_val);
  const int t0 = std::max(0, n_train + n_val - (context - 1));
  out.test = detail::take_rows(f, t0, std::min(L, n_train + n_val + n_test));
  return out;
}

// ---------------------------------------------------------------------------
// Instance normalization (per window, per channel).

struct NormStats {
  std::vector<double> mean;  // one per channel
  std::vector<double> std;   // clamped below at 1e-5
};

// Normalizes each channel of a window to zero mean / unit variance
// (population variance). Returns the stats needed to undo it.
inline NormStats instance_normalize(Mat& window) {
  NormStats st;
  st.mean.resize(window.cols);
  st.std.resize(window.cols);
  for (int c = 0; c < window.cols; ++c) {
    double mean = 0.0;
    for (int t = 0; t < window.rows; ++t) mean += window.at(t, c);
    mean /= window.rows;
    double var = 0.0;
    for (int t = 0; t < window.rows; ++t) {
      const double d = window.at(t, c) - mean;
      var += d * d;
    }
    var /= window.rows;
    const double sd = std::max(std::sqrt(var), 1e-5);
    st.mean[c] = mean;
    st.std[c] = sd;
    for (int t = 0; t < window.rows; ++t)
      window.at(t, c) = (window.at(t, c) - mean) / sd;
  }
  return st;
}

inline void denormalize(Mat& window, const NormStats& st) {
  if (static_cast<int>(st.mean.size()) != window.cols)
    throw ShapeError("denormalize: stats channel count mismatch");
  for (int c = 0; c < window.cols; ++c)
    for (int t = 0; t < window.rows; ++t)
      window.at(t, c) = window.at(t, c) * st.std[c] + st.mean[c];
}

// ---------------------------------------------------------------------------
// Masking.

enum class MaskRule {
  binomial,             // i.i.d. positions, one shared set across channels
  channel_binomial,     // i.i.d. positions, independent per channel
  continuous,           // geometric segments, one shared set across channels
  channel_continuous,   // geometric segments, independent per channel
  mask_last,            // final round(ratio*T) steps, all channels
};

inline MaskRule parse_mask_rule(const std::string& s) {
  if (s == "binomial") return MaskRule::binomial;
  if (s == "channel_binomial") return MaskRule::channel_binomial;
  if (s == "continuous") return MaskRule::continuous;
  if (s == "channel_continuous") return MaskRule::channel_continuous;
  if (s == "mask_last") return MaskRule::mask_last;
  throw ConfigError("unknown mask rule '" + s + "' (expected binomial, "
                    "channel_binomial, continuous, channel_continuous, or mask_last)");
}

inline std::string mask_rule_name(MaskRule r) {
  switch (r) {
    case MaskRule::binomial: return "binomial";
    case MaskRule::channel_binomial: return "channel_binomial";
    case MaskRule::continuous: return "continuous";
    case MaskRule::channel_continuous: return "channel_continuous";
    case MaskRule::mask_last: return "mask_last";
  }
  throw ConfigError("bad mask rule value");
}

struct MaskSpec {
  MaskRule rule = MaskRule::channel_continuous;
  double ratio = 0.25;
  double mean_segment_length = 12.0;  // for the continuous rules

  void validate() const {
    if (ratio < 0.0 || ratio > 1.0) throw ConfigError("mask ratio must be in [0, 1]");
    if (mean_segment_length < 1.0)
      throw ConfigError("mask mean segment length must be at least 1");
  }
};

namespace detail {

// Marks exactly k of T steps with contiguous segments. Geometric-length
// segments (mean `mean_len`) are dropped at uniformly random starts and
// unioned until at least k steps are marked; the overshoot is then trimmed
// by unmasking the most recently marked steps.
inline void continuous_column(std::vector<uint8_t>& col, int T, int k,
                              double mean_len, Rng& rng) {
  std::fill(col.begin(), col.end(), 0);
  if (k <= 0) return;
  if (k >= T) {
    std::fill(col.begin(), col.end(), 1);
    return;
  }
  std::vector<int> marked_order;
  marked_order.reserve(static_cast<size_t>(T));
  int have = 0;
  while (have < k) {
    const int len = static_cast<int>(rng.geometric_length(mean_len));
    const int start = static_cast<int>(rng.uniform_int(0, T - 1));
    for (int t = start; t < std::min(start + len, T); ++t) {
      if (!col[static_cast<size_t>(t)]) {
        col[static_cast<size_t>(t)] = 1;
        marked_order.push_back(t);
        ++have;
      }
    }
  }
  // Trim overshoot by unmasking the latest-marked steps.
  while (have > k) {
    col[static_cast<size_t>(marked_order[static_cast<size_t>(have - 1)])] = 0;
    --have;
  }
}

}  // namespace detail

// Builds a T x C mask with exactly round(ratio * T) masked steps per masked
// unit (per channel for the channel_* rules, shared across channels
// otherwise). mask_last marks the trailing steps deterministically.
inline BoolMat make_mask(int T, int C, const MaskSpec& spec, Rng& rng) {
  spec.validate();
  if (T <= 0 || C <= 0) throw ShapeError("make_mask: window dims must be positive");
  const int k = static_cast<int>(std::lround(spec.ratio * T));
  BoolMat mask(T, C);
  switch (spec.rule) {
    case MaskRule::binomial: {
      const auto pos = rng.sample_without_replacement(T, k);
      for (int t : pos)
        for (int c = 0; c < C; ++c) mask.at(t, c) = 1;
      break;
    }
    case MaskRule::channel_binomial: {
      for (int c = 0; c < C; ++c) {
        const auto pos = rng.sample_without_replacement(T, k);
        for (int t : pos) mask.at(t, c) = 1;
      }
      break;
    }
    case MaskRule::continuous: {
      std::vector<uint8_t> col(static_cast<size_t>(T));
      detail::continuous_column(col, T, k, spec.mean_segment_length, rng);
      for (int t = 0; t < T; ++t)
        if (col[static_cast<size_t>(t)])
          for (int c = 0; c < C; ++c) mask.at(t, c) = 1;
      break;
    }
    case MaskRule::channel_continuous: {
      std::vector<uint8_t> col(static_cast<size_t>(T));
      for (int c = 0; c < C; ++c) {
        detail::continuous_column(col, T, k, spec.mean_segment_length, rng);
        for (int t = 0; t < T; ++t) mask.at(t, c) = col[static_cast<size_t>(t)];
      }
      break;
    }
    case MaskRule::mask_last: {
      for (int t = T - k; t < T; ++t)
        for (int c = 0; c < C; ++c) mask.at(t, c) = 1;
      break;
    }
  }
  return mask;
}

// Applies a mask: masked entries are replaced with `fill` (default 0).
inline Mat apply_mask(const Mat& window, const BoolMat& mask, double fill = 0.0) {
  if (window.rows != mask.rows || window.cols != mask.cols)
    throw ShapeError("apply_mask: window and mask shapes differ");
  Mat out = window;
  for (int t = 0; t < out.rows; ++t)
    for (int c = 0; c < out.cols; ++c)
      if (mask.at(t, c)) out.at(t, c) = fill;
  return out;
}

// ---------------------------------------------------------------------------
// Past/current pair sampling.

// A training pair: a past window, the current window it must help
// reconstruct, the masked view of the current window, and their separation.
struct SiamesePair {
  Mat past;          // T x C, normalized
  Mat current;       // T x C, normalized (reconstruction target)
  Mat current_masked;  // T x C, masked view fed to the decoder path
  BoolMat mask;      // 1 where current was hidden
  NormStats past_stats;
  NormStats current_stats;
  int distance = 0;    // start(current) - start(past), in steps
  int current_start = 0;
};

// Builds the pair whose current window starts at `current_start`; the past
// window starts `d` steps earlier with d drawn uniformly from
// {0, ..., min(T * sampling_range, current_start)}. sampling_range = 0 pins
// the past window onto the current one (d = 0).
inline SiamesePair make_pair_at(const TimeSeriesFrame& frame, int current_start, int T,
                                int sampling_range, const MaskSpec& mask_spec, Rng& rng) {
  if (T <= 0) throw ConfigError("window length must be positive");
  if (sampling_range < 0) throw ConfigError("sampling range must be non-negative");
  if (current_start < 0 || current_start + T > frame.length())
    throw DataError("current window [" + std::to_string(current_start) + ", " +
                    std::to_string(current_start + T) + ") out of series of length " +
                    std::to_string(frame.length()));
  const int max_d = std::min(static_cast<int64_t>(T) * sampling_range,
                             static_cast<int64_t>(current_start));
  const int d = static_cast<int>(rng.uniform_int(0, max_d));

  SiamesePair pair;
  pair.distance = d;
  pair.current_start = current_start;
  const int C = frame.channels();
  pair.past = Mat(T, C);
  pair.current = Mat(T, C);
  const int past_start = current_start - d;
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      pair.past.at(t, c) = frame.values.at(past_start + t, c);
      pair.current.at(t, c) = frame.values.at(current_start + t, c);
    }
  pair.past_stats = instance_normalize(pair.past);
  pair.current_stats = instance_normalize(pair.current);
  pair.mask = make_mask(T, C, mask_spec, rng);
  pair.current_masked = apply_mask(pair.current, pair.mask);
  return pair;
}

// Uniformly picks a current window start in [0, L - T], then delegates to
// make_pair_at for the distance draw and masking.
inline SiamesePair sample_siamese_pair(const TimeSeriesFrame& frame, int T,
                                       int sampling_range, const MaskSpec& mask_spec,
                                       Rng& rng) {
  if (frame.length() < T)
    throw DataError("series of length " + std::to_string(frame.length()) +
                    " is shorter than window length " + std::to_string(T));
  const int current_start = static_cast<int>(rng.uniform_int(0, frame.length() - T));
  return make_pair_at(frame, current_start, T, sampling_range, mask_spec, rng);
}

// batch_size independent pairs; the current window of each is masked, the
// past window never is.
inline std::vector<SiamesePair> make_pretrain_batch(const TimeSeriesFrame& frame,
                                                    int batch_size, int T,
                                                    int sampling_range,
                                                    const MaskSpec& mask_spec, Rng& rng) {
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  std::vector<SiamesePair> batch;
  batch.reserve(static_cast<size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i)
    batch.push_back(sample_siamese_pair(frame, T, sampling_range, mask_spec, rng));
  return batch;
}

// ---------------------------------------------------------------------------
// Labeled windows (classification).

// Fixed-length labeled windows, stored as a simple text format:
//   # T=<int> C=<int> K=<int>
//   <label>,v(0,0),v(0,1),...,v(T-1,C-1)
// one window per line, values in row-major time x channel order.
struct LabeledWindows {
  int T = 0;
  int C = 0;
  int K = 0;  // number of classes; labels are 0..K-1
  std::vector<Mat> windows;
  std::vector<int> labels;

  size_t size() const { return windows.size(); }
};

inline LabeledWindows load_labeled_windows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open labeled data file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty labeled data file: " + path);

  LabeledWindows set;
  {
    std::istringstream hs(line);
    std::string hash;
    hs >> hash;
    if (hash != "#") throw DataError(path + ": first line must be '# T=<int> C=<int> K=<int>'");
    std::string tok;
    while (hs >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos)
        throw DataError(path + ": bad header token '" + tok + "'");
      const std::string key = tok.substr(0, eq);
      int val = 0;
      try {
        val = std::stoi(tok.substr(eq + 1));
      } catch (const std::exception&) {
        throw DataError(path + ": bad header value in '" + tok + "'");
      }
      if (key == "T") set.T = val;
      else if (key == "C") set.C = val;
      else if (key == "K") set.K = val;
      else throw DataError(path + ": unknown header key '" + key + "'");
    }
  }
  if (set.T <= 0 || set.C <= 0 || set.K <= 0)
    throw DataError(path + ": header must set positive T, C, and K");

  const size_t expect = 1 + static_cast<size_t>(set.T) * set.C;
  int row_number = 1;
  while (std::getline(in, line)) {
    ++row_number;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != expect)
      throw DataError(path + ": line " + std::to_string(row_number) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(expect));
    int label = 0;
    try {
      size_t pos = 0;
      label = std::stoi(detail::trim(fields[0]), &pos);
      if (pos != detail::trim(fields[0]).size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError(path + ": line " + std::to_string(row_number) +
                      ": unknown label token '" + detail::trim(fields[0]) + "'");
    }
    if (label < 0 || label >= set.K)
      throw DataError(path + ": line " + std::to_string(row_number) + ": label " +
                      std::to_string(label) + " outside [0, " + std::to_string(set.K) + ")");
    Mat w(set.T, set.C);
    for (size_t f = 1; f < fields.size(); ++f) {
      double val = 0.0;
      if (!detail::parse_double(fields[f], val))
        throw DataError(path + ": line " + std::to_string(row_number) +
                        ": cannot parse '" + detail::trim(fields[f]) + "' as a number");
      w.v[f - 1] = val;
    }
    set.windows.push_back(std::move(w));
    set.labels.push_back(label);
  }
  if (set.windows.empty()) throw DataError(path + ": no examples");
  return set;
}

inline void write_labeled_windows(const std::string& path, const LabeledWindows& set) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write labeled data file: " + path);
  out << std::setprecision(17);
  out << "# T=" << set.T << " C=" << set.C << " K=" << set.K << "\n";
  for (size_t i = 0; i < set.windows.size(); ++i) {
    out << set.labels[i];
    for (double val : set.windows[i].v) out << "," << val;
    out << "\n";
  }
}

}  // namespace timesiam
