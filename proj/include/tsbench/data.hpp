#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsbench/tensor.hpp"

namespace tsbench {

// A set of N aligned series. values[i] has T*d_x entries (step-major); the
// mask parallels values with 1=observed. Exogenous channels are shared across
// series. Immutable after load by convention.
struct SeriesCollection {
  int n_series = 0;
  int n_steps = 0;
  int d_x = 1;
  int d_u = 0;
  std::vector<std::vector<double>> values;  // per series, T*d_x
  std::vector<std::vector<double>> mask;    // per series, T*d_x; empty => all observed
  std::vector<double> exogenous;            // T*d_u, row-major
  std::vector<long long> timestamps;        // epoch seconds, length T
  long long frequency = 0;                  // seconds per step
  std::vector<std::string> names;

  bool has_mask() const { return !mask.empty(); }
  double value_at(int series, int t, int c = 0) const {
    return values[static_cast<std::size_t>(series)][static_cast<std::size_t>(t) * d_x + c];
  }
  double mask_at(int series, int t, int c = 0) const {
    if (mask.empty()) return 1.0;
    return mask[static_cast<std::size_t>(series)][static_cast<std::size_t>(t) * d_x + c];
  }
  double exog_at(int t, int c) const { return exogenous[static_cast<std::size_t>(t) * d_u + c]; }

  void check() const {
    if (static_cast<int>(values.size()) != n_series)
      throw std::invalid_argument("collection: series count mismatch");
    for (const auto& v : values)
      if (static_cast<long long>(v.size()) != static_cast<long long>(n_steps) * d_x)
        throw std::invalid_argument("collection: ragged series values");
    if (!mask.empty() && mask.size() != values.size())
      throw std::invalid_argument("collection: mask/series count mismatch");
    if (d_u > 0 && static_cast<long long>(exogenous.size()) != static_cast<long long>(n_steps) * d_u)
      throw std::invalid_argument("collection: exogenous size mismatch");
    if (d_x < 1) throw std::invalid_argument("collection: d_x must be >= 1");
  }
};

struct SplitSpec {
  double train = 0.7, val = 0.1, test = 0.2;
};

struct IndexRange {
  int begin = 0, end = 0;  // half-open step range
  int length() const { return end - begin; }
};

struct Splits {
  IndexRange train, val, test;
};

// Chronological train -> val -> test blocks; floor arithmetic with the
// remainder assigned to test.
inline Splits split(const SeriesCollection& c, const SplitSpec& spec) {
  const double sum = spec.train + spec.val + spec.test;
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions sum to " + std::to_string(sum) + ", expected 1");
  if (spec.train < 0 || spec.val < 0 || spec.test < 0)
    throw std::invalid_argument("split: negative fraction");
  const int T = c.n_steps;
  const int n_train = static_cast<int>(std::floor(spec.train * T));
  const int n_val = static_cast<int>(std::floor(spec.val * T));
  Splits s;
  s.train = {0, n_train};
  s.val = {n_train, n_train + n_val};
  s.test = {n_train + n_val, T};
  return s;
}

// Per-series per-channel standardization fit on the train block only. Masked
// entries are excluded from the statistics.
struct Scaler {
  int n_series = 0, d_x = 1;
  std::vector<double> mean;  // n_series*d_x
  std::vector<double> stddev;

  static constexpr double kMinStd = 1e-8;

  static Scaler fit(const SeriesCollection& c, const IndexRange& train) {
    Scaler s;
    s.n_series = c.n_series;
    s.d_x = c.d_x;
    s.mean.assign(static_cast<std::size_t>(c.n_series) * c.d_x, 0.0);
    s.stddev.assign(static_cast<std::size_t>(c.n_series) * c.d_x, 1.0);
    for (int i = 0; i < c.n_series; ++i)
      for (int ch = 0; ch < c.d_x; ++ch) {
        double sum = 0.0, count = 0.0;
        for (int t = train.begin; t < train.end; ++t)
          if (c.mask_at(i, t, ch) > 0.5) {
            sum += c.value_at(i, t, ch);
            count += 1.0;
          }
        if (count == 0.0)
          throw std::invalid_argument("scaler: series " + std::to_string(i) + " channel " +
                                      std::to_string(ch) + " fully masked in train block");
        const double mu = sum / count;
        double ss = 0.0;
        for (int t = train.begin; t < train.end; ++t)
          if (c.mask_at(i, t, ch) > 0.5) {
            const double d = c.value_at(i, t, ch) - mu;
            ss += d * d;
          }
        const std::size_t k = static_cast<std::size_t>(i) * c.d_x + ch;
        s.mean[k] = mu;
        s.stddev[k] = std::max(std::sqrt(ss / count), kMinStd);
      }
    return s;
  }

  double apply_one(double v, int series, int ch) const {
    const std::size_t k = static_cast<std::size_t>(series) * d_x + ch;
    return (v - mean[k]) / stddev[k];
  }
  double invert_one(double v, int series, int ch) const {
    const std::size_t k = static_cast<std::size_t>(series) * d_x + ch;
    return v * stddev[k] + mean[k];
  }

  SeriesCollection apply(const SeriesCollection& c) const {
    SeriesCollection out = c;
    for (int i = 0; i < c.n_series; ++i)
      for (int t = 0; t < c.n_steps; ++t)
        for (int ch = 0; ch < c.d_x; ++ch)
          out.values[static_cast<std::size_t>(i)][static_cast<std::size_t>(t) * c.d_x + ch] =
              apply_one(c.value_at(i, t, ch), i, ch);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Calendar covariates: sin/cos of hour-of-day, day-of-week, day-of-year.

namespace detail {
// Civil-from-days; days since 1970-01-01.
struct CivilDate { int y, m, d; };
inline CivilDate civil_from_days(long long z) {
  z += 719468;
  const long long era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long long y = static_cast<long long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}
inline bool leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }
inline int day_of_year(const CivilDate& c) {
  static const int cum[12] = {0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334};
  int d = cum[c.m - 1] + c.d - 1;
  if (c.m > 2 && leap(c.y)) ++d;
  return d;
}
}  // namespace detail

inline constexpr int kCalendarChannels = 6;

// T x 6 matrix; all values in [-1, 1].
inline std::vector<double> encode_calendar(const std::vector<long long>& timestamps) {
  constexpr double two_pi = 6.283185307179586477;
  std::vector<double> out(timestamps.size() * kCalendarChannels);
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    const long long ts = timestamps[i];
    const long long day = ts >= 0 ? ts / 86400 : (ts - 86399) / 86400;
    const double sec = static_cast<double>(ts - day * 86400);
    const double frac_day = sec / 86400.0;
    const double dow = static_cast<double>((day % 7 + 7 + 3) % 7);  // Monday = 0
    const auto cd = detail::civil_from_days(day);
    const double year_len = detail::leap(cd.y) ? 366.0 : 365.0;
    const double frac_year = (detail::day_of_year(cd) + frac_day) / year_len;
    double* row = out.data() + i * kCalendarChannels;
    row[0] = std::sin(two_pi * frac_day);
    row[1] = std::cos(two_pi * frac_day);
    row[2] = std::sin(two_pi * (dow + frac_day) / 7.0);
    row[3] = std::cos(two_pi * (dow + frac_day) / 7.0);
    row[4] = std::sin(two_pi * frac_year);
    row[5] = std::cos(two_pi * frac_year);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windowing

// One sampled batch. B entries; when group_size > 1 the entries come in
// groups of `group_size` consecutive rows that share the same time window
// across series (spatial batching).
struct WindowBatch {
  Tensor past;         // B x W x d_x
  Tensor past_exog;    // B x W x d_u (d_u may be 0 -> empty tensor)
  Tensor future_exog;  // B x H x d_u
  Tensor target;       // B x H x d_x
  Tensor past_mask;    // B x W x d_x
  Tensor target_mask;  // B x H x d_x
  std::vector<int> series_ids;  // length B
  int group_size = 1;
};

enum class BatchMode { PerSeries, Grouped };

// Enumerates window start offsets within a block; windows never straddle the
// block boundary.
inline std::vector<int> window_starts(const IndexRange& block, int W, int H, int stride) {
  if (stride < 1) throw std::invalid_argument("make_windows: stride must be >= 1");
  if (W < 1 || H < 1) throw std::invalid_argument("make_windows: W and H must be >= 1");
  if (W + H > block.length())
    throw std::invalid_argument("make_windows: window " + std::to_string(W) + "+" + std::to_string(H) +
                                " exceeds block length " + std::to_string(block.length()));
  std::vector<int> starts;
  for (int s = block.begin; s + W + H <= block.end; s += stride) starts.push_back(s);
  return starts;
}

class WindowSampler {
 public:
  WindowSampler(const SeriesCollection& c, IndexRange block, int W, int H, int stride,
                BatchMode mode)
      : c_(&c), block_(block), W_(W), H_(H), mode_(mode), starts_(window_starts(block, W, H, stride)) {}

  // Number of batch items (window instances).
  long long count() const {
    return mode_ == BatchMode::Grouped ? static_cast<long long>(starts_.size())
                                       : static_cast<long long>(starts_.size()) * c_->n_series;
  }
  int window() const { return W_; }
  int horizon() const { return H_; }
  BatchMode mode() const { return mode_; }
  const SeriesCollection& collection() const { return *c_; }

  // Items are indexed 0..count(); per-series mode flattens (start, series).
  WindowBatch make_batch(const std::vector<long long>& items) const {
    const int d_x = c_->d_x, d_u = c_->d_u;
    const int group = mode_ == BatchMode::Grouped ? c_->n_series : 1;
    const int B = static_cast<int>(items.size()) * group;
    WindowBatch b;
    b.group_size = group;
    b.past = Tensor({B, W_, d_x});
    b.target = Tensor({B, H_, d_x});
    b.past_mask = Tensor({B, W_, d_x}, 1.0);
    b.target_mask = Tensor({B, H_, d_x}, 1.0);
    if (d_u > 0) {
      b.past_exog = Tensor({B, W_, d_u});
      b.future_exog = Tensor({B, H_, d_u});
    }
    b.series_ids.resize(static_cast<std::size_t>(B));
    int row = 0;
    for (long long item : items) {
      int start, first_series, n_rows;
      if (mode_ == BatchMode::Grouped) {
        start = starts_[static_cast<std::size_t>(item)];
        first_series = 0;
        n_rows = c_->n_series;
      } else {
        start = starts_[static_cast<std::size_t>(item / c_->n_series)];
        first_series = static_cast<int>(item % c_->n_series);
        n_rows = 1;
      }
      for (int r = 0; r < n_rows; ++r, ++row) {
        const int sid = first_series + r;
        b.series_ids[static_cast<std::size_t>(row)] = sid;
        for (int t = 0; t < W_; ++t)
          for (int ch = 0; ch < d_x; ++ch) {
            const double m = c_->mask_at(sid, start + t, ch);
            b.past.at(row, t, ch) = m > 0.5 ? c_->value_at(sid, start + t, ch) : 0.0;
            b.past_mask.at(row, t, ch) = m;
          }
        for (int t = 0; t < H_; ++t)
          for (int ch = 0; ch < d_x; ++ch) {
            const double m = c_->mask_at(sid, start + W_ + t, ch);
            b.target.at(row, t, ch) = m > 0.5 ? c_->value_at(sid, start + W_ + t, ch) : 0.0;
            b.target_mask.at(row, t, ch) = m;
          }
        if (d_u > 0) {
          for (int t = 0; t < W_; ++t)
            for (int ch = 0; ch < d_u; ++ch) b.past_exog.at(row, t, ch) = c_->exog_at(start + t, ch);
          for (int t = 0; t < H_; ++t)
            for (int ch = 0; ch < d_u; ++ch)
              b.future_exog.at(row, t, ch) = c_->exog_at(start + W_ + t, ch);
        }
      }
    }
    return b;
  }

  // Deterministic evaluation order (stride already applied at construction).
  std::vector<long long> all_items() const {
    std::vector<long long> v(static_cast<std::size_t>(count()));
    std::iota(v.begin(), v.end(), 0);
    return v;
  }

  std::vector<long long> shuffled_items(std::uint64_t seed) const {
    auto v = all_items();
    std::mt19937_64 gen(seed);
    std::shuffle(v.begin(), v.end(), gen);
    return v;
  }

 private:
  const SeriesCollection* c_;
  IndexRange block_;
  int W_, H_;
  BatchMode mode_;
  std::vector<int> starts_;
};

// Treats the N aligned univariate series as one multivariate series with
// d_x = N channels (the Eq.-2-style view).
inline SeriesCollection as_joint(const SeriesCollection& c) {
  if (c.d_x != 1) throw std::invalid_argument("as_joint: requires d_x=1 series");
  SeriesCollection out;
  out.n_series = 1;
  out.n_steps = c.n_steps;
  out.d_x = c.n_series;
  out.d_u = c.d_u;
  out.exogenous = c.exogenous;
  out.timestamps = c.timestamps;
  out.frequency = c.frequency;
  out.names = {"joint"};
  out.values.assign(1, std::vector<double>(static_cast<std::size_t>(c.n_steps) * c.n_series));
  const bool masked = c.has_mask();
  if (masked) out.mask.assign(1, std::vector<double>(static_cast<std::size_t>(c.n_steps) * c.n_series));
  for (int t = 0; t < c.n_steps; ++t)
    for (int i = 0; i < c.n_series; ++i) {
      out.values[0][static_cast<std::size_t>(t) * c.n_series + i] = c.value_at(i, t, 0);
      if (masked) out.mask[0][static_cast<std::size_t>(t) * c.n_series + i] = c.mask_at(i, t, 0);
    }
  return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion. First column is a timestamp; every remaining column is one
// univariate series.

namespace detail {

inline bool parse_timestamp(const std::string& field, long long& out) {
  // Epoch seconds.
  if (!field.empty() && (std::isdigit(static_cast<unsigned char>(field[0])) || field[0] == '-')) {
    bool numeric = true;
    for (char ch : field)
      if (!std::isdigit(static_cast<unsigned char>(ch)) && ch != '-') { numeric = false; break; }
    if (numeric && field.find('-', 1) == std::string::npos) {
      out = std::stoll(field);
      return true;
    }
  }
  // "YYYY-MM-DD[ T]HH:MM[:SS]" or bare "YYYY-MM-DD".
  int y, mo, d, h = 0, mi = 0, se = 0;
  char sep;
  std::istringstream ss(field);
  ss >> y >> sep >> mo >> sep >> d;
  if (ss.fail() || y < 1600 || mo < 1 || mo > 12 || d < 1 || d > 31) return false;
  if (!ss.eof()) {
    char tsep = static_cast<char>(ss.get());
    if (tsep != ' ' && tsep != 'T') return false;
    ss >> h >> sep >> mi;
    if (ss.fail()) return false;
    if (!ss.eof()) {
      ss >> sep >> se;
      if (ss.fail()) return false;
    }
  }
  // days_from_civil (inverse of civil_from_days above).
  const int yy = y - (mo <= 2);
  const long long era = (yy >= 0 ? yy : yy - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(yy - era * 400);
  const unsigned doy = (153u * (mo > 2 ? mo - 3 : mo + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  const long long days = era * 146097 + static_cast<long long>(doe) - 719468;
  out = days * 86400 + h * 3600 + mi * 60 + se;
  return true;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline SeriesCollection load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("load_csv: empty file " + path);
  auto header = detail::split_csv_line(line);
  if (header.size() < 2)
    throw std::invalid_argument("load_csv: header must have a timestamp column plus series columns");
  SeriesCollection c;
  c.n_series = static_cast<int>(header.size()) - 1;
  c.d_x = 1;
  c.names.assign(header.begin() + 1, header.end());
  c.values.assign(static_cast<std::size_t>(c.n_series), {});
  long long row_no = 1;
  long long prev_ts = 0;
  bool have_prev = false;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw std::invalid_argument("load_csv: row " + std::to_string(row_no) + " has " +
                                  std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(header.size()));
    long long ts;
    if (!detail::parse_timestamp(fields[0], ts))
      throw std::invalid_argument("load_csv: row " + std::to_string(row_no) +
                                  ": unparseable timestamp '" + fields[0] + "'");
    if (have_prev && ts <= prev_ts)
      throw std::invalid_argument("load_csv: row " + std::to_string(row_no) +
                                  ": non-monotone timestamp");
    prev_ts = ts;
    have_prev = true;
    c.timestamps.push_back(ts);
    for (int i = 0; i < c.n_series; ++i) {
      const std::string& f = fields[static_cast<std::size_t>(i) + 1];
      try {
        c.values[static_cast<std::size_t>(i)].push_back(std::stod(f));
      } catch (const std::exception&) {
        throw std::invalid_argument("load_csv: row " + std::to_string(row_no) + ": bad value '" + f +
                                    "'");
      }
    }
  }
  c.n_steps = static_cast<int>(c.timestamps.size());
  if (c.n_steps == 0) throw std::invalid_argument("load_csv: no data rows in " + path);
  if (c.n_steps >= 2) {
    // Median first difference as the inferred frequency.
    std::vector<long long> diffs;
    diffs.reserve(static_cast<std::size_t>(c.n_steps) - 1);
    for (int t = 1; t < c.n_steps; ++t) diffs.push_back(c.timestamps[static_cast<std::size_t>(t)] -
                                                        c.timestamps[static_cast<std::size_t>(t) - 1]);
    std::nth_element(diffs.begin(), diffs.begin() + diffs.size() / 2, diffs.end());
    c.frequency = diffs[diffs.size() / 2];
  }
  c.check();
  return c;
}

inline std::string format_timestamp(long long ts) {
  const long long day = ts >= 0 ? ts / 86400 : (ts - 86399) / 86400;
  const int sec = static_cast<int>(ts - day * 86400);
  const auto cd = detail::civil_from_days(day);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d %02d:%02d:%02d", cd.y, cd.m, cd.d, sec / 3600,
                (sec % 3600) / 60, sec % 60);
  return buf;
}

inline void save_csv(const SeriesCollection& c, const std::string& path) {
  if (c.d_x != 1) throw std::invalid_argument("save_csv: only d_x=1 collections");
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("save_csv: cannot open " + path);
  out << "date";
  for (int i = 0; i < c.n_series; ++i)
    out << "," << (i < static_cast<int>(c.names.size()) ? c.names[static_cast<std::size_t>(i)]
                                                        : "s" + std::to_string(i));
  out << "\n";
  out.precision(17);
  for (int t = 0; t < c.n_steps; ++t) {
    out << format_timestamp(c.timestamps[static_cast<std::size_t>(t)]);
    for (int i = 0; i < c.n_series; ++i) out << "," << c.value_at(i, t, 0);
    out << "\n";
  }
}

}  // namespace tsbench
