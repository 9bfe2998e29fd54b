#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "voldist/errors.hpp"
#include "voldist/rng.hpp"

namespace voldist {

// ---------------------------------------------------------------------------
// Calendar time
// ---------------------------------------------------------------------------

namespace detail {

inline std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = static_cast<int>(yy + (m <= 2));
}

inline bool is_leap_year(int y) { return y % 4 == 0 && (y % 100 != 0 || y % 400 == 0); }

inline unsigned days_in_month(int y, unsigned m) {
  static constexpr unsigned kDays[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m == 2 && is_leap_year(y)) return 29;
  return kDays[m - 1];
}

inline int parse_fixed_int(const std::string& s, std::size_t pos, std::size_t len) {
  int value = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (i >= s.size() || s[i] < '0' || s[i] > '9') {
      throw ParseError("timestamp: expected digit at position " + std::to_string(i) + " in '" +
                       s + "'");
    }
    value = value * 10 + (s[i] - '0');
  }
  return value;
}

}  // namespace detail

// Calendar timestamp held as seconds since the Unix epoch (UTC, no leap
// seconds). Accepts ISO-8601 "YYYY-MM-DD" or "YYYY-MM-DDTHH:MM:SS".
struct Timestamp {
  std::int64_t seconds = 0;

  static Timestamp from_civil(int year, unsigned month, unsigned day, unsigned hour = 0,
                              unsigned minute = 0, unsigned second = 0) {
    if (month < 1 || month > 12) throw ParseError("timestamp: month out of range");
    if (day < 1 || day > detail::days_in_month(year, month)) {
      throw ParseError("timestamp: day out of range");
    }
    if (hour > 23 || minute > 59 || second > 59) {
      throw ParseError("timestamp: time of day out of range");
    }
    Timestamp t;
    t.seconds = detail::days_from_civil(year, month, day) * 86400 +
                static_cast<std::int64_t>(hour) * 3600 + minute * 60 + second;
    return t;
  }

  static Timestamp parse(const std::string& s) {
    if (s.size() != 10 && s.size() != 19) {
      throw ParseError("timestamp: '" + s + "' is neither YYYY-MM-DD nor YYYY-MM-DDTHH:MM:SS");
    }
    if (s[4] != '-' || s[7] != '-') throw ParseError("timestamp: bad date separators in '" + s + "'");
    const int year = detail::parse_fixed_int(s, 0, 4);
    const int month = detail::parse_fixed_int(s, 5, 2);
    const int day = detail::parse_fixed_int(s, 8, 2);
    int hour = 0, minute = 0, second = 0;
    if (s.size() == 19) {
      if (s[10] != 'T' || s[13] != ':' || s[16] != ':') {
        throw ParseError("timestamp: bad time separators in '" + s + "'");
      }
      hour = detail::parse_fixed_int(s, 11, 2);
      minute = detail::parse_fixed_int(s, 14, 2);
      second = detail::parse_fixed_int(s, 17, 2);
    }
    return from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day),
                      static_cast<unsigned>(hour), static_cast<unsigned>(minute),
                      static_cast<unsigned>(second));
  }

  // Date-only form at midnight, full form otherwise.
  std::string to_string() const {
    std::int64_t days = seconds / 86400;
    std::int64_t rem = seconds % 86400;
    if (rem < 0) {
      rem += 86400;
      --days;
    }
    int y;
    unsigned m, d;
    detail::civil_from_days(days, y, m, d);
    char buf[24];
    if (rem == 0) {
      std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", y, m, d);
    } else {
      const unsigned hh = static_cast<unsigned>(rem / 3600);
      const unsigned mm = static_cast<unsigned>((rem % 3600) / 60);
      const unsigned ss = static_cast<unsigned>(rem % 60);
      std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02u:%02u:%02u", y, m, d, hh, mm, ss);
    }
    return buf;
  }

  unsigned hour_of_day() const {
    std::int64_t rem = seconds % 86400;
    if (rem < 0) rem += 86400;
    return static_cast<unsigned>(rem / 3600);
  }

  friend bool operator==(const Timestamp& a, const Timestamp& b) { return a.seconds == b.seconds; }
  friend bool operator!=(const Timestamp& a, const Timestamp& b) { return a.seconds != b.seconds; }
  friend bool operator<(const Timestamp& a, const Timestamp& b) { return a.seconds < b.seconds; }
  friend bool operator<=(const Timestamp& a, const Timestamp& b) { return a.seconds <= b.seconds; }
  friend bool operator>(const Timestamp& a, const Timestamp& b) { return a.seconds > b.seconds; }
  friend bool operator>=(const Timestamp& a, const Timestamp& b) { return a.seconds >= b.seconds; }
};

enum class Resolution { hourly, daily };

inline std::string to_string(Resolution r) {
  return r == Resolution::hourly ? "hourly" : "daily";
}

inline Resolution resolution_from_string(const std::string& s) {
  if (s == "hourly") return Resolution::hourly;
  if (s == "daily") return Resolution::daily;
  throw ConfigError("unknown resolution '" + s + "' (expected hourly or daily)");
}

// ---------------------------------------------------------------------------
// Records and CSV ingestion
// ---------------------------------------------------------------------------

struct OhlcvRecord {
  std::string symbol;
  Timestamp timestamp;
  double open = 0;
  double high = 0;
  double low = 0;
  double close = 0;
  double volume = 0;

  void validate() const {
    const std::string id = symbol + "@" + timestamp.to_string();
    for (double p : {open, high, low, close}) {
      if (!std::isfinite(p) || p <= 0.0) {
        throw DataError("record " + id + ": prices must be finite and positive");
      }
    }
    if (!std::isfinite(volume) || volume < 0.0) {
      throw DataError("record " + id + ": volume must be finite and non-negative");
    }
    if (!(low <= std::min(open, close) && std::max(open, close) <= high)) {
      throw DataError("record " + id + ": violated low <= min(open, close) <= max(open, close) <= high");
    }
  }
};

inline constexpr const char* kCsvHeader = "symbol,timestamp,open,high,low,close,volume";

namespace detail {

inline double parse_csv_number(const std::string& field, std::size_t line_no) {
  if (field.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty numeric field");
  double value = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ParseError("line " + std::to_string(line_no) + ": '" + field + "' is not a number");
  }
  if (!std::isfinite(value)) {
    throw ParseError("line " + std::to_string(line_no) + ": non-finite number '" + field + "'");
  }
  return value;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace detail

// Loads and validates an OHLCV CSV. Records come back grouped by symbol in
// first-seen order, ascending in timestamp within each symbol.
inline std::vector<OhlcvRecord> load_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) throw FormatError("load_csv: '" + path + "' is empty");
  detail::strip_cr(line);
  if (line != kCsvHeader) {
    throw FormatError("load_csv: bad header '" + line + "', expected '" + kCsvHeader + "'");
  }
  std::vector<OhlcvRecord> records;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 7) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 7 fields, got " +
                       std::to_string(fields.size()));
    }
    OhlcvRecord rec;
    rec.symbol = fields[0];
    if (rec.symbol.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty symbol");
    }
    try {
      rec.timestamp = Timestamp::parse(fields[1]);
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    rec.open = detail::parse_csv_number(fields[2], line_no);
    rec.high = detail::parse_csv_number(fields[3], line_no);
    rec.low = detail::parse_csv_number(fields[4], line_no);
    rec.close = detail::parse_csv_number(fields[5], line_no);
    rec.volume = detail::parse_csv_number(fields[6], line_no);
    rec.validate();
    records.push_back(std::move(rec));
  }

  // Group by symbol (first appearance order), keep input order within a
  // symbol, then enforce strict timestamp monotonicity.
  std::vector<std::string> symbol_order;
  std::unordered_map<std::string, std::vector<OhlcvRecord>> by_symbol;
  for (auto& rec : records) {
    auto it = by_symbol.find(rec.symbol);
    if (it == by_symbol.end()) {
      symbol_order.push_back(rec.symbol);
      by_symbol[rec.symbol].push_back(std::move(rec));
    } else {
      it->second.push_back(std::move(rec));
    }
  }
  std::vector<OhlcvRecord> grouped;
  grouped.reserve(records.size());
  for (const auto& sym : symbol_order) {
    auto& rows = by_symbol[sym];
    std::stable_sort(rows.begin(), rows.end(), [](const OhlcvRecord& a, const OhlcvRecord& b) {
      return a.timestamp < b.timestamp;
    });
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (!(rows[i - 1].timestamp < rows[i].timestamp)) {
        throw DataError("symbol " + sym + ": duplicate timestamp " +
                        rows[i].timestamp.to_string());
      }
    }
    for (auto& r : rows) grouped.push_back(std::move(r));
  }
  return grouped;
}

inline void write_csv(const std::string& path, const std::vector<OhlcvRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("write_csv: cannot open '" + path + "' for writing");
  os << kCsvHeader << '\n';
  char buf[512];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g", r.symbol.c_str(),
                  r.timestamp.to_string().c_str(), r.open, r.high, r.low, r.close, r.volume);
    os << buf << '\n';
  }
  os.flush();
  if (!os) throw IoError("write_csv: write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Per-symbol z-score statistics over log(1+volume) and pooled log-prices,
// fitted on training-period records only so later data cannot leak in.
class NormalizationStats {
 public:
  struct SymbolStats {
    double volume_mean = 0;
    double volume_std = 1;
    double price_mean = 0;
    double price_std = 1;
  };

  // Fits on records with timestamp < train_end. Symbols without training
  // records or with a constant channel are rejected.
  static NormalizationStats fit(const std::vector<OhlcvRecord>& records, Timestamp train_end) {
    struct Acc {
      std::vector<double> volumes;
      std::vector<double> prices;
    };
    std::map<std::string, Acc> acc;
    for (const auto& r : records) {
      if (!(r.timestamp < train_end)) continue;
      auto& a = acc[r.symbol];
      a.volumes.push_back(std::log1p(r.volume));
      for (double p : {r.open, r.high, r.low, r.close}) a.prices.push_back(std::log(p));
    }
    NormalizationStats stats;
    for (auto& [sym, a] : acc) {
      SymbolStats s;
      s.volume_mean = mean(a.volumes);
      s.volume_std = stddev(a.volumes, s.volume_mean);
      s.price_mean = mean(a.prices);
      s.price_std = stddev(a.prices, s.price_mean);
      // A truly constant channel can still produce a std of a few ulps, so the
      // degeneracy test needs a relative floor rather than an exact-zero test.
      const double vol_floor = 1e-12 * std::max(1.0, std::abs(s.volume_mean));
      const double price_floor = 1e-12 * std::max(1.0, std::abs(s.price_mean));
      if (!(s.volume_std > vol_floor)) {
        throw DataError("normalization: symbol " + sym + " has constant volume in training data");
      }
      if (!(s.price_std > price_floor)) {
        throw DataError("normalization: symbol " + sym + " has constant prices in training data");
      }
      stats.by_symbol_.emplace(sym, s);
    }
    if (stats.by_symbol_.empty()) {
      throw DataError("normalization: no records precede the training boundary");
    }
    return stats;
  }

  bool has_symbol(const std::string& sym) const { return by_symbol_.count(sym) != 0; }

  const SymbolStats& symbol(const std::string& sym) const {
    auto it = by_symbol_.find(sym);
    if (it == by_symbol_.end()) {
      throw DataError("normalization: no statistics for symbol " + sym);
    }
    return it->second;
  }

  double normalize_volume(const std::string& sym, double volume) const {
    const auto& s = symbol(sym);
    return (std::log1p(volume) - s.volume_mean) / s.volume_std;
  }

  double denormalize_volume(const std::string& sym, double z) const {
    const auto& s = symbol(sym);
    return std::expm1(z * s.volume_std + s.volume_mean);
  }

  double normalize_price(const std::string& sym, double price) const {
    const auto& s = symbol(sym);
    return (std::log(price) - s.price_mean) / s.price_std;
  }

  std::size_t num_symbols() const { return by_symbol_.size(); }

 private:
  static double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }

  static double stddev(const std::vector<double>& v, double m) {
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
  }

  std::map<std::string, SymbolStats> by_symbol_;
};

// ---------------------------------------------------------------------------
// Windowing and splits
// ---------------------------------------------------------------------------

// One supervised sample: a normalized feature window and the next slot's
// normalized volume. Feature row order is open, close, low, high, volume.
struct WindowSample {
  std::string symbol;
  Timestamp window_start;
  Timestamp target_time;
  std::vector<double> features;  // window_len * 5
  double target = 0;
  double last_volume = 0;
};

// Builds sliding windows per symbol. Symbols with too little history or no
// normalization statistics are skipped, with a note appended to `warnings`.
inline std::vector<WindowSample> build_windows(const std::vector<OhlcvRecord>& records,
                                               std::size_t window_len, Resolution resolution,
                                               const NormalizationStats& stats,
                                               std::vector<std::string>* warnings = nullptr) {
  if (window_len == 0) throw ContractError("build_windows: window_len must be positive");
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };
  if (resolution == Resolution::daily) {
    for (const auto& r : records) {
      if (r.timestamp.seconds % 86400 != 0) {
        throw DataError("record " + r.symbol + "@" + r.timestamp.to_string() +
                        ": daily data must carry date-only timestamps");
      }
    }
  }

  std::vector<WindowSample> samples;
  std::size_t begin = 0;
  while (begin < records.size()) {
    std::size_t end = begin;
    while (end < records.size() && records[end].symbol == records[begin].symbol) ++end;
    const std::string& sym = records[begin].symbol;
    const std::size_t count = end - begin;
    if (!stats.has_symbol(sym)) {
      warn("symbol " + sym + ": no normalization statistics, skipped");
      begin = end;
      continue;
    }
    if (count <= window_len) {
      warn("symbol " + sym + ": " + std::to_string(count) +
           " records do not cover a window of " + std::to_string(window_len) + "+1, skipped");
      begin = end;
      continue;
    }
    for (std::size_t t = window_len; t < count; ++t) {
      WindowSample s;
      s.symbol = sym;
      s.window_start = records[begin + t - window_len].timestamp;
      s.target_time = records[begin + t].timestamp;
      s.features.reserve(window_len * 5);
      for (std::size_t k = t - window_len; k < t; ++k) {
        const auto& r = records[begin + k];
        s.features.push_back(stats.normalize_price(sym, r.open));
        s.features.push_back(stats.normalize_price(sym, r.close));
        s.features.push_back(stats.normalize_price(sym, r.low));
        s.features.push_back(stats.normalize_price(sym, r.high));
        s.features.push_back(stats.normalize_volume(sym, r.volume));
      }
      s.target = stats.normalize_volume(sym, records[begin + t].volume);
      s.last_volume = s.features[(window_len - 1) * 5 + 4];
      samples.push_back(std::move(s));
    }
    begin = end;
  }
  return samples;
}

struct SplitBoundaries {
  Timestamp validation_start;
  Timestamp test_start;

  void validate() const {
    if (!(validation_start < test_start)) {
      throw ConfigError("split boundaries must satisfy validation_start < test_start");
    }
  }
};

struct SplitResult {
  std::vector<WindowSample> train;
  std::vector<WindowSample> validation;
  std::vector<WindowSample> test;
};

// Chronological three-way split. A sample belongs to train only if its whole
// window and target precede validation_start; windows straddling a boundary
// are dropped so no timestamp is shared across splits.
inline SplitResult chronological_split(std::vector<WindowSample> samples,
                                       const SplitBoundaries& b) {
  b.validate();
  SplitResult out;
  for (auto& s : samples) {
    if (s.target_time < b.validation_start) {
      out.train.push_back(std::move(s));
    } else if (s.window_start >= b.validation_start && s.target_time < b.test_start) {
      out.validation.push_back(std::move(s));
    } else if (s.window_start >= b.test_start) {
      out.test.push_back(std::move(s));
    }
  }
  if (out.train.empty()) throw ConfigError("chronological_split: training split is empty");
  if (out.validation.empty()) throw ConfigError("chronological_split: validation split is empty");
  if (out.test.empty()) throw ConfigError("chronological_split: test split is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Moving-average baselines
// ---------------------------------------------------------------------------

// Mean of the last `t` values.
inline double sma_predict(const std::vector<double>& history, std::size_t t = 20) {
  if (t == 0) throw ContractError("sma_predict: window must be positive");
  if (history.size() < t) {
    throw InsufficientHistoryError("sma_predict: need " + std::to_string(t) + " values, have " +
                                   std::to_string(history.size()));
  }
  double s = 0;
  for (std::size_t i = history.size() - t; i < history.size(); ++i) s += history[i];
  return s / static_cast<double>(t);
}

// Exponential moving average y_t = rho * x_t + (1 - rho) * y_{t-1}, seeded
// with y_1 = x_1; returns y_T.
inline double ema_predict(const std::vector<double>& history, double rho = 0.04) {
  if (history.empty()) throw ContractError("ema_predict: history must not be empty");
  if (rho < 0.0 || rho > 1.0) throw ConfigError("ema_predict: rho must lie in [0, 1]");
  double y = history[0];
  for (std::size_t i = 1; i < history.size(); ++i) y = rho * history[i] + (1.0 - rho) * y;
  return y;
}

// Per-symbol lookup of normalized volume history for the moving-average
// baselines. Hourly data uses same-hour-of-day series so a 20-step SMA spans
// the same slot across the prior 20 trading days; daily data uses the plain
// series.
class BaselineIndex {
 public:
  BaselineIndex(const std::vector<OhlcvRecord>& records, const NormalizationStats& stats,
                Resolution resolution)
      : resolution_(resolution) {
    for (const auto& r : records) {
      if (!stats.has_symbol(r.symbol)) continue;
      const double nv = stats.normalize_volume(r.symbol, r.volume);
      series_[key(r.symbol, r.timestamp)].emplace_back(r.timestamp, nv);
    }
    for (auto& [k, v] : series_) {
      std::stable_sort(v.begin(), v.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
    }
  }

  // Normalized volumes strictly before `at` in the slot series the target
  // belongs to.
  std::vector<double> history_before(const std::string& symbol, Timestamp at) const {
    auto it = series_.find(key(symbol, at));
    std::vector<double> out;
    if (it == series_.end()) return out;
    for (const auto& [ts, nv] : it->second) {
      if (ts < at) {
        out.push_back(nv);
      } else {
        break;
      }
    }
    return out;
  }

  double sma(const std::string& symbol, Timestamp target, std::size_t t = 20) const {
    return sma_predict(history_before(symbol, target), t);
  }

  double ema(const std::string& symbol, Timestamp target, double rho = 0.04) const {
    const auto h = history_before(symbol, target);
    if (h.empty()) {
      throw InsufficientHistoryError("ema: no history for " + symbol + " before " +
                                     target.to_string());
    }
    return ema_predict(h, rho);
  }

 private:
  std::string key(const std::string& symbol, Timestamp ts) const {
    if (resolution_ == Resolution::hourly) {
      return symbol + "#" + std::to_string(ts.hour_of_day());
    }
    return symbol;
  }

  Resolution resolution_;
  std::map<std::string, std::vector<std::pair<Timestamp, double>>> series_;
};

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

inline constexpr double kSynthTwoPi = 6.283185307179586476925286766559;

// Controls for the synthetic OHLCV generator. Log-volume per symbol is a
// symbol-specific level plus an intraday (or intraweek) seasonal pattern plus
// a stationary AR(1) component plus observation noise, with an optional
// boost from the magnitude of the concurrent price move.
struct SynthSpec {
  std::size_t num_symbols = 50;
  std::size_t num_slots = 2000;  // per symbol
  std::uint64_t seed = 0;
  Resolution resolution = Resolution::hourly;
  std::size_t hours_per_day = 6;
  unsigned open_hour = 9;
  int start_year = 2015;
  double ar_coeff = 0.8;        // lag-1 autocorrelation of the AR(1) part
  double ar_std = 0.5;          // stationary standard deviation of the AR(1) part
  double season_amplitude = 0.4;
  double obs_noise_std = 0.1;
  double level_mean = 10.0;
  double level_spread = 1.5;
  double price_vol = 0.02;
  double price_volume_coupling = 0.3;

  void validate() const {
    if (num_symbols == 0 || num_slots == 0) {
      throw ConfigError("SynthSpec: num_symbols and num_slots must be positive");
    }
    if (!(ar_coeff > -1.0 && ar_coeff < 1.0)) {
      throw ConfigError("SynthSpec: ar_coeff must lie in (-1, 1)");
    }
    if (ar_std < 0 || season_amplitude < 0 || obs_noise_std < 0 || level_spread < 0 ||
        price_vol <= 0 || price_volume_coupling < 0) {
      throw ConfigError("SynthSpec: scales must be non-negative (price_vol positive)");
    }
    if (resolution == Resolution::hourly && (hours_per_day == 0 || open_hour + hours_per_day > 24)) {
      throw ConfigError("SynthSpec: trading hours must fit within a day");
    }
  }
};

inline std::vector<OhlcvRecord> synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::int64_t day0 = detail::days_from_civil(spec.start_year, 1, 1);
  std::vector<OhlcvRecord> records;
  records.reserve(spec.num_symbols * spec.num_slots);
  const double innovation_std = spec.ar_std * std::sqrt(1.0 - spec.ar_coeff * spec.ar_coeff);
  const double expected_abs_normal = std::sqrt(2.0 / 3.141592653589793);

  for (std::size_t sidx = 0; sidx < spec.num_symbols; ++sidx) {
    char name[16];
    std::snprintf(name, sizeof(name), "SYM%03zu", sidx);
    const double level = spec.level_mean + rng.uniform(-spec.level_spread, spec.level_spread);
    double ar_state = spec.ar_std > 0 ? rng.normal(0.0, spec.ar_std) : 0.0;
    double log_price = std::log(20.0 + rng.uniform(0.0, 180.0));

    for (std::size_t t = 0; t < spec.num_slots; ++t) {
      OhlcvRecord rec;
      rec.symbol = name;

      std::int64_t day;
      unsigned hour;
      double season_phase;
      if (spec.resolution == Resolution::hourly) {
        day = day0 + static_cast<std::int64_t>(t / spec.hours_per_day);
        const std::size_t slot = t % spec.hours_per_day;
        hour = spec.open_hour + static_cast<unsigned>(slot);
        season_phase = spec.hours_per_day > 1
                           ? static_cast<double>(slot) / static_cast<double>(spec.hours_per_day)
                           : 0.0;
      } else {
        day = day0 + static_cast<std::int64_t>(t);
        hour = 0;
        season_phase = static_cast<double>(t % 5) / 5.0;
      }
      rec.timestamp.seconds = day * 86400 + static_cast<std::int64_t>(hour) * 3600;

      // U-shaped within the period: heavy at open and close.
      const double season = spec.season_amplitude * std::cos(kSynthTwoPi * season_phase);

      const double ret = rng.normal(0.0, spec.price_vol);
      const double open = std::exp(log_price);
      log_price += ret;
      const double close = std::exp(log_price);
      const double wick_up = std::abs(rng.normal(0.0, spec.price_vol * 0.5));
      const double wick_down = std::abs(rng.normal(0.0, spec.price_vol * 0.5));
      rec.open = open;
      rec.close = close;
      rec.high = std::max(open, close) * std::exp(wick_up);
      rec.low = std::min(open, close) * std::exp(-wick_down);

      if (spec.ar_std > 0) {
        ar_state = spec.ar_coeff * ar_state + rng.normal(0.0, innovation_std);
      }
      double log_volume = level + season + ar_state;
      if (spec.obs_noise_std > 0) log_volume += rng.normal(0.0, spec.obs_noise_std);
      if (spec.price_volume_coupling > 0) {
        log_volume +=
            spec.price_volume_coupling * (std::abs(ret) / spec.price_vol - expected_abs_normal);
      }
      rec.volume = std::expm1(std::max(log_volume, 0.0));

      rec.validate();
      records.push_back(std::move(rec));
    }
  }
  return records;
}

}  // namespace voldist
