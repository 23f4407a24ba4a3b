#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "canskew/error.hpp"
#include "canskew/frame.hpp"

// Clock-skew fingerprinting from periodic arrivals.
//
// A batch of N consecutive arrivals a_0..a_{N-1} of one id is compared with
// the ideal grid a_0 + i*T; the mean gap is the batch's average clock
// offset. Batches advance by N/2 arrivals, so the running sum of batch
// offsets grows by skew * (N/2) * T per batch, i.e. its slope against
// elapsed time is the clock skew itself (us/s, numerically ppm).
namespace canskew {

struct OffsetBatch {
  FrameId id;
  std::size_t index = 0;
  double avg_offset_us = 0.0;
  Micros start_time_us = 0;
  Micros end_time_us = 0;
  std::size_t n = 0;
  double mean_interval_us = 0.0;
  double min_interval_us = 0.0;
  double max_interval_us = 0.0;
};

enum class AccumulationMode { Absolute, Signed };

struct SeriesPoint {
  Micros elapsed_us = 0;
  double accumulated_us = 0.0;
  friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

struct AccumulatedOffsetSeries {
  FrameId id;
  Micros origin_us = 0;  // receiver time at which elapsed time is zero
  std::vector<SeriesPoint> points;
};

/// Mean of a_i - (a_0 + i*T) over i = 1..N-1.
template <class T>
double batch_avg_offset(std::span<const T> arrivals, double period_us) {
  if (arrivals.size() < 2) throw Error(ErrorCode::InsufficientData, "batch needs at least 2 arrivals");
  const double a0 = static_cast<double>(arrivals[0]);
  double sum = 0.0;
  for (std::size_t i = 1; i < arrivals.size(); ++i) {
    if (!(arrivals[i] > arrivals[i - 1]))
      throw Error(ErrorCode::InvalidInput, "batch arrivals must be strictly increasing");
    sum += static_cast<double>(arrivals[i]) - (a0 + static_cast<double>(i) * period_us);
  }
  return sum / static_cast<double>(arrivals.size() - 1);
}

inline double batch_avg_offset(std::initializer_list<double> arrivals, double period_us) {
  return batch_avg_offset(std::span<const double>(arrivals.begin(), arrivals.size()), period_us);
}

/// Batches of `size` arrivals starting every `hop` arrivals.
template <class T>
std::vector<OffsetBatch> make_batches(FrameId id, std::span<const T> arrivals, double period_us, std::size_t size,
                                      std::size_t hop) {
  if (size < 2 || hop == 0) throw Error(ErrorCode::InvalidInput, "batch size must be >= 2 and hop >= 1");
  std::vector<OffsetBatch> out;
  for (std::size_t s = 0; s + size <= arrivals.size(); s += hop) {
    const auto window = arrivals.subspan(s, size);
    OffsetBatch b;
    b.id = id;
    b.index = out.size();
    b.avg_offset_us = batch_avg_offset(window, period_us);
    b.start_time_us = static_cast<Micros>(std::llround(static_cast<double>(window.front())));
    b.end_time_us = static_cast<Micros>(std::llround(static_cast<double>(window.back())));
    b.n = size;
    b.mean_interval_us = static_cast<double>(window.back() - window.front()) / static_cast<double>(size - 1);
    b.min_interval_us = b.max_interval_us = static_cast<double>(window[1] - window[0]);
    for (std::size_t i = 2; i < size; ++i) {
      const double gap = static_cast<double>(window[i] - window[i - 1]);
      b.min_interval_us = std::min(b.min_interval_us, gap);
      b.max_interval_us = std::max(b.max_interval_us, gap);
    }
    out.push_back(b);
  }
  return out;
}

/// Running sum of batch offsets. Elapsed time counts from one batch step
/// before the first batch ends, where the sum is zero; with `origin_us`
/// unset that step is taken from the first two batch end times.
inline AccumulatedOffsetSeries accumulate(std::span<const OffsetBatch> batches,
                                          AccumulationMode mode = AccumulationMode::Absolute,
                                          std::optional<Micros> origin_us = std::nullopt) {
  AccumulatedOffsetSeries series;
  if (batches.empty()) return series;
  series.id = batches.front().id;
  const Micros step = batches.size() > 1 ? batches[1].end_time_us - batches[0].end_time_us
                                         : batches[0].end_time_us - batches[0].start_time_us;
  series.origin_us = origin_us.value_or(batches.front().end_time_us - std::max<Micros>(step, 1));
  double acc = 0.0;
  for (std::size_t k = 0; k < batches.size(); ++k) {
    const auto& b = batches[k];
    if (b.id != series.id) throw Error(ErrorCode::InvalidInput, "accumulate over mixed frame ids");
    if (k > 0 && b.end_time_us <= batches[k - 1].end_time_us)
      throw Error(ErrorCode::InvalidInput, "batch end times must be strictly increasing");
    acc += mode == AccumulationMode::Absolute ? std::abs(b.avg_offset_us) : b.avg_offset_us;
    series.points.push_back(SeriesPoint{b.end_time_us - series.origin_us, acc});
  }
  return series;
}

struct EstimatorConfig {
  double lambda = 0.9995;
  double z = 3.0;
  std::size_t min_batches = 10;
};

inline void validate(const EstimatorConfig& cfg) {
  if (!(cfg.lambda > 0.9 && cfg.lambda <= 1.0)) throw Error(ErrorCode::InvalidInput, "lambda must be in (0.9, 1]");
  if (!(cfg.z > 0.0)) throw Error(ErrorCode::InvalidInput, "z must be > 0");
  if (cfg.min_batches < 2) throw Error(ErrorCode::InvalidInput, "min_batches must be >= 2");
}

/// Recursive least squares of accumulated offset (us) against elapsed time
/// (s) through an origin, with exponential forgetting.
struct EstimatorState {
  double lambda = 0.9995;
  // origin of the current fit, in series coordinates
  Micros origin_elapsed_us = 0;
  double origin_accumulated_us = 0.0;

  std::size_t n = 0;
  double slope = 0.0;  // us/s
  double gain_p = 0.0;
  double last_x = 0.0;
  double last_y = 0.0;
  double last_error = 0.0;

  // Forgetting-weighted moments of per-step slopes, for the confidence bound.
  double weight = 0.0;
  double rate_mean = 0.0;
  double rate_m2 = 0.0;

  explicit EstimatorState(double forgetting = 0.9995) : lambda(forgetting) {
    if (!(lambda > 0.9 && lambda <= 1.0)) throw Error(ErrorCode::InvalidInput, "lambda must be in (0.9, 1]");
  }

  /// Restart the fit with `point` as the new origin.
  void reset_origin(const SeriesPoint& point) {
    *this = EstimatorState(lambda);
    origin_elapsed_us = point.elapsed_us;
    origin_accumulated_us = point.accumulated_us;
  }
};

struct SkewUpdate {
  double skew_us_per_s = 0.0;
  double error_us = 0.0;  // observed minus predicted, before the update
};

inline SkewUpdate update_skew(EstimatorState& state, const SeriesPoint& point) {
  const double x = static_cast<double>(point.elapsed_us - state.origin_elapsed_us) * 1e-6;
  const double y = point.accumulated_us - state.origin_accumulated_us;
  if (!(x > state.last_x)) throw Error(ErrorCode::InvalidInput, "series time must increase");

  const double error = y - state.slope * x;
  if (state.n == 0) {
    state.slope = y / x;
    state.gain_p = 1.0 / (x * x);
  } else {
    const double px = state.gain_p * x;
    const double gain = px / (state.lambda + x * px);
    state.slope += gain * error;
    state.gain_p = (state.gain_p - gain * px) / state.lambda;
  }

  const double rate = (y - state.last_y) / (x - state.last_x);
  state.weight = state.lambda * state.weight + 1.0;
  const double delta = rate - state.rate_mean;
  state.rate_mean += delta / state.weight;
  state.rate_m2 = state.lambda * state.rate_m2 + delta * (rate - state.rate_mean);

  state.last_x = x;
  state.last_y = y;
  state.last_error = error;
  ++state.n;
  return {state.slope, error};
}

/// Half-width of the slope's confidence bound. The accumulated offset is a
/// random walk with drift, for which the least-squares slope variance is
/// about 6/5 of the per-step slope variance over the number of steps.
inline double slope_confidence(const EstimatorState& state, double z) {
  if (state.weight <= 1.0) return 0.0;
  const double var = std::max(0.0, state.rate_m2 / (state.weight - 1.0));
  return z * std::sqrt(1.2 * var / state.weight);
}

using FingerprintKey = std::variant<FrameId, EcuLabel>;

inline std::string key_text(const FingerprintKey& key) {
  if (const auto* id = std::get_if<FrameId>(&key)) {
    static const char* digits = "0123456789ABCDEF";
    std::string out = "0x00000000";
    std::uint32_t v = id->value();
    for (int i = 9; i >= 2; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return out;
  }
  return std::get<EcuLabel>(key).str();
}

struct Fingerprint {
  FingerprintKey key;
  double skew_us_per_s = 0.0;
  double ci_us_per_s = 0.0;
  std::size_t n_batches = 0;
  double period_us = 0.0;  // nominal period used, per-id entries only
  std::string owner;       // owning ECU of a per-id entry, empty if unknown
  std::string trace_hash;  // hash of the trace the fingerprint came from

  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

inline Fingerprint fingerprint_of(const AccumulatedOffsetSeries& series, const EstimatorConfig& cfg = {}) {
  validate(cfg);
  if (series.points.size() < cfg.min_batches)
    throw Error(ErrorCode::InsufficientData, "series has " + std::to_string(series.points.size()) +
                                                 " batches, need " + std::to_string(cfg.min_batches));
  EstimatorState state(cfg.lambda);
  for (const auto& p : series.points) update_skew(state, p);
  Fingerprint fp;
  fp.key = series.id;
  fp.skew_us_per_s = state.slope;
  fp.ci_us_per_s = slope_confidence(state, cfg.z);
  fp.n_batches = series.points.size();
  return fp;
}

inline bool compatible(const Fingerprint& a, const Fingerprint& b) {
  return std::abs(a.skew_us_per_s - b.skew_us_per_s) <= a.ci_us_per_s + b.ci_us_per_s;
}

/// The unique database entry compatible with `fp`; nothing when no entry
/// or more than one entry is compatible.
inline std::optional<FingerprintKey> match(const Fingerprint& fp, std::span<const Fingerprint> db) {
  std::optional<FingerprintKey> found;
  for (const auto& entry : db) {
    if (!compatible(fp, entry)) continue;
    if (found) return std::nullopt;
    found = entry.key;
  }
  return found;
}

/// Inverse-variance combination of several fingerprints of one clock.
inline Fingerprint combine(std::span<const Fingerprint> parts, FingerprintKey key, double z = 3.0) {
  if (parts.empty()) throw Error(ErrorCode::InsufficientData, "nothing to combine");
  double wsum = 0.0, wx = 0.0;
  std::size_t n = 0;
  bool exact = false;
  for (const auto& p : parts) {
    const double se = p.ci_us_per_s / z;
    if (se <= 0.0) exact = true;
  }
  for (const auto& p : parts) {
    const double se = p.ci_us_per_s / z;
    const double w = exact ? (se <= 0.0 ? 1.0 : 0.0) : 1.0 / (se * se);
    wsum += w;
    wx += w * p.skew_us_per_s;
    n += p.n_batches;
  }
  Fingerprint out;
  out.key = std::move(key);
  out.skew_us_per_s = wx / wsum;
  out.ci_us_per_s = exact ? 0.0 : z / std::sqrt(wsum);
  out.n_batches = n;
  out.trace_hash = parts.front().trace_hash;
  return out;
}

/// Groups fingerprints whose skews chain together within confidence bounds.
inline std::vector<std::vector<Fingerprint>> cluster(std::vector<Fingerprint> fps) {
  std::sort(fps.begin(), fps.end(),
            [](const auto& a, const auto& b) { return a.skew_us_per_s < b.skew_us_per_s; });
  std::vector<std::vector<Fingerprint>> groups;
  for (auto& fp : fps) {
    if (groups.empty() || !compatible(groups.back().back(), fp)) groups.emplace_back();
    groups.back().push_back(std::move(fp));
  }
  return groups;
}

/// Arrival times of each id, in trace order.
template <class Frames>
std::map<FrameId, std::vector<Micros>> arrivals_by_id(const Frames& frames) {
  std::map<FrameId, std::vector<Micros>> out;
  for (const auto& f : frames) out[f.frame.id].push_back(f.arrival);
  return out;
}

/// Nominal period from the median inter-arrival over the first
/// `max_intervals` gaps, snapped to whole milliseconds.
inline std::optional<double> learn_period(std::span<const Micros> arrivals, std::size_t max_intervals) {
  if (arrivals.size() < 3) return std::nullopt;
  std::vector<Micros> gaps;
  for (std::size_t i = 1; i < arrivals.size() && gaps.size() < max_intervals; ++i)
    gaps.push_back(arrivals[i] - arrivals[i - 1]);
  auto mid = gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2);
  std::nth_element(gaps.begin(), mid, gaps.end());
  const double ms = std::round(static_cast<double>(*mid) / 1000.0);
  if (ms < 1.0) return std::nullopt;
  // Periodic streams keep nearly all gaps near the period.
  std::size_t regular = 0;
  for (auto g : gaps)
    if (std::abs(static_cast<double>(g) - ms * 1000.0) < 0.25 * ms * 1000.0) ++regular;
  if (static_cast<double>(regular) < 0.9 * static_cast<double>(gaps.size())) return std::nullopt;
  return ms * 1000.0;
}

/// Per-id and per-ECU fingerprints of the attack-free reference traffic.
struct FingerprintDb {
  std::vector<Fingerprint> entries;

  std::vector<Fingerprint> ecus() const {
    std::vector<Fingerprint> out;
    for (const auto& e : entries)
      if (std::holds_alternative<EcuLabel>(e.key)) out.push_back(e);
    return out;
  }

  const Fingerprint* find(FrameId id) const {
    for (const auto& e : entries)
      if (const auto* k = std::get_if<FrameId>(&e.key); k && *k == id) return &e;
    return nullptr;
  }

  const Fingerprint* find(const EcuLabel& label) const {
    for (const auto& e : entries)
      if (const auto* k = std::get_if<EcuLabel>(&e.key); k && *k == label) return &e;
    return nullptr;
  }

  bool empty() const noexcept { return entries.empty(); }
  friend bool operator==(const FingerprintDb&, const FingerprintDb&) = default;
};

}  // namespace canskew
