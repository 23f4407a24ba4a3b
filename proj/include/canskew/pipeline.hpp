#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "canskew/bus.hpp"
#include "canskew/fingerprint.hpp"

// Trace -> per-id offset batches and accumulated series.
namespace canskew {

struct AnalysisConfig {
  std::size_t batch_size = 20;  // even; batches advance by half of it
  EstimatorConfig estimator;
  AccumulationMode mode = AccumulationMode::Absolute;
  double kappa = 4.0;
  double gamma = 5.0;
  std::optional<double> period_us;        // overrides every other period source
  std::size_t period_warmup_batches = 50;  // learning window when no period is known
  double load_window_us = 100000.0;
  double load_threshold = 0.5;
};

inline void validate(const AnalysisConfig& cfg) {
  if (cfg.batch_size < 4 || cfg.batch_size % 2 != 0)
    throw Error(ErrorCode::InvalidInput, "batch size must be an even number >= 4");
  validate(cfg.estimator);
  if (!(cfg.gamma > cfg.kappa && cfg.kappa >= 0.0)) throw Error(ErrorCode::InvalidInput, "need gamma > kappa >= 0");
  if (cfg.period_us && !(*cfg.period_us > 0.0)) throw Error(ErrorCode::InvalidInput, "period must be > 0");
  if (!(cfg.load_window_us > 0.0)) throw Error(ErrorCode::InvalidInput, "load window must be > 0");
}

inline std::size_t hop_of(const AnalysisConfig& cfg) { return cfg.batch_size / 2; }

struct IdStream {
  FrameId id;
  double period_us = 0.0;
  std::string owner;
  std::vector<Micros> arrivals;  // as logged
  std::vector<double> corrected;  // queueing delay removed where it could be bounded
  std::size_t n_corrected = 0;
  std::vector<OffsetBatch> batches;
  AccumulatedOffsetSeries series;         // in the configured accumulation mode
  AccumulatedOffsetSeries signed_series;  // skew estimation always uses the signed sum
};

/// Period of one id: explicit override, then the reference database, then
/// trace metadata, then learned from the first warm-up window.
inline std::optional<double> resolve_period(FrameId id, std::span<const Micros> arrivals, const TraceMetadata& meta,
                                            const FingerprintDb& db, const AnalysisConfig& cfg) {
  if (cfg.period_us) return cfg.period_us;
  if (const auto* fp = db.find(id); fp && fp->period_us > 0.0) return fp->period_us;
  if (auto it = meta.schedule.find(id); it != meta.schedule.end()) return it->second.period_us;
  return learn_period(arrivals, cfg.period_warmup_batches * hop_of(cfg));
}

/// Time one frame occupies the bus as seen by a receiver. Taken from the
/// trace header, or the shortest gap between consecutive arrivals.
inline double wire_time(const Trace& trace) {
  if (trace.meta.bitrate_bps > 0.0 && trace.meta.frame_bits > 0.0)
    return trace.meta.frame_bits / trace.meta.bitrate_bps * 1e6;
  double shortest = 0.0;
  for (std::size_t k = 1; k < trace.frames.size(); ++k) {
    const double gap = static_cast<double>(trace.frames[k].arrival - trace.frames[k - 1].arrival);
    if (shortest == 0.0 || gap < shortest) shortest = gap;
  }
  return shortest;
}

/// Per id, whether each arrival followed the previous frame on the bus
/// back to back. Such a frame may have waited for the bus, so its arrival
/// only bounds its send time from above.
inline std::map<FrameId, std::vector<std::uint8_t>> queued_flags(const Trace& trace, double margin_us = 20.0) {
  std::map<FrameId, std::vector<std::uint8_t>> out;
  const double limit = wire_time(trace) + margin_us;
  for (std::size_t k = 0; k < trace.frames.size(); ++k) {
    const bool queued =
        k > 0 && static_cast<double>(trace.frames[k].arrival - trace.frames[k - 1].arrival) < limit;
    out[trace.frames[k].frame.id].push_back(queued ? 1 : 0);
  }
  return out;
}

/// Replaces queued arrivals by interpolation between the nearest unqueued
/// neighbours when the implied wait is short (ordinary contention). Long
/// waits are left alone so that floods stay visible.
inline std::vector<double> correct_queueing(std::span<const Micros> arrivals, std::span<const std::uint8_t> queued,
                                            double period_us, double max_wait_us, std::size_t* n_corrected = nullptr) {
  std::vector<double> out(arrivals.begin(), arrivals.end());
  if (queued.size() != arrivals.size()) return out;
  const std::size_t n = arrivals.size();
  std::size_t fixed = 0;
  for (std::size_t j = 0; j < n;) {
    if (!queued[j]) {
      ++j;
      continue;
    }
    std::size_t end = j;
    while (end < n && queued[end]) ++end;
    const bool has_prev = j > 0, has_next = end < n;
    for (std::size_t k = j; k < end; ++k) {
      double estimate = 0.0;
      if (has_prev && has_next) {
        const double a = static_cast<double>(arrivals[j - 1]), b = static_cast<double>(arrivals[end]);
        estimate = a + (b - a) * static_cast<double>(k - (j - 1)) / static_cast<double>(end - (j - 1));
      } else if (has_prev) {
        estimate = static_cast<double>(arrivals[j - 1]) + static_cast<double>(k - (j - 1)) * period_us;
      } else if (has_next) {
        estimate = static_cast<double>(arrivals[end]) - static_cast<double>(end - k) * period_us;
      } else {
        continue;
      }
      const double wait = static_cast<double>(arrivals[k]) - estimate;
      if (wait >= 0.0 && wait <= max_wait_us) {
        out[k] = estimate;
        ++fixed;
      }
    }
    j = end;
  }
  if (n_corrected) *n_corrected = fixed;
  return out;
}

inline IdStream build_stream(FrameId id, std::vector<Micros> arrivals, double period_us, std::string owner,
                             const AnalysisConfig& cfg, std::span<const std::uint8_t> queued = {}, double max_wait_us = 0.0) {
  IdStream s;
  s.id = id;
  s.period_us = period_us;
  s.owner = std::move(owner);
  s.arrivals = std::move(arrivals);
  s.corrected = correct_queueing(s.arrivals, queued, period_us, max_wait_us, &s.n_corrected);
  const std::size_t hop = hop_of(cfg);
  s.batches = make_batches(id, std::span<const double>(s.corrected), period_us, cfg.batch_size, hop);
  if (!s.batches.empty()) {
    const Micros origin =
        s.batches.front().end_time_us - static_cast<Micros>(std::llround(static_cast<double>(hop) * period_us));
    s.series = accumulate(s.batches, cfg.mode, origin);
    s.signed_series = accumulate(s.batches, AccumulationMode::Signed, origin);
  } else {
    s.series.id = s.signed_series.id = id;
  }
  return s;
}

/// Longest wait treated as ordinary contention: a handful of frame times.
inline double contention_limit(const Trace& trace) { return 8.0 * wire_time(trace); }

inline std::string owner_of(FrameId id, const TraceMetadata& meta, const FingerprintDb& db) {
  if (const auto* fp = db.find(id); fp && !fp->owner.empty()) return fp->owner;
  if (auto it = meta.schedule.find(id); it != meta.schedule.end()) return it->second.ecu.str();
  return {};
}

inline std::string hash_text(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xF];
  return out;
}

/// Content hash of a trace (arrival times and identifiers).
inline std::string trace_hash(const Trace& trace) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i, v >>= 8) {
      h ^= v & 0xFF;
      h *= 0x100000001B3ull;
    }
  };
  for (const auto& f : trace.frames) {
    mix(static_cast<std::uint64_t>(f.arrival));
    mix(f.frame.id.value());
  }
  return hash_text(h);
}

struct FingerprintReport {
  FingerprintDb db;
  std::vector<FrameId> insufficient;  // periodic ids with fewer than min_batches batches
  std::vector<std::string> warnings;
};

/// Fingerprints every periodic id of an (assumed attack-free) trace, then
/// one entry per ECU: by the trace's ownership metadata when present,
/// otherwise one per skew cluster.
inline FingerprintReport build_fingerprints(const Trace& trace, const AnalysisConfig& cfg) {
  validate(cfg);
  FingerprintReport report;
  const std::string hash = trace_hash(trace);
  const FingerprintDb none;
  std::vector<Fingerprint> per_id;
  const auto queued = queued_flags(trace);
  const double max_wait = contention_limit(trace);
  for (auto& [id, arrivals] : arrivals_by_id(trace.frames)) {
    const auto period = resolve_period(id, arrivals, trace.meta, none, cfg);
    if (!period) {
      report.warnings.push_back("id " + key_text(id) + " is not periodic; skipped");
      continue;
    }
    IdStream s = build_stream(id, arrivals, *period, owner_of(id, trace.meta, none), cfg, queued.at(id), max_wait);
    if (s.signed_series.points.size() < cfg.estimator.min_batches) {
      report.insufficient.push_back(id);
      continue;
    }
    Fingerprint fp = fingerprint_of(s.signed_series, cfg.estimator);
    fp.period_us = *period;
    fp.owner = s.owner;
    fp.trace_hash = hash;
    for (const auto& b : s.batches)
      if (b.min_interval_us < 0.5 * *period || b.max_interval_us > 1.5 * *period) {
        report.warnings.push_back("id " + key_text(id) + " has irregular intervals; reference may be contaminated");
        break;
      }
    per_id.push_back(fp);
  }
  if (!report.insufficient.empty() && per_id.empty())
    report.warnings.push_back("no id has enough batches; database is empty");

  std::map<std::string, std::vector<Fingerprint>> by_owner;
  std::vector<Fingerprint> unowned;
  for (const auto& fp : per_id) (fp.owner.empty() ? unowned : by_owner[fp.owner]).push_back(fp);
  report.db.entries = per_id;
  for (const auto& [owner, parts] : by_owner) {
    Fingerprint ecu = combine(parts, EcuLabel{owner}, cfg.estimator.z);
    ecu.trace_hash = hash;
    report.db.entries.push_back(ecu);
  }
  std::size_t k = 0;
  for (auto& group : cluster(unowned)) {
    Fingerprint ecu = combine(group, EcuLabel{"cluster" + std::to_string(++k)}, cfg.estimator.z);
    ecu.trace_hash = hash;
    for (auto& e : report.db.entries)
      for (const auto& g : group)
        if (e.key == g.key) e.owner = std::get<EcuLabel>(ecu.key).str();
    report.db.entries.push_back(ecu);
  }
  return report;
}

}  // namespace canskew
