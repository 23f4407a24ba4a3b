#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "canskew/pipeline.hpp"

namespace canskew {

/// Two one-sided cumulative sums over the normalized identification error.
struct CusumState {
  double kappa = 4.0;
  double gamma = 5.0;
  double upper = 0.0;  // L+
  double lower = 0.0;  // L-
  // running normalization of the raw error
  std::size_t count = 0;
  double error_mean = 0.0;
  double error_m2 = 0.0;
  std::size_t warmup = 10;  // raw errors needed before alarms are possible
  double min_sd = 1.0;      // us; timestamp resolution

  CusumState() = default;
  CusumState(double kappa_, double gamma_, std::size_t warmup_ = 10) : kappa(kappa_), gamma(gamma_), warmup(warmup_) {
    if (!(gamma > kappa && kappa >= 0.0)) throw Error(ErrorCode::InvalidInput, "need gamma > kappa >= 0");
  }

  double error_var() const { return count > 1 ? error_m2 / static_cast<double>(count - 1) : 0.0; }

  void reset_sums() { upper = lower = 0.0; }
  void reset() {
    reset_sums();
    count = 0;
    error_mean = error_m2 = 0.0;
  }
};

/// One CUSUM step on an already normalized error. Sums reset after an alarm.
inline bool cusum_step(CusumState& s, double normalized) {
  s.upper = std::max(0.0, s.upper + normalized - s.kappa);
  s.lower = std::max(0.0, s.lower - normalized - s.kappa);
  if (std::max(s.upper, s.lower) > s.gamma) {
    s.reset_sums();
    return true;
  }
  return false;
}

/// Normalizes `error` by the running mean and deviation of past errors,
/// then steps the sums. Errors that raise an alarm are kept out of the
/// normalization statistics.
inline bool cusum_update(CusumState& s, double error) {
  bool alarm = false;
  if (s.count >= s.warmup) {
    const double sd = std::max(std::sqrt(s.error_var()), s.min_sd);
    alarm = cusum_step(s, (error - s.error_mean) / sd);
  }
  if (!alarm) {
    ++s.count;
    const double d = error - s.error_mean;
    s.error_mean += d / static_cast<double>(s.count);
    s.error_m2 += d * (error - s.error_mean);
  }
  return alarm;
}

enum class EventKind { SlopeChange, RateAnomaly, UnknownId };
enum class AttackClass { DoS, Fuzzy, Impersonation, Unknown };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::SlopeChange: return "slope-change";
    case EventKind::RateAnomaly: return "rate-anomaly";
    case EventKind::UnknownId: return "unknown-id";
  }
  return "?";
}

inline const char* to_string(AttackClass c) {
  switch (c) {
    case AttackClass::DoS: return "dos";
    case AttackClass::Fuzzy: return "fuzzy";
    case AttackClass::Impersonation: return "impersonation";
    case AttackClass::Unknown: return "unknown";
  }
  return "?";
}

struct Evidence {
  std::optional<double> pre_skew, pre_ci;
  std::optional<double> post_skew, post_ci;
  std::optional<double> mean_interval_us;
  std::optional<double> bus_load;
};

struct DetectionEvent {
  Micros time_us = 0;
  FrameId id;
  EventKind kind = EventKind::SlopeChange;
  AttackClass classified = AttackClass::Unknown;
  std::optional<EcuLabel> suspected_source;
  std::optional<EcuLabel> victim;
  std::optional<std::size_t> batch_index;
  Evidence evidence;
};

/// Per-point output of the streaming estimator, for plotting.
struct SeriesTrack {
  std::vector<double> skew;
  std::vector<double> error;
};

struct IdAnalysis {
  IdStream stream;
  SeriesTrack track;
};

struct AnalysisResult {
  std::vector<IdAnalysis> ids;
  std::vector<Fingerprint> fingerprints;  // per id, from the first (pre-change) segment
  std::vector<DetectionEvent> events;
  std::vector<std::string> warnings;
};

struct BusLoadSpike {
  Micros start_us = 0;
  Micros end_us = 0;
  double peak_load = 0.0;
  FrameId dominant;             // id with the most frames inside the spike
  double dominant_share = 0.0;  // its fraction of those frames
};

/// Windows where bus occupancy exceeds the threshold; adjacent windows merge.
inline std::vector<BusLoadSpike> bus_load_spikes(const Trace& trace, const AnalysisConfig& cfg) {
  std::vector<BusLoadSpike> spikes;
  if (trace.frames.empty()) return spikes;
  const BusSpec defaults;
  const double bits = trace.meta.frame_bits > 0.0 ? trace.meta.frame_bits : defaults.frame_bits;
  const double rate = trace.meta.bitrate_bps > 0.0 ? trace.meta.bitrate_bps : defaults.bitrate_bps;
  const double ft = frame_time(bits, rate);
  const auto window = static_cast<Micros>(cfg.load_window_us);

  std::map<Micros, std::map<FrameId, std::size_t>> bins;
  for (const auto& f : trace.frames) ++bins[f.arrival / window][f.frame.id];
  std::vector<std::map<FrameId, std::size_t>> counts;
  for (const auto& [bin, per_id] : bins) {
    std::size_t total = 0;
    for (const auto& [id, c] : per_id) total += c;
    const double load = static_cast<double>(total) * ft / cfg.load_window_us;
    if (load <= cfg.load_threshold) continue;
    const Micros start = bin * window;
    if (spikes.empty() || spikes.back().end_us != start) {
      spikes.push_back({start, start, 0.0, FrameId{}});
      counts.emplace_back();
    }
    spikes.back().end_us = start + window;
    spikes.back().peak_load = std::max(spikes.back().peak_load, load);
    for (const auto& [id, c] : per_id) counts.back()[id] += c;
  }
  for (std::size_t i = 0; i < spikes.size(); ++i) {
    std::size_t total = 0, top = 0;
    for (const auto& [id, c] : counts[i]) {
      total += c;
      if (c > top) top = c, spikes[i].dominant = id;
    }
    spikes[i].dominant_share = static_cast<double>(top) / static_cast<double>(total);
  }
  return spikes;
}

namespace detail {

struct Segment {
  std::size_t first = 0;  // first batch index of the segment
  std::size_t last = 0;
  std::optional<Fingerprint> fit;  // once min_batches points accrued
  bool provisional = false;        // began while arrivals were still irregular
};

struct Alarm {
  std::size_t batch = 0;
  bool timing = false;  // raised by irregular arrivals rather than the CUSUM
  Micros time_us = 0;
  std::size_t segment = 0;  // segment that ended with this alarm
};

struct IdRun {
  std::vector<Segment> segments;
  std::vector<Alarm> alarms;
  std::vector<std::size_t> rate_up;  // batches whose mean interval shrank
};

inline Fingerprint snapshot(const EstimatorState& st, FrameId id, double z, std::size_t n) {
  Fingerprint fp;
  fp.key = id;
  fp.skew_us_per_s = st.slope;
  fp.ci_us_per_s = slope_confidence(st, z);
  fp.n_batches = n;
  return fp;
}

// Streams one id through the estimator and CUSUM. After an alarm the
// pre-change fit is frozen; tracking restarts from a fresh origin once the
// arrivals are regular again (or after a bounded wait).
inline IdRun track_id(const IdStream& s, const AnalysisConfig& cfg, SeriesTrack& track) {
  IdRun run;
  const std::size_t settle_min = cfg.batch_size / hop_of(cfg);  // first batch sharing no arrival with the alarm
  const std::size_t settle_max = 2 * settle_min;
  EstimatorState est(cfg.estimator.lambda);
  CusumState cusum(cfg.kappa, cfg.gamma, cfg.estimator.min_batches);
  bool settling = false;
  bool was_irregular = false;
  std::size_t regular_run = 0;
  std::size_t settle_count = 0;
  run.segments.push_back({0, 0, std::nullopt});

  const auto& pts = s.signed_series.points;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const auto& b = s.batches[k];
    const bool irregular = b.min_interval_us < 0.5 * s.period_us || b.max_interval_us > 1.5 * s.period_us;
    const bool onset = irregular && !was_irregular;
    was_irregular = irregular;
    regular_run = irregular ? 0 : regular_run + 1;
    if (b.mean_interval_us < 0.75 * s.period_us) run.rate_up.push_back(k);

    if (settling) {
      ++settle_count;
      track.skew.push_back(est.slope);
      track.error.push_back(0.0);
      if ((!irregular && settle_count >= settle_min) || settle_count >= settle_max) {
        est.reset_origin(pts[k]);
        cusum.reset();
        settling = false;
        run.segments.push_back({k + 1, k, std::nullopt, irregular});
      }
      continue;
    }
    // A restart forced while arrivals were irregular is redone, without an
    // alarm, once they have been regular for a full batch.
    if (run.segments.back().provisional && regular_run >= settle_min) {
      est.reset_origin(pts[k]);
      cusum.reset();
      run.segments.back() = {k + 1, k, std::nullopt, false};
      track.skew.push_back(est.slope);
      track.error.push_back(0.0);
      continue;
    }
    const EstimatorState before = est;
    const auto upd = update_skew(est, pts[k]);
    track.skew.push_back(upd.skew_us_per_s);
    track.error.push_back(upd.error_us);
    auto& seg = run.segments.back();
    seg.last = k;

    // The first error of a segment is measured against a zero slope.
    if (seg.provisional) {
      if (est.n >= cfg.estimator.min_batches) seg.fit = snapshot(est, s.id, cfg.estimator.z, est.n);
      continue;
    }
    const bool alarm = est.n > 1 && cusum_update(cusum, upd.error_us);
    if (alarm || onset) {
      if (!seg.fit && before.n >= cfg.estimator.min_batches)
        seg.fit = snapshot(before, s.id, cfg.estimator.z, before.n);
      run.alarms.push_back({k, !alarm, b.end_time_us, run.segments.size() - 1});
      settling = true;
      settle_count = 0;
      continue;
    }
    if (est.n >= cfg.estimator.min_batches) seg.fit = snapshot(est, s.id, cfg.estimator.z, est.n);
  }
  return run;
}

}  // namespace detail
namespace detail {

inline std::optional<EcuLabel> match_ecu(const std::optional<Fingerprint>& fp, const FingerprintDb& db) {
  if (!fp) return std::nullopt;
  const auto ecus = db.ecus();
  const auto key = match(*fp, ecus);
  if (!key) return std::nullopt;
  return std::get<EcuLabel>(*key);
}

inline void fill_fit(std::optional<double>& skew, std::optional<double>& ci, const std::optional<Fingerprint>& fp) {
  if (!fp) return;
  skew = fp->skew_us_per_s;
  ci = fp->ci_us_per_s;
}

struct AlarmContext {
  const IdAnalysis* ida = nullptr;
  const IdRun* run = nullptr;
  Alarm alarm;
  std::optional<Fingerprint> pre, post;
};

}  // namespace detail

/// Labels one slope-change alarm using the evidence around it.
///  DoS: bus-load spike just before the alarm, or simultaneous alarms on ids
///       of several ECUs.
///  Fuzzy: the id's arrival rate rose around the alarm (duplicate senders).
///  Impersonation: rate unchanged, pre-change skew fits the owner's reference
///       and the post-change skew does not.
/// Anything else stays Unknown, and a source is only named when the
/// post-change fingerprint matches exactly one reference ECU. A change whose
/// post-change fit agrees with the pre-change fit, with no load or rate
/// evidence, was a transient (e.g. a burst of contention) and yields nothing.
inline std::optional<DetectionEvent> classify(const detail::AlarmContext& ctx, std::span<const detail::AlarmContext> all,
                               std::span<const BusLoadSpike> spikes, const FingerprintDb& db,
                               const AnalysisConfig& cfg, std::size_t analyzed_ids) {
  const IdStream& s = ctx.ida->stream;
  const auto& b = s.batches[ctx.alarm.batch];
  DetectionEvent ev;
  ev.time_us = ctx.alarm.time_us;
  ev.id = s.id;
  ev.kind = ctx.alarm.timing ? EventKind::RateAnomaly : EventKind::SlopeChange;
  ev.batch_index = ctx.alarm.batch;
  ev.evidence.mean_interval_us = b.mean_interval_us;
  detail::fill_fit(ev.evidence.pre_skew, ev.evidence.pre_ci, ctx.pre);
  detail::fill_fit(ev.evidence.post_skew, ev.evidence.post_ci, ctx.post);
  if (!s.owner.empty()) ev.victim = EcuLabel{s.owner};

  const double span_us = static_cast<double>(cfg.batch_size) * s.period_us;

  // (a) bus-wide disturbance
  const BusLoadSpike* spike = nullptr;
  for (const auto& sp : spikes)
    if (static_cast<double>(sp.start_us) <= static_cast<double>(ev.time_us) &&
        static_cast<double>(sp.end_us) >= static_cast<double>(ev.time_us) - 2.0 * span_us)
      spike = &sp;
  std::set<FrameId> near_ids;
  std::set<std::string> near_owners;
  for (const auto& other : all) {
    if (std::abs(static_cast<double>(other.alarm.time_us - ev.time_us)) > span_us) continue;
    near_ids.insert(other.ida->stream.id);
    near_owners.insert(other.ida->stream.owner);
  }
  const bool bus_wide = near_owners.size() >= 2 && near_ids.size() >= std::max<std::size_t>(2, (analyzed_ids + 1) / 2);
  if (spike || bus_wide) {
    ev.classified = AttackClass::DoS;
    ev.victim.reset();
    if (spike) ev.evidence.bus_load = spike->peak_load;
    return ev;
  }

  // (b) more arrivals than the schedule allows
  const std::size_t reach = cfg.batch_size / hop_of(cfg);
  for (std::size_t k : ctx.run->rate_up) {
    if (k + reach >= ctx.alarm.batch && k <= ctx.alarm.batch + 2 * reach) {
      ev.classified = AttackClass::Fuzzy;
      ev.suspected_source = detail::match_ecu(ctx.post, db);
      return ev;
    }
  }

  // (c) same rate, new constant slope
  if (ctx.pre && ctx.post && compatible(*ctx.pre, *ctx.post)) return std::nullopt;
  if (!ev.victim || !ctx.pre || !ctx.post) return ev;
  const Fingerprint* reference = db.find(*ev.victim);
  if (!reference) reference = db.find(s.id);
  if (!reference) return ev;
  if (!compatible(*ctx.pre, *reference) || compatible(*ctx.post, *reference)) return ev;
  ev.classified = AttackClass::Impersonation;

  // All ids of the victim that changed together give one combined estimate.
  std::vector<Fingerprint> parts;
  for (const auto& other : all) {
    if (other.ida->stream.owner != s.owner || !other.post) continue;
    if (std::abs(static_cast<double>(other.alarm.time_us - ev.time_us)) > 2.0 * span_us) continue;
    parts.push_back(*other.post);
  }
  std::optional<Fingerprint> combined;
  if (!parts.empty()) combined = combine(parts, EcuLabel{"post"}, cfg.estimator.z);
  ev.suspected_source = detail::match_ecu(combined, db);
  return ev;
}

/// Full offline analysis: per-id series and fingerprints, alarms, and
/// classified detection events ordered by time.
inline AnalysisResult analyze(const Trace& trace, const AnalysisConfig& cfg, const FingerprintDb& db = {}) {
  validate(cfg);
  AnalysisResult result;
  const auto by_id = arrivals_by_id(trace.frames);
  const auto queued = queued_flags(trace);
  const double max_wait = contention_limit(trace);

  std::set<FrameId> known;
  const bool has_reference = !db.empty() || !trace.meta.schedule.empty();
  if (!db.empty()) {
    for (const auto& e : db.entries)
      if (const auto* id = std::get_if<FrameId>(&e.key)) known.insert(*id);
  } else {
    for (const auto& [id, owner] : trace.meta.schedule) known.insert(id);
  }

  std::vector<FrameId> unknown;
  for (const auto& [id, arrivals] : by_id) {
    if (has_reference && !known.contains(id)) {
      unknown.push_back(id);
      continue;
    }
    const auto period = resolve_period(id, arrivals, trace.meta, db, cfg);
    if (!period) {
      result.warnings.push_back("id " + key_text(id) + " is not periodic; not analyzed");
      continue;
    }
    IdAnalysis ida{build_stream(id, arrivals, *period, owner_of(id, trace.meta, db), cfg, queued.at(id), max_wait), {}};
    if (ida.stream.batches.size() < 2) {
      result.warnings.push_back("id " + key_text(id) + " has too few arrivals for one batch step");
      continue;
    }
    result.ids.push_back(std::move(ida));
  }
  for (FrameId id : known)
    if (!by_id.contains(id)) result.warnings.push_back("id " + key_text(id) + " never observed");
  if (result.ids.empty()) result.warnings.push_back("no periodic ids in trace");

  std::vector<detail::IdRun> runs;
  runs.reserve(result.ids.size());
  for (auto& ida : result.ids) {
    runs.push_back(detail::track_id(ida.stream, cfg, ida.track));
    const auto& first = runs.back().segments.front();
    if (first.fit) {
      Fingerprint fp = *first.fit;
      fp.period_us = ida.stream.period_us;
      fp.owner = ida.stream.owner;
      result.fingerprints.push_back(fp);
    }
  }

  const auto spikes = bus_load_spikes(trace, cfg);

  std::vector<detail::AlarmContext> alarms;
  for (std::size_t i = 0; i < result.ids.size(); ++i) {
    for (const auto& a : runs[i].alarms) {
      detail::AlarmContext ctx{&result.ids[i], &runs[i], a, std::nullopt, std::nullopt};
      ctx.pre = runs[i].segments[a.segment].fit;
      if (a.segment + 1 < runs[i].segments.size() && !runs[i].segments[a.segment + 1].provisional)
        ctx.post = runs[i].segments[a.segment + 1].fit;
      alarms.push_back(std::move(ctx));
    }
  }
  for (const auto& ctx : alarms)
    if (auto ev = classify(ctx, alarms, spikes, db, cfg, result.ids.size())) result.events.push_back(*ev);

  // Rate increases away from any change point of the same id.
  const std::size_t reach = cfg.batch_size / hop_of(cfg);
  for (std::size_t i = 0; i < result.ids.size(); ++i) {
    const auto& s = result.ids[i].stream;
    std::optional<std::size_t> prev;
    for (std::size_t k : runs[i].rate_up) {
      const bool starts_run = !prev || k != *prev + 1;
      prev = k;
      if (!starts_run) continue;
      const bool explained = std::any_of(runs[i].alarms.begin(), runs[i].alarms.end(), [&](const auto& a) {
        return a.batch <= k + reach && k <= a.batch + 2 * reach;
      });
      if (explained) continue;
      DetectionEvent ev;
      ev.time_us = s.batches[k].end_time_us;
      ev.id = s.id;
      ev.kind = EventKind::RateAnomaly;
      ev.classified = AttackClass::Fuzzy;
      ev.batch_index = k;
      ev.evidence.mean_interval_us = s.batches[k].mean_interval_us;
      if (!s.owner.empty()) ev.victim = EcuLabel{s.owner};
      const double span_us = static_cast<double>(cfg.batch_size) * s.period_us;
      for (const auto& sp : spikes)
        if (static_cast<double>(sp.start_us) <= static_cast<double>(ev.time_us) &&
            static_cast<double>(sp.end_us) >= static_cast<double>(ev.time_us) - 2.0 * span_us) {
          ev.classified = AttackClass::DoS;
          ev.victim.reset();
          ev.evidence.bus_load = sp.peak_load;
        }
      result.events.push_back(ev);
    }
  }

  // Flooding: by an id nobody schedules, or by a known id.
  std::set<FrameId> unknown_set(unknown.begin(), unknown.end());
  for (const auto& sp : spikes) {
    if (unknown_set.contains(sp.dominant)) continue;  // reported below as UnknownId
    if (sp.dominant_share < 0.5) continue;             // congestion, not one flooder
    DetectionEvent ev;
    ev.time_us = sp.start_us;
    ev.id = sp.dominant;
    ev.kind = EventKind::RateAnomaly;
    ev.classified = AttackClass::DoS;
    ev.evidence.bus_load = sp.peak_load;
    for (const auto& fp : result.fingerprints)
      if (fp.key == FingerprintKey{sp.dominant}) ev.suspected_source = detail::match_ecu(fp, db);
    result.events.push_back(ev);
  }
  for (FrameId id : unknown) {
    DetectionEvent ev;
    ev.time_us = by_id.at(id).front();
    ev.id = id;
    ev.kind = EventKind::UnknownId;
    ev.classified = AttackClass::Fuzzy;
    for (const auto& sp : spikes)
      if (sp.dominant == id) {
        ev.classified = AttackClass::DoS;
        ev.evidence.bus_load = std::max(ev.evidence.bus_load.value_or(0.0), sp.peak_load);
      }
    result.events.push_back(ev);
  }

  std::stable_sort(result.events.begin(), result.events.end(), [](const auto& a, const auto& b) {
    if (a.time_us != b.time_us) return a.time_us < b.time_us;
    if (a.id != b.id) return a.id < b.id;
    return a.kind < b.kind;
  });
  return result;
}

}  // namespace canskew
