#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "canskew/attacks.hpp"
#include "canskew/frame.hpp"
#include "canskew/scenario.hpp"

namespace canskew {

struct TraceMetadata {
  std::uint64_t scenario_hash = 0;
  std::uint64_t seed = 0;
  double bitrate_bps = 0.0;
  double frame_bits = 0.0;  // effective bits on the wire, stuffing included
  Micros duration_us = 0;
  /// Normal ECU schedules: id -> (owner, nominal period). Absent for foreign logs.
  struct Owner {
    EcuLabel ecu;
    double period_us = 0.0;
    friend bool operator==(const Owner&, const Owner&) = default;
  };
  std::map<FrameId, Owner> schedule;
  std::vector<std::string> warnings;

  friend bool operator==(const TraceMetadata&, const TraceMetadata&) = default;
};

/// A receiver-side log: frames in strictly increasing arrival order.
struct Trace {
  TraceMetadata meta;
  std::vector<TimestampedFrame> frames;
  friend bool operator==(const Trace&, const Trace&) = default;
};

/// Sender-side record of one transmission (never serialized).
struct Transmission {
  CanFrame frame;
  double intended_us = 0.0;
  double start_us = 0.0;
  Micros arrival = 0;
};

struct SimulationResult {
  Trace trace;
  std::vector<Transmission> log;
};

namespace detail {

inline bool wins_over(const CanFrame& a, const CanFrame& b) {
  const auto ka = arbitration_key(a), kb = arbitration_key(b);
  if (ka != kb) return ka < kb;
  if (a.source != b.source) return a.source < b.source;
  return a.payload < b.payload;
}

}  // namespace detail

/// Winner of arbitration among frames pending at a bus-idle instant.
inline const CanFrame& arbitrate(std::span<const CanFrame> ready) {
  if (ready.empty()) throw Error(ErrorCode::Precondition, "arbitrate needs at least one frame");
  const CanFrame* best = &ready.front();
  for (const auto& frame : ready.subspan(1))
    if (detail::wins_over(frame, *best)) best = &frame;
  return *best;
}

namespace detail {

struct PendingSend {
  double time = 0.0;
  std::size_t queue = 0;  // index of the (ecu, entry) FIFO
  std::uint64_t seq = 0;
  CanFrame frame;
};

struct SendQueue {
  std::size_t ecu = 0;
  std::deque<const PendingSend*> pending;
  std::size_t max_depth = 0;
};

inline std::string hex_id(FrameId id) {
  static const char* digits = "0123456789ABCDEF";
  std::string out(8, '0');
  std::uint32_t v = id.value();
  for (int i = 7; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return out;
}

inline std::vector<std::uint8_t> counter_payload(std::size_t dlc, std::uint64_t counter) {
  std::vector<std::uint8_t> payload(dlc);
  for (std::size_t b = 0; b < dlc; ++b) payload[b] = static_cast<std::uint8_t>((counter >> (8 * (b % 8))) & 0xFF);
  return payload;
}

// Every send of one schedule entry, drawn from that entry's own noise stream.
inline void generate_sends(const Scenario& scenario, std::size_t ecu_index, std::size_t entry_index,
                           std::size_t queue_index, std::vector<PendingSend>& out) {
  const EcuSpec& ecu = scenario.ecus[ecu_index];
  const ScheduleEntry& entry = ecu.schedule[entry_index];
  const std::string stream = ecu.label.str() + "/" + hex_id(entry.id);
  std::mt19937_64 clock_rng(derive_seed(scenario.seed, stream, 0));
  std::mt19937_64 payload_rng(derive_seed(scenario.seed, stream, 2));
  std::uniform_real_distribution<double> spread(0.5, 1.5);
  const double horizon = std::min(entry.stop_us, scenario.duration_ms * 1000.0);

  auto emit = [&](double time, std::uint64_t seq) {
    CanFrame frame;
    frame.id = entry.id;
    frame.extended = entry.extended;
    frame.source = ecu.label;
    if (entry.random_payload) {
      frame.payload.resize(entry.dlc);
      for (auto& byte : frame.payload) byte = static_cast<std::uint8_t>(payload_rng() & 0xFF);
    } else {
      frame.payload = counter_payload(entry.dlc, seq);
    }
    out.push_back(PendingSend{std::max(0.0, time), queue_index, seq, std::move(frame)});
  };

  if (entry.aperiodic) {
    double nominal = entry.offset_us;
    for (std::uint64_t i = 0; nominal < horizon; ++i) {
      if (nominal >= entry.start_us) {
        const double drift = drift_offset_us(ecu.clock, 0, 0.0) + ecu.clock.skew_ppm * nominal * 1e-6;
        double noise = 0.0;
        if (ecu.clock.offset_jitter_us > 0.0)
          noise = std::normal_distribution<double>(0.0, ecu.clock.offset_jitter_us)(clock_rng);
        emit(nominal + drift + noise, i);
      }
      nominal += entry.period_us * spread(clock_rng);
    }
    return;
  }
  for (std::uint64_t i = 0;; ++i) {
    const double slot = entry.offset_us + static_cast<double>(i) * entry.period_us;
    if (slot >= horizon) break;
    if (slot < entry.start_us) continue;
    emit(entry.offset_us + intended_send_time(ecu.clock, i, entry.period_us, clock_rng), i);
  }
}

}  // namespace detail

/// Event-driven run of the bus. The attack, if present, is materialized
/// first. Identical scenarios (seed included) give identical results.
inline SimulationResult run(const Scenario& scenario) {
  validate(scenario);
  const Scenario world = materialize(scenario);
  validate(world);
  const double ft = frame_time(world.bus);

  SimulationResult result;
  auto& meta = result.trace.meta;
  meta.scenario_hash = scenario_hash(scenario);
  meta.seed = scenario.seed;
  meta.bitrate_bps = world.bus.bitrate_bps;
  meta.frame_bits = world.bus.frame_bits * world.bus.stuffing_factor;
  meta.duration_us = static_cast<Micros>(std::llround(world.duration_ms * 1000.0));
  for (const auto& ecu : scenario.ecus)
    if (!ecu.attacker)
      for (const auto& entry : ecu.schedule) meta.schedule[entry.id] = {ecu.label, entry.period_us};

  std::vector<detail::PendingSend> sends;
  std::vector<detail::SendQueue> queues;
  for (std::size_t e = 0; e < world.ecus.size(); ++e) {
    for (std::size_t k = 0; k < world.ecus[e].schedule.size(); ++k) {
      queues.push_back(detail::SendQueue{e, {}, 0});
      detail::generate_sends(world, e, k, queues.size() - 1, sends);
    }
  }
  std::stable_sort(sends.begin(), sends.end(), [](const auto& a, const auto& b) {
    if (a.time != b.time) return a.time < b.time;
    if (a.queue != b.queue) return a.queue < b.queue;
    return a.seq < b.seq;
  });

  std::vector<std::mt19937_64> delay_rng;
  for (const auto& ecu : world.ecus) delay_rng.emplace_back(derive_seed(world.seed, ecu.label.str(), 1));

  std::size_t next = 0;
  std::size_t queued = 0;
  double now = 0.0;
  Micros last_arrival = -1;
  std::vector<CanFrame> heads;
  std::vector<std::size_t> head_queue;

  while (next < sends.size() || queued > 0) {
    if (queued == 0) now = std::max(now, sends[next].time);
    while (next < sends.size() && sends[next].time <= now) {
      auto& q = queues[sends[next].queue];
      q.pending.push_back(&sends[next]);
      q.max_depth = std::max(q.max_depth, q.pending.size());
      ++queued;
      ++next;
    }
    // Only the head of each FIFO competes, and only once it is due.
    heads.clear();
    head_queue.clear();
    for (std::size_t qi = 0; qi < queues.size(); ++qi) {
      if (queues[qi].pending.empty()) continue;
      heads.push_back(queues[qi].pending.front()->frame);
      head_queue.push_back(qi);
    }
    const CanFrame& winner = arbitrate(heads);
    const std::size_t wq = head_queue[static_cast<std::size_t>(&winner - heads.data())];
    const detail::PendingSend* send = queues[wq].pending.front();
    queues[wq].pending.pop_front();
    --queued;

    const double start = now;
    const double end = start + ft;
    double delay = world.bus.base_delay_us;
    if (world.bus.delay_jitter_us > 0.0)
      delay += std::normal_distribution<double>(0.0, world.bus.delay_jitter_us)(delay_rng[queues[wq].ecu]);
    delay = std::max(0.0, delay);
    Micros arrival = static_cast<Micros>(std::llround(end + delay));
    arrival = std::max(arrival, last_arrival + 1);
    last_arrival = arrival;

    // A receiver cannot see who sent a frame; only the sender log keeps it.
    CanFrame seen = send->frame;
    seen.source = EcuLabel{};
    result.trace.frames.push_back(TimestampedFrame{arrival, std::move(seen)});
    result.log.push_back(Transmission{send->frame, send->time, start, arrival});
    now = end;
  }

  constexpr std::size_t kSaturationDepth = 64;
  for (const auto& q : queues) {
    if (q.max_depth < kSaturationDepth) continue;
    const auto& ecu = world.ecus[q.ecu];
    meta.warnings.push_back("saturation: ECU " + ecu.label.str() + " queue depth reached " +
                            std::to_string(q.max_depth));
  }
  return result;
}

}  // namespace canskew
