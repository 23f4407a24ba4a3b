#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <locale>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "canskew/clock.hpp"
#include "canskew/error.hpp"
#include "canskew/frame.hpp"

namespace canskew {

struct BusSpec {
  double bitrate_bps = 500000.0;
  double frame_bits = 131.0;  // extended frame, 8 data bytes, no stuff bits
  double stuffing_factor = 1.0;
  double base_delay_us = 10.0;
  double delay_jitter_us = 2.0;

  friend bool operator==(const BusSpec&, const BusSpec&) = default;
};

/// One periodic stream of an ECU. Message i is due at
/// offset_us + i*period_us + O_i and is sent only if that nominal slot
/// offset_us + i*period_us lies in [start_us, stop_us).
struct ScheduleEntry {
  FrameId id;
  bool extended = true;
  double period_us = 50000.0;
  double offset_us = 0.0;
  std::size_t dlc = 8;
  double start_us = 0.0;
  double stop_us = std::numeric_limits<double>::infinity();
  /// Intervals drawn uniformly from [0.5, 1.5] * period instead of a fixed grid.
  bool aperiodic = false;
  /// Payload bytes drawn from the sender's noise stream (fuzzing).
  bool random_payload = false;

  friend bool operator==(const ScheduleEntry&, const ScheduleEntry&) = default;
};

struct EcuSpec {
  EcuLabel label;
  ClockModel clock;
  std::vector<ScheduleEntry> schedule;
  bool attacker = false;

  friend bool operator==(const EcuSpec&, const EcuSpec&) = default;
};

enum class AttackKind { DoS, Fuzzy, Impersonation };

inline const char* to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::DoS: return "dos";
    case AttackKind::Fuzzy: return "fuzzy";
    case AttackKind::Impersonation: return "impersonation";
  }
  return "?";
}

struct DosParams {
  double flood_period_us = 0.0;  // 0 selects back-to-back flooding at one frame time
  friend bool operator==(const DosParams&, const DosParams&) = default;
};

struct FuzzyParams {
  std::vector<FrameId> targets;
  double injection_period_us = 50000.0;
  bool aperiodic = false;
  /// Ids no normal ECU schedules; injected alongside the spoofed ones.
  std::vector<FrameId> unknown_ids;
  friend bool operator==(const FuzzyParams&, const FuzzyParams&) = default;
};

struct ImpersonationParams {
  EcuLabel target;
  friend bool operator==(const ImpersonationParams&, const ImpersonationParams&) = default;
};

struct AttackSpec {
  AttackKind kind = AttackKind::DoS;
  double start_ms = 0.0;
  std::optional<double> duration_ms;  // none: persists until the end of the run
  EcuLabel attacker{"X"};
  ClockModel attacker_clock;
  std::variant<DosParams, FuzzyParams, ImpersonationParams> params;

  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

struct Scenario {
  BusSpec bus;
  std::vector<EcuSpec> ecus;
  std::optional<AttackSpec> attack;
  double duration_ms = 60000.0;
  std::uint64_t seed = 1;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

inline void validate(const BusSpec& bus) {
  if (!(bus.bitrate_bps > 0.0)) throw Error(ErrorCode::InvalidSpec, "bitrate_bps must be > 0");
  if (!(bus.frame_bits > 0.0)) throw Error(ErrorCode::InvalidSpec, "frame_bits must be > 0");
  if (!(bus.stuffing_factor >= 1.0)) throw Error(ErrorCode::InvalidSpec, "stuffing_factor must be >= 1");
  if (!(bus.base_delay_us >= 0.0)) throw Error(ErrorCode::InvalidSpec, "base_delay_us must be >= 0");
  if (!(bus.delay_jitter_us >= 0.0)) throw Error(ErrorCode::InvalidSpec, "delay_jitter_us must be >= 0");
}

/// Wire time of one frame, rounded to 0.1 us.
inline double frame_time(double frame_bits, double bitrate_bps) {
  if (!(frame_bits > 0.0) || !(bitrate_bps > 0.0))
    throw Error(ErrorCode::InvalidSpec, "frame_time needs positive frame_bits and bitrate_bps");
  return std::round(frame_bits / bitrate_bps * 1e7) / 10.0;
}

inline double frame_time(const BusSpec& bus) { return frame_time(bus.frame_bits * bus.stuffing_factor, bus.bitrate_bps); }

/// Ids scheduled by non-attacker ECUs.
inline std::set<FrameId> normal_ids(const Scenario& scenario) {
  std::set<FrameId> ids;
  for (const auto& ecu : scenario.ecus)
    if (!ecu.attacker)
      for (const auto& entry : ecu.schedule) ids.insert(entry.id);
  return ids;
}

inline const EcuSpec* find_ecu(const Scenario& scenario, const EcuLabel& label) {
  for (const auto& ecu : scenario.ecus)
    if (ecu.label == label) return &ecu;
  return nullptr;
}

inline void validate(const Scenario& scenario) {
  validate(scenario.bus);
  if (!(scenario.duration_ms > 0.0)) throw Error(ErrorCode::InvalidScenario, "duration_ms must be > 0");
  if (scenario.ecus.empty()) throw Error(ErrorCode::InvalidScenario, "scenario needs at least one ECU");
  std::set<EcuLabel> labels;
  std::set<FrameId> owned;
  for (const auto& ecu : scenario.ecus) {
    if (ecu.label.empty()) throw Error(ErrorCode::InvalidScenario, "empty ECU label");
    if (!labels.insert(ecu.label).second)
      throw Error(ErrorCode::InvalidScenario, "duplicate ECU label '" + ecu.label.str() + "'");
    validate(ecu.clock);
    for (const auto& entry : ecu.schedule) {
      if (!(entry.period_us > 0.0))
        throw Error(ErrorCode::InvalidScenario, "period must be > 0 on ECU '" + ecu.label.str() + "'");
      if (entry.dlc > 8) throw Error(ErrorCode::InvalidScenario, "dlc exceeds 8");
      if (!entry.extended && entry.id.value() > 0x7FF)
        throw Error(ErrorCode::InvalidScenario, "standard frame id exceeds 11 bits");
      if (!ecu.attacker && !owned.insert(entry.id).second)
        throw Error(ErrorCode::InvalidScenario, "frame id scheduled by more than one normal ECU");
    }
  }
  if (scenario.attack) {
    const auto& attack = *scenario.attack;
    if (!(attack.start_ms >= 0.0)) throw Error(ErrorCode::InvalidScenario, "attack start_ms must be >= 0");
    if (attack.duration_ms && !(*attack.duration_ms >= 0.0))
      throw Error(ErrorCode::InvalidScenario, "attack duration_ms must be >= 0");
    validate(attack.attacker_clock);
  }
}

/// Canonical text used for the scenario hash recorded in trace metadata.
inline std::string canonical_text(const Scenario& s) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  os << "bus " << s.bus.bitrate_bps << ' ' << s.bus.frame_bits << ' ' << s.bus.stuffing_factor << ' '
     << s.bus.base_delay_us << ' ' << s.bus.delay_jitter_us << '\n';
  for (const auto& e : s.ecus) {
    os << "ecu " << e.label.str() << ' ' << e.attacker << ' ' << e.clock.skew_ppm << ' '
       << e.clock.offset_jitter_us << ' ' << e.clock.phase_us << '\n';
    for (const auto& x : e.schedule)
      os << " sched " << x.id.value() << ' ' << x.extended << ' ' << x.period_us << ' ' << x.offset_us << ' '
         << x.dlc << ' ' << x.start_us << ' ' << x.stop_us << ' ' << x.aperiodic << ' ' << x.random_payload
         << '\n';
  }
  if (s.attack) {
    const auto& a = *s.attack;
    os << "attack " << to_string(a.kind) << ' ' << a.start_ms << ' ' << (a.duration_ms ? *a.duration_ms : -1.0)
       << ' ' << a.attacker.str() << ' ' << a.attacker_clock.skew_ppm << ' ' << a.attacker_clock.offset_jitter_us
       << ' ' << a.attacker_clock.phase_us << '\n';
    if (const auto* p = std::get_if<DosParams>(&a.params)) os << " dos " << p->flood_period_us << '\n';
    if (const auto* p = std::get_if<FuzzyParams>(&a.params)) {
      os << " fuzzy " << p->injection_period_us << ' ' << p->aperiodic;
      for (auto id : p->targets) os << " t" << id.value();
      for (auto id : p->unknown_ids) os << " u" << id.value();
      os << '\n';
    }
    if (const auto* p = std::get_if<ImpersonationParams>(&a.params)) os << " imp " << p->target.str() << '\n';
  }
  os << "duration " << s.duration_ms << "\nseed " << s.seed << '\n';
  return os.str();
}

inline std::uint64_t scenario_hash(const Scenario& s) { return fnv1a(canonical_text(s)); }

}  // namespace canskew
