#pragma once

#include <string>

#include "canskew/scenario.hpp"

// Reference topology: three normal nodes, nine extended ids at 50 ms, and a
// compromised node X. Clock skews and jitter are placeholders; no
// measured values exist for the original prototype.
namespace canskew::presets {

inline constexpr double kSkewA = 130.0;
inline constexpr double kSkewB = -80.0;
inline constexpr double kSkewC = 45.0;
inline constexpr double kJitterUs = 5.0;
inline constexpr double kAttackerSkew = 330.0;  // 200 ppm away from A
inline constexpr double kAttackStartMs = 20000.0;

inline EcuSpec periodic_ecu(const std::string& label, double skew_ppm, std::uint32_t first_id, double first_offset_ms,
                            double period_ms = 50.0, int count = 3, double jitter_us = kJitterUs) {
  EcuSpec ecu;
  ecu.label = EcuLabel{label};
  ecu.clock = ClockModel{skew_ppm, jitter_us, 0.0};
  for (int k = 0; k < count; ++k) {
    ScheduleEntry e;
    e.id = FrameId{first_id + static_cast<std::uint32_t>(k)};
    e.period_us = period_ms * 1000.0;
    // ids of one node are spread 1 ms apart so they never contend with each other
    e.offset_us = (first_offset_ms + k) * 1000.0;
    ecu.schedule.push_back(e);
  }
  return ecu;
}

inline Scenario paper_normal(std::uint64_t seed = 1, double duration_ms = 60000.0) {
  Scenario s;
  s.bus = BusSpec{};
  s.ecus.push_back(periodic_ecu("A", kSkewA, 0x1, 0.0));
  s.ecus.push_back(periodic_ecu("B", kSkewB, 0x4, 16.0));
  s.ecus.push_back(periodic_ecu("C", kSkewC, 0x7, 33.0));
  s.duration_ms = duration_ms;
  s.seed = seed;
  return s;
}

inline ClockModel attacker_clock(double skew_ppm = kAttackerSkew) { return ClockModel{skew_ppm, kJitterUs, 0.0}; }

inline Scenario paper_dos(std::uint64_t seed = 1, double start_ms = 2000.0, double duration_ms = 2000.0) {
  Scenario s = paper_normal(seed);
  AttackSpec a;
  a.kind = AttackKind::DoS;
  a.start_ms = start_ms;
  a.duration_ms = duration_ms;
  a.attacker_clock = attacker_clock();
  a.params = DosParams{};
  s.attack = a;
  return s;
}

inline Scenario paper_fuzzy(std::uint64_t seed = 1, double start_ms = kAttackStartMs) {
  Scenario s = paper_normal(seed);
  AttackSpec a;
  a.kind = AttackKind::Fuzzy;
  a.start_ms = start_ms;
  a.attacker_clock = attacker_clock();
  FuzzyParams p;
  p.targets = {FrameId{0x5}};
  p.injection_period_us = 50000.0;
  a.params = p;
  s.attack = a;
  return s;
}

inline Scenario paper_impersonation(std::uint64_t seed = 1, double attacker_skew_ppm = kAttackerSkew,
                                    double start_ms = kAttackStartMs) {
  Scenario s = paper_normal(seed);
  AttackSpec a;
  a.kind = AttackKind::Impersonation;
  a.start_ms = start_ms;
  a.attacker_clock = attacker_clock(attacker_skew_ppm);
  a.params = ImpersonationParams{EcuLabel{"A"}};
  s.attack = a;
  return s;
}

/// Attack-free run in which X also sends one periodic id of its own, so
/// that X can be fingerprinted and registered.
inline Scenario paper_calibration(std::uint64_t seed = 1, double attacker_skew_ppm = kAttackerSkew,
                                  double duration_ms = 60000.0) {
  Scenario s = paper_normal(seed, duration_ms);
  s.ecus.push_back(periodic_ecu("X", attacker_skew_ppm, 0xA, 45.0, 50.0, 1));
  return s;
}

}  // namespace canskew::presets
