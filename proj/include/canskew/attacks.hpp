#pragma once

#include <algorithm>
#include <limits>
#include <set>

#include "canskew/scenario.hpp"

// Attacks are scenario transforms: the compromised node becomes an ordinary
// participant in arbitration, so queueing effects come out of the bus model.
namespace canskew {

namespace detail {

inline double attack_start_us(const AttackSpec& spec) { return spec.start_ms * 1000.0; }

inline double attack_stop_us(const AttackSpec& spec) {
  if (!spec.duration_ms) return std::numeric_limits<double>::infinity();
  return (spec.start_ms + *spec.duration_ms) * 1000.0;
}

inline EcuSpec make_attacker(const Scenario& scenario, const AttackSpec& spec) {
  if (spec.attacker.empty()) throw Error(ErrorCode::InvalidScenario, "attacker label is empty");
  if (find_ecu(scenario, spec.attacker))
    throw Error(ErrorCode::InvalidScenario, "attacker label '" + spec.attacker.str() + "' already in scenario");
  validate(spec.attacker_clock);
  if (!(spec.start_ms >= 0.0)) throw Error(ErrorCode::InvalidScenario, "attack start_ms must be >= 0");
  EcuSpec attacker;
  attacker.label = spec.attacker;
  attacker.clock = spec.attacker_clock;
  attacker.attacker = true;
  return attacker;
}

template <class Params>
const Params& params_of(const AttackSpec& spec) {
  const auto* params = std::get_if<Params>(&spec.params);
  if (!params) throw Error(ErrorCode::InvalidScenario, "attack parameters do not match attack kind");
  return *params;
}

inline const ScheduleEntry* find_entry(const Scenario& scenario, FrameId id) {
  for (const auto& ecu : scenario.ecus)
    if (!ecu.attacker)
      for (const auto& entry : ecu.schedule)
        if (entry.id == id) return &entry;
  return nullptr;
}

}  // namespace detail

/// Compromised node floods the highest-priority identifier 0x000.
inline Scenario apply_dos(const Scenario& scenario, const AttackSpec& spec) {
  if (spec.kind != AttackKind::DoS) throw Error(ErrorCode::Precondition, "apply_dos needs a DoS attack spec");
  const auto& params = detail::params_of<DosParams>(spec);
  if (normal_ids(scenario).contains(FrameId{0}))
    throw Error(ErrorCode::InvalidScenario, "id 0x000 already scheduled by a normal ECU");
  const double ft = frame_time(scenario.bus);
  const double period = params.flood_period_us > 0.0 ? params.flood_period_us : ft;
  if (period < ft) throw Error(ErrorCode::InvalidScenario, "flood_period_us below one frame time");

  Scenario out = scenario;
  out.attack.reset();
  EcuSpec attacker = detail::make_attacker(scenario, spec);
  const double start = detail::attack_start_us(spec);
  const double stop = detail::attack_stop_us(spec);
  if (stop > start) {
    ScheduleEntry flood;
    flood.id = FrameId{0};
    flood.extended = false;
    flood.period_us = period;
    flood.offset_us = start;
    flood.dlc = 0;
    flood.start_us = start;
    flood.stop_us = stop;
    attacker.schedule.push_back(flood);
  }
  out.ecus.push_back(std::move(attacker));
  return out;
}

/// Compromised node injects frames carrying ids other ECUs own.
inline Scenario apply_fuzzy(const Scenario& scenario, const AttackSpec& spec) {
  if (spec.kind != AttackKind::Fuzzy) throw Error(ErrorCode::Precondition, "apply_fuzzy needs a fuzzy attack spec");
  const auto& params = detail::params_of<FuzzyParams>(spec);
  if (params.targets.empty()) throw Error(ErrorCode::InvalidScenario, "fuzzy attack needs at least one target id");
  if (!(params.injection_period_us > 0.0))
    throw Error(ErrorCode::InvalidScenario, "fuzzy injection period must be > 0");
  const auto owned = normal_ids(scenario);

  Scenario out = scenario;
  out.attack.reset();
  EcuSpec attacker = detail::make_attacker(scenario, spec);
  const double start = detail::attack_start_us(spec);
  const double stop = detail::attack_stop_us(spec);

  auto inject = [&](FrameId id, bool extended) {
    ScheduleEntry entry;
    entry.id = id;
    entry.extended = extended;
    entry.period_us = params.injection_period_us;
    entry.offset_us = start;
    entry.start_us = start;
    entry.stop_us = stop;
    entry.aperiodic = params.aperiodic;
    entry.random_payload = true;
    attacker.schedule.push_back(entry);
  };
  for (FrameId id : params.targets) {
    const auto* victim = detail::find_entry(scenario, id);
    if (!victim) throw Error(ErrorCode::InvalidScenario, "fuzzy target id is not scheduled by any normal ECU");
    inject(id, victim->extended);
  }
  for (FrameId id : params.unknown_ids) {
    if (owned.contains(id)) throw Error(ErrorCode::InvalidScenario, "unknown_ids must not be scheduled ids");
    inject(id, true);
  }
  out.ecus.push_back(std::move(attacker));
  return out;
}

/// Target ECU falls silent at start_ms and the compromised node sends its
/// schedule on the attacker's own clock. The silencing itself is not modelled.
inline Scenario apply_impersonation(const Scenario& scenario, const AttackSpec& spec) {
  if (spec.kind != AttackKind::Impersonation)
    throw Error(ErrorCode::Precondition, "apply_impersonation needs an impersonation attack spec");
  const auto& params = detail::params_of<ImpersonationParams>(spec);
  const EcuSpec* target = find_ecu(scenario, params.target);
  if (!target || target->attacker)
    throw Error(ErrorCode::InvalidScenario, "unknown impersonation target '" + params.target.str() + "'");

  Scenario out = scenario;
  out.attack.reset();
  EcuSpec attacker = detail::make_attacker(scenario, spec);
  const double start = detail::attack_start_us(spec);
  for (auto& ecu : out.ecus) {
    if (ecu.label != params.target) continue;
    for (auto& entry : ecu.schedule) {
      ScheduleEntry taken = entry;
      taken.start_us = std::max(entry.start_us, start);
      attacker.schedule.push_back(taken);
      entry.stop_us = std::min(entry.stop_us, start);
    }
  }
  out.ecus.push_back(std::move(attacker));
  return out;
}

inline Scenario apply_attack(const Scenario& scenario, const AttackSpec& spec) {
  switch (spec.kind) {
    case AttackKind::DoS: return apply_dos(scenario, spec);
    case AttackKind::Fuzzy: return apply_fuzzy(scenario, spec);
    case AttackKind::Impersonation: return apply_impersonation(scenario, spec);
  }
  throw Error(ErrorCode::InvalidScenario, "unknown attack kind");
}

/// Scenario with its attack (if any) materialized as an extra node.
inline Scenario materialize(const Scenario& scenario) {
  if (!scenario.attack) return scenario;
  return apply_attack(scenario, *scenario.attack);
}

}  // namespace canskew
