#pragma once

#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <string_view>

#include <json.hpp>

#include "canskew/scenario.hpp"
#include "canskew/text.hpp"

// Scenario files: JSON with times in milliseconds and skews in ppm.
namespace canskew {

namespace detail {

// Strict reader: every key must be known, and errors name the JSON path.
class JsonObject {
 public:
  JsonObject(const nlohmann::json& j, std::string path, std::set<std::string> known)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "expected an object");
    for (const auto& [key, value] : j_.items())
      if (!known.contains(key)) fail(key, "unknown key");
  }

  [[noreturn]] void fail(std::string_view key, const std::string& what) const {
    std::string where = path_;
    if (!key.empty()) where += (where.empty() ? "" : ".") + std::string(key);
    throw Error(ErrorCode::InvalidScenario, (where.empty() ? std::string("scenario") : where) + ": " + what);
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const nlohmann::json& at(const std::string& key) const { return j_.at(key); }
  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) const {
    if (!has(key)) {
      if (!fallback) fail(key, "required number missing");
      return *fallback;
    }
    const auto& v = j_.at(key);
    if (!v.is_number()) fail(key, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(key, "must be finite");
    return d;
  }

  std::optional<double> optional_number(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return number(key);
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_boolean()) fail(key, "expected true or false");
    return j_.at(key).get<bool>();
  }

  std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt) const {
    if (!has(key)) {
      if (!fallback) fail(key, "required string missing");
      return *fallback;
    }
    if (!j_.at(key).is_string()) fail(key, "expected a string");
    return j_.at(key).get<std::string>();
  }

  std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) fail(key, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  EcuLabel label(const std::string& key, std::optional<std::string> fallback = std::nullopt) const {
    const std::string value = string(key, std::move(fallback));
    try {
      return EcuLabel{value};
    } catch (const Error& e) {
      fail(key, e.what());
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
};

inline FrameId frame_id_from_json(const nlohmann::json& v, const std::string& path) {
  auto fail = [&](const std::string& what) { throw Error(ErrorCode::InvalidScenario, path + ": " + what); };
  std::uint64_t raw = 0;
  if (v.is_number_unsigned()) {
    raw = v.get<std::uint64_t>();
  } else if (v.is_string()) {
    const auto s = v.get<std::string>();
    const std::string_view digits = s.rfind("0x", 0) == 0 || s.rfind("0X", 0) == 0 ? std::string_view(s).substr(2) : s;
    if (!text::is_hex(digits) || digits.size() > 8) fail("expected a hex id like \"0x00000001\"");
    raw = *text::parse_int<std::uint64_t>(digits, 16);
  } else {
    fail("expected an id (hex string or integer)");
  }
  if (raw > FrameId::kMax) fail("id exceeds 29 bits");
  return FrameId{static_cast<std::uint32_t>(raw)};
}

inline ClockModel clock_from_json(const JsonObject& o) {
  ClockModel c;
  c.skew_ppm = o.number("skew_ppm");
  c.offset_jitter_us = o.number("offset_jitter_us", 0.0);
  c.phase_us = o.number("phase_us", 0.0);
  try {
    validate(c);
  } catch (const Error& e) {
    o.fail("", e.what());
  }
  return c;
}

inline std::vector<FrameId> id_list(const JsonObject& o, const std::string& key) {
  std::vector<FrameId> ids;
  if (!o.has(key)) return ids;
  const auto& arr = o.at(key);
  if (!arr.is_array()) o.fail(key, "expected an array of ids");
  for (std::size_t i = 0; i < arr.size(); ++i)
    ids.push_back(frame_id_from_json(arr[i], o.sub(key) + "[" + std::to_string(i) + "]"));
  return ids;
}

inline nlohmann::ordered_json id_json(FrameId id) { return "0x" + text::hex(id.value(), 8); }

inline nlohmann::ordered_json ms(double us) { return us / 1000.0; }

}  // namespace detail

/// Parses and validates a scenario document. Schema problems are reported
/// as InvalidScenario errors naming the offending JSON path.
inline Scenario parse_scenario(std::string_view doc) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(doc.begin(), doc.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidScenario, std::string("not valid JSON: ") + e.what());
  }
  using detail::JsonObject;
  const JsonObject root(j, "", {"bus", "ecus", "attack", "duration_ms", "seed", "description"});
  Scenario s;
  if (root.has("bus")) {
    const JsonObject b(root.at("bus"), "bus",
                       {"bitrate_bps", "frame_bits", "stuffing_factor", "base_delay_us", "delay_jitter_us"});
    const BusSpec d;
    s.bus.bitrate_bps = b.number("bitrate_bps", d.bitrate_bps);
    s.bus.frame_bits = b.number("frame_bits", d.frame_bits);
    s.bus.stuffing_factor = b.number("stuffing_factor", d.stuffing_factor);
    s.bus.base_delay_us = b.number("base_delay_us", d.base_delay_us);
    s.bus.delay_jitter_us = b.number("delay_jitter_us", d.delay_jitter_us);
  }
  if (!root.has("ecus") || !root.at("ecus").is_array()) root.fail("ecus", "required array missing");
  const auto& ecus = root.at("ecus");
  for (std::size_t e = 0; e < ecus.size(); ++e) {
    const std::string path = "ecus[" + std::to_string(e) + "]";
    const JsonObject o(ecus[e], path,
                       {"label", "skew_ppm", "offset_jitter_us", "phase_us", "attacker", "schedule"});
    EcuSpec ecu;
    ecu.label = o.label("label");
    ecu.clock = detail::clock_from_json(o);
    ecu.attacker = o.boolean("attacker", false);
    if (o.has("schedule")) {
      const auto& sched = o.at("schedule");
      if (!sched.is_array()) o.fail("schedule", "expected an array");
      for (std::size_t k = 0; k < sched.size(); ++k) {
        const std::string sp = path + ".schedule[" + std::to_string(k) + "]";
        const JsonObject x(sched[k], sp,
                           {"id", "extended", "period_ms", "offset_ms", "dlc", "start_ms", "stop_ms", "aperiodic",
                            "random_payload"});
        ScheduleEntry entry;
        if (!x.has("id")) x.fail("id", "required id missing");
        entry.id = detail::frame_id_from_json(x.at("id"), sp + ".id");
        entry.extended = x.boolean("extended", true);
        entry.period_us = x.number("period_ms") * 1000.0;
        entry.offset_us = x.number("offset_ms", 0.0) * 1000.0;
        entry.dlc = static_cast<std::size_t>(x.unsigned_int("dlc", 8));
        entry.start_us = x.number("start_ms", 0.0) * 1000.0;
        if (const auto stop = x.optional_number("stop_ms")) entry.stop_us = *stop * 1000.0;
        entry.aperiodic = x.boolean("aperiodic", false);
        entry.random_payload = x.boolean("random_payload", false);
        ecu.schedule.push_back(entry);
      }
    }
    s.ecus.push_back(std::move(ecu));
  }
  if (root.has("attack")) {
    const JsonObject a(root.at("attack"), "attack",
                       {"kind", "start_ms", "duration_ms", "attacker", "attacker_clock", "flood_period_us", "targets",
                        "injection_period_ms", "aperiodic", "unknown_ids", "target"});
    AttackSpec attack;
    const std::string kind = a.string("kind");
    attack.start_ms = a.number("start_ms");
    attack.duration_ms = a.optional_number("duration_ms");
    attack.attacker = a.label("attacker", "X");
    if (!a.has("attacker_clock")) a.fail("attacker_clock", "required object missing");
    attack.attacker_clock =
        detail::clock_from_json(JsonObject(a.at("attacker_clock"), "attack.attacker_clock",
                                           {"skew_ppm", "offset_jitter_us", "phase_us"}));
    auto only = [&](std::set<std::string> allowed) {
      for (const char* key : {"flood_period_us", "targets", "injection_period_ms", "aperiodic", "unknown_ids", "target"})
        if (a.has(key) && !allowed.contains(key)) a.fail(key, "not valid for a " + kind + " attack");
    };
    if (kind == "dos") {
      only({"flood_period_us"});
      attack.kind = AttackKind::DoS;
      attack.params = DosParams{a.number("flood_period_us", 0.0)};
    } else if (kind == "fuzzy") {
      only({"targets", "injection_period_ms", "aperiodic", "unknown_ids"});
      attack.kind = AttackKind::Fuzzy;
      FuzzyParams p;
      p.targets = detail::id_list(a, "targets");
      p.injection_period_us = a.number("injection_period_ms", 50.0) * 1000.0;
      p.aperiodic = a.boolean("aperiodic", false);
      p.unknown_ids = detail::id_list(a, "unknown_ids");
      attack.params = p;
    } else if (kind == "impersonation") {
      only({"target"});
      attack.kind = AttackKind::Impersonation;
      attack.params = ImpersonationParams{a.label("target")};
    } else {
      a.fail("kind", "expected \"dos\", \"fuzzy\" or \"impersonation\"");
    }
    s.attack = attack;
  }
  s.duration_ms = root.number("duration_ms", 60000.0);
  s.seed = root.unsigned_int("seed", 1);
  validate(s);
  return s;
}

inline std::string write_scenario(const Scenario& s) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["bus"] = {{"bitrate_bps", s.bus.bitrate_bps},
              {"frame_bits", s.bus.frame_bits},
              {"stuffing_factor", s.bus.stuffing_factor},
              {"base_delay_us", s.bus.base_delay_us},
              {"delay_jitter_us", s.bus.delay_jitter_us}};
  j["ecus"] = ordered_json::array();
  for (const auto& ecu : s.ecus) {
    ordered_json e = {{"label", ecu.label.str()},
                      {"skew_ppm", ecu.clock.skew_ppm},
                      {"offset_jitter_us", ecu.clock.offset_jitter_us},
                      {"phase_us", ecu.clock.phase_us}};
    if (ecu.attacker) e["attacker"] = true;
    e["schedule"] = ordered_json::array();
    for (const auto& x : ecu.schedule) {
      ordered_json entry = {{"id", detail::id_json(x.id)},
                            {"extended", x.extended},
                            {"period_ms", detail::ms(x.period_us)},
                            {"offset_ms", detail::ms(x.offset_us)},
                            {"dlc", x.dlc}};
      if (x.start_us != 0.0) entry["start_ms"] = detail::ms(x.start_us);
      if (std::isfinite(x.stop_us)) entry["stop_ms"] = detail::ms(x.stop_us);
      if (x.aperiodic) entry["aperiodic"] = true;
      if (x.random_payload) entry["random_payload"] = true;
      e["schedule"].push_back(entry);
    }
    j["ecus"].push_back(e);
  }
  if (s.attack) {
    const auto& a = *s.attack;
    ordered_json o = {{"kind", to_string(a.kind)}, {"start_ms", a.start_ms}};
    if (a.duration_ms) o["duration_ms"] = *a.duration_ms;
    o["attacker"] = a.attacker.str();
    o["attacker_clock"] = {{"skew_ppm", a.attacker_clock.skew_ppm},
                           {"offset_jitter_us", a.attacker_clock.offset_jitter_us},
                           {"phase_us", a.attacker_clock.phase_us}};
    if (const auto* p = std::get_if<DosParams>(&a.params)) {
      if (p->flood_period_us != 0.0) o["flood_period_us"] = p->flood_period_us;
    } else if (const auto* p = std::get_if<FuzzyParams>(&a.params)) {
      o["targets"] = ordered_json::array();
      for (auto id : p->targets) o["targets"].push_back(detail::id_json(id));
      o["injection_period_ms"] = detail::ms(p->injection_period_us);
      if (p->aperiodic) o["aperiodic"] = true;
      if (!p->unknown_ids.empty()) {
        o["unknown_ids"] = ordered_json::array();
        for (auto id : p->unknown_ids) o["unknown_ids"].push_back(detail::id_json(id));
      }
    } else if (const auto* p = std::get_if<ImpersonationParams>(&a.params)) {
      o["target"] = p->target.str();
    }
    j["attack"] = o;
  }
  j["duration_ms"] = s.duration_ms;
  j["seed"] = s.seed;
  return j.dump(2) + "\n";
}

}  // namespace canskew
