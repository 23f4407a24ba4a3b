#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "canskew/detector.hpp"
#include "canskew/text.hpp"

// Detection reports: one JSON record per event, plus a readable summary.
namespace canskew {

inline nlohmann::ordered_json to_json(const DetectionEvent& ev) {
  using nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j;
  j["time_us"] = ev.time_us;
  j["id"] = key_text(ev.id);
  j["kind"] = to_string(ev.kind);
  j["class"] = to_string(ev.classified);
  j["source"] = ev.suspected_source ? ordered_json(ev.suspected_source->str()) : ordered_json(nullptr);
  j["victim"] = ev.victim ? ordered_json(ev.victim->str()) : ordered_json(nullptr);
  j["batch"] = ev.batch_index ? ordered_json(*ev.batch_index) : ordered_json(nullptr);
  j["pre_skew"] = opt(ev.evidence.pre_skew);
  j["pre_ci"] = opt(ev.evidence.pre_ci);
  j["post_skew"] = opt(ev.evidence.post_skew);
  j["post_ci"] = opt(ev.evidence.post_ci);
  j["mean_interval_us"] = opt(ev.evidence.mean_interval_us);
  j["bus_load"] = opt(ev.evidence.bus_load);
  return j;
}

inline std::string write_events(std::span<const DetectionEvent> events) {
  std::string out;
  for (const auto& ev : events) out += to_json(ev).dump() + "\n";
  return out;
}

namespace detail {

inline std::string seconds(Micros t) {
  std::string frac = std::to_string(t % 1000000);
  return std::to_string(t / 1000000) + "." + std::string(6 - frac.size(), '0') + frac + " s";
}

inline std::string skew_text(const std::optional<double>& skew, const std::optional<double>& ci) {
  if (!skew) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.1f +/- %.1f us/s", *skew, ci.value_or(0.0));
  return buf;
}

}  // namespace detail

/// One-page text: per attack class, the first event (onset time and batch),
/// the victim, the suspected source and the ids involved.
inline std::string write_summary(const AnalysisResult& result, std::size_t n_frames) {
  std::string out = "canskew detection summary\n";
  out += "frames analyzed: " + std::to_string(n_frames) + "\n";
  out += "periodic ids analyzed: " + std::to_string(result.ids.size()) + "\n";
  out += "events: " + std::to_string(result.events.size()) + "\n";
  if (result.events.empty()) out += "\nno attack detected\n";

  std::map<AttackClass, std::vector<const DetectionEvent*>> by_class;
  for (const auto& ev : result.events) by_class[ev.classified].push_back(&ev);
  for (const auto& [cls, evs] : by_class) {
    const DetectionEvent& first = *evs.front();
    std::map<std::string, std::size_t> sources, victims;
    std::vector<std::string> ids;
    for (const auto* ev : evs) {
      ++sources[ev->suspected_source ? ev->suspected_source->str() : "unknown"];
      if (ev->victim) ++victims[ev->victim->str()];
      const auto id = key_text(ev->id);
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
    out += "\nattack class: " + std::string(to_string(cls)) + "\n";
    out += "  onset: " + detail::seconds(first.time_us);
    if (first.batch_index) out += " (batch " + std::to_string(*first.batch_index) + " of " + key_text(first.id) + ")";
    out += "\n  events: " + std::to_string(evs.size()) + "\n";
    out += "  ids:";
    for (const auto& id : ids) out += " " + id;
    out += "\n  victim:";
    if (victims.empty()) out += " n/a";
    for (const auto& [v, n] : victims) out += " " + v + " (" + std::to_string(n) + ")";
    out += "\n  suspected source:";
    for (const auto& [s, n] : sources) out += " " + s + " (" + std::to_string(n) + ")";
    out += "\n  skew before/after at onset: " + detail::skew_text(first.evidence.pre_skew, first.evidence.pre_ci) +
           " -> " + detail::skew_text(first.evidence.post_skew, first.evidence.post_ci) + "\n";
  }
  if (!result.warnings.empty()) {
    out += "\nwarnings:\n";
    for (const auto& w : result.warnings) out += "  " + w + "\n";
  }
  return out;
}

}  // namespace canskew
