// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "support.hpp"

using namespace canskew;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& why) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + why;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string num(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

constexpr Micros kStep = 500000;  // one batch step: N/2 periods of 50 ms
constexpr Micros kFloodStart = 2000000;
constexpr Micros kAttackStart = 20000000;

const AnalysisConfig kCfg{};

const FingerprintDb& reference_db() {
  static const FingerprintDb db = build_fingerprints(run(presets::paper_normal(999, 120000)).trace, kCfg).db;
  return db;
}

FingerprintDb registered_db(double attacker_skew) {
  return build_fingerprints(run(presets::paper_calibration(999, attacker_skew, 120000)).trace, kCfg).db;
}

Scenario phase_continuous(std::uint64_t seed, double gap_ppm) {
  auto sc = presets::paper_impersonation(seed, presets::kSkewA + gap_ppm);
  sc.attack->attacker_clock.phase_us = -gap_ppm * static_cast<double>(kAttackStart) * 1e-6;
  return sc;
}

/// Signed-series fit over [from, to) of receiver time, re-origined at the
/// first point in the window.
std::optional<Fingerprint> window_fit(const IdStream& s, Micros from, Micros to) {
  AccumulatedOffsetSeries w;
  w.id = s.id;
  std::optional<SeriesPoint> base;
  for (const auto& p : s.signed_series.points) {
    const Micros t = p.elapsed_us + s.signed_series.origin_us;
    if (t < from || t >= to) continue;
    if (!base) base = p;
    else w.points.push_back({p.elapsed_us - base->elapsed_us, p.accumulated_us - base->accumulated_us});
  }
  if (w.points.size() < kCfg.estimator.min_batches) return std::nullopt;
  return fingerprint_of(w, kCfg.estimator);
}

const IdStream* stream(const AnalysisResult& r, std::uint32_t id) {
  for (const auto& ida : r.ids)
    if (ida.stream.id.value() == id) return &ida.stream;
  return nullptr;
}

bool detected(const AnalysisResult& r, AttackClass cls, Micros onset) {
  return std::any_of(r.events.begin(), r.events.end(), [&](const DetectionEvent& e) {
    return e.classified == cls && e.time_us >= onset && e.time_us <= onset + 5 * kStep;
  });
}

// 1. Reference topology: nine linear series in three clock clusters.
Verdict reference_topology() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto trace = run(presets::paper_normal(1)).trace;
  const auto r = analyze(trace, kCfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  v.require(r.ids.size() == 9, std::to_string(r.ids.size()) + " series");
  double min_r2 = 1.0;
  for (const auto& ida : r.ids) min_r2 = std::min(min_r2, testing_support::r_squared(ida.stream.series));
  v.require(min_r2 >= 0.99, "R^2 " + num(min_r2, 4));

  const auto groups = cluster(r.fingerprints);
  v.require(groups.size() == 3, std::to_string(groups.size()) + " clusters");
  const std::map<std::string, double> truth{{"A", presets::kSkewA}, {"B", presets::kSkewB}, {"C", presets::kSkewC}};
  std::set<std::string> seen;
  for (const auto& g : groups) {
    std::set<std::string> owners;
    for (const auto& fp : g) owners.insert(fp.owner);
    v.require(owners.size() == 1 && g.size() == 3, "cluster mixes ECUs");
    if (owners.size() != 1) continue;
    const std::string owner = *owners.begin();
    seen.insert(owner);
    const auto c = combine(g, EcuLabel{owner}, kCfg.estimator.z);
    v.require(std::abs(c.skew_us_per_s - truth.at(owner)) <= c.ci_us_per_s,
              owner + " at " + num(c.skew_us_per_s) + " +/- " + num(c.ci_us_per_s) + " misses " + num(truth.at(owner), 0));
    v.note(owner + " " + num(c.skew_us_per_s, 1) + "+/-" + num(c.ci_us_per_s, 1));
  }
  v.require(seen.size() == 3, "clusters do not cover A, B and C");
  v.require(secs < 5.0, "runtime " + num(secs) + " s");
  v.note("min R^2 " + num(min_r2, 4) + ", " + num(secs, 2) + " s");
  return v;
}

// 2. Skew recovery over 100 seeds per true skew.
Verdict skew_recovery() {
  Verdict v;
  for (double skew : {-500.0, -100.0, 45.0, 100.0, 500.0}) {
    std::vector<double> err;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      const auto trace = run(testing_support::single_ecu(skew, 25.0, 200, seed)).trace;
      const auto report = build_fingerprints(trace, kCfg);
      const auto* fp = report.db.find(FrameId{1});
      if (!fp) {
        v.require(false, "no fingerprint at " + num(skew, 0));
        break;
      }
      err.push_back(std::abs(fp->skew_us_per_s - skew));
    }
    const double med = testing_support::median(err);
    const double bound = std::abs(skew) == 45.0 ? 5.0 : 0.05 * std::abs(skew);
    v.require(med <= bound, num(skew, 0) + " ppm median error " + num(med) + " > " + num(bound));
    v.note(num(skew, 0) + ":" + num(med) + " us/s");
  }
  return v;
}

// 3. Slope breaks at the attack, recovery after DoS, persistent change otherwise.
Verdict slope_breaks() {
  Verdict v;
  const auto& db = reference_db();

  const auto dos = analyze(run(presets::paper_dos(1)).trace, kCfg, db);
  for (std::uint32_t id = 1; id <= 9; ++id) {
    const bool flagged = std::any_of(dos.events.begin(), dos.events.end(), [&](auto& e) {
      return e.id.value() == id && e.time_us >= kFloodStart && e.time_us <= kFloodStart + 5 * kStep;
    });
    v.require(flagged, "DoS left " + key_text(FrameId{id}) + " unflagged");
    const auto post = window_fit(*stream(dos, id), 10000000, 60000000);
    v.require(post && compatible(*post, *db.find(FrameId{id})), "DoS " + key_text(FrameId{id}) + " slope did not recover");
  }

  auto persistent = [&](const Scenario& sc, std::vector<std::uint32_t> ids, const char* name) {
    const auto r = analyze(run(sc).trace, kCfg, db);
    for (auto id : ids) {
      const auto* s = stream(r, id);
      const auto pre = window_fit(*s, 0, kAttackStart);
      const auto early = window_fit(*s, kAttackStart + 5 * kStep, 40000000);
      const auto late = window_fit(*s, 40000000, 60000000);
      const bool changed = pre && early && late && !compatible(*pre, *early) && !compatible(*pre, *late);
      v.require(changed, std::string(name) + " " + key_text(FrameId{id}) + " slope did not change persistently");
      const bool flagged = std::any_of(r.events.begin(), r.events.end(), [&](auto& e) {
        return e.id.value() == id && e.time_us >= kAttackStart && e.time_us <= kAttackStart + 5 * kStep;
      });
      v.require(flagged, std::string(name) + " " + key_text(FrameId{id}) + " not flagged at onset");
      if (changed && id == ids.front())
        v.note(std::string(name) + " " + key_text(FrameId{id}) + " " + num(pre->skew_us_per_s, 1) + " -> " +
               num(late->skew_us_per_s, 1));
    }
  };
  persistent(presets::paper_fuzzy(1), {5}, "fuzzy");
  persistent(presets::paper_impersonation(1), {1, 2, 3}, "impersonation");
  return v;
}

// 4. Detection rate within five batches of onset.
Verdict detection() {
  Verdict v;
  const auto& db = reference_db();
  auto rate = [&](const char* name, std::function<Scenario(std::uint64_t)> make, AttackClass cls, Micros onset) {
    int hits = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) hits += detected(analyze(run(make(seed)).trace, kCfg, db), cls, onset);
    v.require(hits >= 95, std::string(name) + " " + std::to_string(hits) + "/100");
    v.note(std::string(name) + " " + std::to_string(hits));
  };
  rate("dos", [](auto s) { return presets::paper_dos(s); }, AttackClass::DoS, kFloodStart);
  rate("fuzzy", [](auto s) { return presets::paper_fuzzy(s); }, AttackClass::Fuzzy, kAttackStart);
  rate("imp+200", [](auto s) { return presets::paper_impersonation(s); }, AttackClass::Impersonation, kAttackStart);
  rate("imp+100", [](auto s) { return phase_continuous(s, 100); }, AttackClass::Impersonation, kAttackStart);
  rate("imp-100", [](auto s) { return phase_continuous(s, -100); }, AttackClass::Impersonation, kAttackStart);
  return v;
}

// 5. No events on attack-free traffic: 1000 batches per seed, 20 seeds.
Verdict false_alarms() {
  Verdict v;
  std::size_t events = 0, batches = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = analyze(run(presets::paper_normal(seed, 505000)).trace, kCfg, reference_db());
    events += r.events.size();
    std::size_t fewest = SIZE_MAX;
    for (const auto& ida : r.ids) fewest = std::min(fewest, ida.stream.batches.size());
    v.require(fewest >= 1000, "seed " + std::to_string(seed) + " has only " + std::to_string(fewest) + " batches");
    batches += fewest;
  }
  v.require(events == 0, std::to_string(events) + " events");
  v.note(std::to_string(events) + " events over " + std::to_string(batches) + " batches per id");
  return v;
}

// 6. Source naming with and without the attacker's fingerprint.
Verdict localization() {
  Verdict v;
  for (double gap : {200.0, 100.0, -100.0}) {
    const double skew = presets::kSkewA + gap;
    const auto with_x = registered_db(skew);
    int named = 0, fabricated = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      const auto sc = presets::paper_impersonation(seed, skew);
      const auto trace = run(sc).trace;
      const auto reg = analyze(trace, kCfg, with_x);
      named += std::any_of(reg.events.begin(), reg.events.end(), [](auto& e) {
        return e.classified == AttackClass::Impersonation && e.suspected_source == EcuLabel{"X"};
      });
      const auto unreg = analyze(trace, kCfg, reference_db());
      fabricated += std::any_of(unreg.events.begin(), unreg.events.end(), [](auto& e) { return e.suspected_source.has_value(); });
    }
    v.require(named >= 95, "gap " + num(gap, 0) + " named X in " + std::to_string(named) + "/100");
    v.require(fabricated == 0, "gap " + num(gap, 0) + " fabricated a source in " + std::to_string(fabricated) + " runs");
    v.note("gap " + num(gap, 0) + ": X " + std::to_string(named) + "/100, unregistered named " + std::to_string(fabricated));
  }
  return v;
}

// 7. Oracle equivalences.
Verdict oracles() {
  Verdict v;
  v.require(batch_avg_offset({0, 50000, 100000}, 50000) == 0.0, "periodic batch");
  v.require(batch_avg_offset({0, 50005, 100010}, 50000) == 7.5, "fast batch");
  v.require(batch_avg_offset({0, 49995, 99990}, 50000) == -7.5, "slow batch");
  v.require(batch_avg_offset({1000, 11003, 20998, 31040}, 10000) == 41.0 / 3.0, "uneven batch");

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> slope(-600, 600), step(0.2, 1.0);
  std::normal_distribution<double> noise(0, 20);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    EstimatorState st(1.0);
    std::vector<double> x, y;
    const double b = slope(rng);
    double t = 0, last = 0;
    for (int k = 0; k < 20 + trial * 5; ++k) {
      t += step(rng);
      const Micros us = std::llround(t * 1e6);
      x.push_back(static_cast<double>(us) * 1e-6);
      y.push_back(b * t + noise(rng));
      last = update_skew(st, SeriesPoint{us, y.back()}).skew_us_per_s;
    }
    const double ols = testing_support::ols_through_origin(x, y);
    worst = std::max(worst, std::abs(last - ols) / std::max(1.0, std::abs(ols)));
  }
  v.require(worst <= 1e-9, "RLS vs OLS relative gap " + std::to_string(worst));

  int trace_ok = 0, db_ok = 0;
  std::mt19937_64 fuzz(20240601);
  for (int k = 0; k < 1000; ++k) {
    const auto t = testing_support::random_trace(fuzz);
    const auto doc = write_trace(t);
    const auto back = parse_trace(doc);
    trace_ok += back == t && write_trace(back) == doc;
    const auto db = testing_support::random_db(fuzz);
    const auto ddoc = write_db(db);
    const auto dback = parse_db(ddoc);
    db_ok += dback == db && write_db(dback) == ddoc;
  }
  v.require(trace_ok == 1000, "trace round trips " + std::to_string(trace_ok) + "/1000");
  v.require(db_ok == 1000, "db round trips " + std::to_string(db_ok) + "/1000");
  v.note("RLS/OLS max rel gap " + num(worst * 1e12, 3) + "e-12, round trips " + std::to_string(trace_ok) + "+" +
         std::to_string(db_ok));
  return v;
}

int shell(const std::string& args) {
  const std::string cmd = std::string("\"") + CANSKEW_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 8. Every command twice with identical inputs gives identical bytes.
Verdict determinism() {
  Verdict v;
  const fs::path root = fs::temp_directory_path() / ("canskew-acceptance-" + std::to_string(getpid()));
  fs::remove_all(root);
  std::map<std::string, std::string> first;
  const std::vector<std::string> scenarios{"paper-normal", "paper-dos", "paper-fuzzy", "paper-impersonation"};
  for (int pass = 0; pass < 2; ++pass) {
    const fs::path dir = root / std::to_string(pass);
    fs::create_directories(dir);
    const std::string d = dir.string();
    int failures = 0;
    for (const auto& s : scenarios)
      failures += shell("simulate --scenario " + std::string(CANSKEW_SCENARIOS) + "/" + s + ".json --seed 1 --out " + d) != 0;
    failures += shell("fingerprint --trace " + d + "/paper-normal.log --db " + d + "/ref.db") != 0;
    std::string series;
    for (const auto& s : scenarios) {
      failures += shell("detect --trace " + d + "/" + s + ".log --db " + d + "/ref.db --out " + d) != 0;
      series += " " + d + "/" + s + ".series.csv";
    }
    failures += shell("report" + series + " --out " + d + "/fig") != 0;
    v.require(failures == 0, std::to_string(failures) + " commands failed");
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const std::string rel = fs::relative(entry.path(), dir).string();
      const std::string bytes = slurp(entry.path());
      if (pass == 0)
        first[rel] = bytes;
      else
        v.require(first.count(rel) && first[rel] == bytes, rel + " differs");
    }
  }
  v.require(first.size() >= 4 * 4 + 1, "only " + std::to_string(first.size()) + " output files");
  v.note(std::to_string(first.size()) + " files identical");
  fs::remove_all(root);
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"reference topology: linear series, three clock clusters", reference_topology},
      {"skew recovery over 100 seeds", skew_recovery},
      {"slope breaks at attack onset", slope_breaks},
      {"detection within 5 batches in >= 95% of runs", detection},
      {"no false alarms over 20 x 1000 batches", false_alarms},
      {"attacker localization", localization},
      {"oracle equivalences", oracles},
      {"byte-identical command outputs", determinism},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !v.pass;
    std::printf("%s %zu %s (%s) [%.1f s]\n", v.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, v.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
