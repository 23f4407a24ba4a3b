// canskew: simulate CAN traffic, fingerprint ECU clocks, detect attacks.
#include <canskew.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace canskew;

namespace {

enum Exit : int {
  kOk = 0,
  kUsage = 64,
  kDataError = 65,
  kMissingInput = 66,
  kInternal = 70,
  kCannotWrite = 73,
};

struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CannotWrite : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// A data error already tagged with the file it came from.
struct FileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  if (!fs::exists(path)) throw MissingInput("input not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << content) || !out.flush()) throw CannotWrite("cannot write " + path.string());
}

template <class F>
auto parse_file(const fs::path& path, F&& parse) {
  const std::string content = read_file(path);
  try {
    return parse(content);
  } catch (const Error& e) {
    throw FileError(path.string() + ": " + e.what());
  }
}

struct Options {
  std::string scenario, trace, db, out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> batch_size;
  std::optional<double> kappa, gamma, lambda;
  bool signed_accumulation = false;
  std::vector<std::string> inputs;
};

AnalysisConfig analysis_config(const Options& o) {
  AnalysisConfig cfg;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.kappa) cfg.kappa = *o.kappa;
  if (o.gamma) cfg.gamma = *o.gamma;
  if (o.lambda) cfg.estimator.lambda = *o.lambda;
  if (o.signed_accumulation) cfg.mode = AccumulationMode::Signed;
  validate(cfg);
  return cfg;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

int cmd_simulate(const Options& o) {
  if (o.scenario.empty()) throw MissingInput("simulate needs --scenario");
  Scenario scenario = parse_file(o.scenario, parse_scenario);
  if (o.seed) scenario.seed = *o.seed;
  const auto result = run(scenario);
  const fs::path out = o.trace.empty() ? fs::path(o.out) / (fs::path(o.scenario).stem().string() + ".log") : fs::path(o.trace);
  write_file(out, write_trace(result.trace));

  std::set<FrameId> ids;
  for (const auto& f : result.trace.frames) ids.insert(f.frame.id);
  std::cout << "trace: " << out.string() << "\n"
            << "frames: " << result.trace.frames.size() << "\n"
            << "duration: " << fixed(static_cast<double>(result.trace.meta.duration_us) / 1e6, 3) << " s\n"
            << "ids: " << ids.size() << "\n"
            << "seed: " << scenario.seed << "\n";
  if (scenario.attack)
    std::cout << "attack: " << to_string(scenario.attack->kind) << " from " << fixed(scenario.attack->start_ms / 1000.0, 3)
              << " s\n";
  for (const auto& w : result.trace.meta.warnings) std::cout << "warning: " << w << "\n";
  return kOk;
}

int cmd_fingerprint(const Options& o) {
  if (o.trace.empty()) throw MissingInput("fingerprint needs --trace");
  const AnalysisConfig cfg = analysis_config(o);
  const Trace trace = parse_file(o.trace, parse_trace);
  const auto report = build_fingerprints(trace, cfg);
  const fs::path out = o.db.empty() ? fs::path(o.out) / (fs::path(o.trace).stem().string() + ".db") : fs::path(o.db);
  write_file(out, write_db(report.db));

  std::cout << "database: " << out.string() << "\n";
  std::cout << "key         skew_us_per_s        ci  n_batches  owner\n";
  for (const auto& e : report.db.entries) {
    std::string key = key_text(e.key);
    key.resize(std::max<std::size_t>(key.size(), 10), ' ');
    std::string skew = fixed(e.skew_us_per_s, 2), ci = fixed(e.ci_us_per_s, 2);
    std::cout << key << "  " << std::string(13 - std::min<std::size_t>(13, skew.size()), ' ') << skew << "  "
              << std::string(8 - std::min<std::size_t>(8, ci.size()), ' ') << ci << "  " << std::string(9 - std::min<std::size_t>(9, std::to_string(e.n_batches).size()), ' ')
              << e.n_batches << "  " << (e.owner.empty() ? "-" : e.owner) << "\n";
  }
  for (FrameId id : report.insufficient)
    std::cout << "insufficient: " << key_text(id) << " has fewer than " << cfg.estimator.min_batches << " batches\n";
  for (const auto& w : report.warnings) std::cout << "warning: " << w << "\n";
  if (report.db.empty()) std::cout << "warning: no id had enough data; the database is empty\n";
  return kOk;
}

int cmd_detect(const Options& o) {
  if (o.trace.empty()) throw MissingInput("detect needs --trace");
  if (o.db.empty() || !fs::exists(o.db))
    throw MissingInput("no fingerprint database" + (o.db.empty() ? std::string() : " at " + o.db) +
                       "; run 'canskew fingerprint --trace <attack-free trace> --db <file>' first");
  const AnalysisConfig cfg = analysis_config(o);
  const FingerprintDb db = parse_file(o.db, parse_db);
  const Trace trace = parse_file(o.trace, parse_trace);
  const auto result = analyze(trace, cfg, db);

  const std::string stem = fs::path(o.trace).stem().string();
  const fs::path dir(o.out);
  const std::string summary = write_summary(result, trace.frames.size());
  write_file(dir / (stem + ".events.jsonl"), write_events(result.events));
  write_file(dir / (stem + ".series.csv"), write_series_csv(result.ids));
  write_file(dir / (stem + ".summary.txt"), summary);
  std::cout << summary;
  return kOk;
}

// Wide table per scenario: one time column and one offset column per id.
std::string figure_table(const std::vector<SeriesCsvRow>& rows) {
  std::map<FrameId, std::map<std::size_t, const SeriesCsvRow*>> by_id;
  std::size_t max_batch = 0;
  for (const auto& r : rows) {
    by_id[r.id][r.batch_index] = &r;
    max_batch = std::max(max_batch, r.batch_index + 1);
  }
  std::string out = "batch_index";
  for (const auto& [id, _] : by_id) out += ",t_s_" + key_text(id) + ",offset_us_" + key_text(id);
  out += "\n";
  for (std::size_t k = 0; k < max_batch; ++k) {
    out += std::to_string(k);
    for (const auto& [id, pts] : by_id) {
      auto it = pts.find(k);
      if (it == pts.end()) {
        out += ",,";
        continue;
      }
      out += "," + text::fmt(it->second->elapsed_time_us / 1e6) + "," + text::fmt(it->second->accumulated_offset_us);
    }
    out += "\n";
  }
  return out;
}

int cmd_report(const Options& o) {
  if (o.inputs.empty()) throw MissingInput("report needs one or more series CSV files from 'canskew detect'");
  std::vector<std::pair<std::string, std::vector<SeriesCsvRow>>> all;
  for (const auto& in : o.inputs) all.emplace_back(in, parse_file(in, parse_series_csv));
  for (const auto& [in, rows] : all) {
    std::string stem = fs::path(in).stem().string();
    if (const auto dot = stem.find(".series"); dot != std::string::npos) stem.resize(dot);
    const fs::path out = fs::path(o.out) / (stem + ".figure.csv");
    write_file(out, figure_table(rows));
    std::cout << "figure data: " << out.string() << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"canskew: CAN clock-skew fingerprinting and intrusion detection"};
  app.require_subcommand(1);
  Options o;

  auto add_analysis = [&o](CLI::App* sub) {
    sub->add_option("--batch-size", o.batch_size, "messages per batch (even, >= 4)");
    sub->add_option("--kappa", o.kappa, "CUSUM drift allowance");
    sub->add_option("--gamma", o.gamma, "CUSUM alarm threshold");
    sub->add_option("--lambda", o.lambda, "estimator forgetting factor in (0, 1]");
    sub->add_flag("--signed-accumulation", o.signed_accumulation, "write the signed running sum instead of |offsets|");
  };

  auto* sim = app.add_subcommand("simulate", "run a scenario and write its trace");
  sim->add_option("--scenario", o.scenario, "scenario JSON file");
  sim->add_option("--seed", o.seed, "override the scenario seed");
  sim->add_option("--trace", o.trace, "trace file to write (default: OUT/<scenario>.log)");
  sim->add_option("--out", o.out, "output directory");

  auto* fp = app.add_subcommand("fingerprint", "fingerprint the ECUs of an attack-free trace");
  fp->add_option("--trace", o.trace, "candump trace");
  fp->add_option("--db", o.db, "database file to write (default: OUT/<trace>.db)");
  fp->add_option("--out", o.out, "output directory");
  add_analysis(fp);

  auto* det = app.add_subcommand("detect", "detect and classify attacks in a trace");
  det->add_option("--trace", o.trace, "candump trace");
  det->add_option("--db", o.db, "fingerprint database");
  det->add_option("--out", o.out, "output directory");
  add_analysis(det);

  auto* rep = app.add_subcommand("report", "turn series CSVs into per-scenario figure tables");
  rep->add_option("inputs", o.inputs, "series CSV files");
  rep->add_option("--out", o.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*sim) return cmd_simulate(o);
    if (*fp) return cmd_fingerprint(o);
    if (*det) return cmd_detect(o);
    if (*rep) return cmd_report(o);
    return kUsage;
  } catch (const MissingInput& e) {
    std::cerr << "canskew: " << e.what() << "\n";
    return kMissingInput;
  } catch (const CannotWrite& e) {
    std::cerr << "canskew: " << e.what() << "\n";
    return kCannotWrite;
  } catch (const FileError& e) {
    std::cerr << "canskew: " << e.what() << "\n";
    return kDataError;
  } catch (const Error& e) {
    std::cerr << "canskew: " << e.what() << "\n";
    return e.code() == ErrorCode::Precondition ? kInternal : kDataError;
  } catch (const std::exception& e) {
    std::cerr << "canskew: internal error: " << e.what() << "\n";
    return kInternal;
  }
}
