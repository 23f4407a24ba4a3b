#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "canskew/bus.hpp"
#include "canskew/detector.hpp"
#include "canskew/fingerprint.hpp"
#include "canskew/text.hpp"

// Text formats: candump traces, per-batch series CSV, fingerprint databases.
namespace canskew {

/// Strictly increasing, non-negative arrivals and well-formed frames.
inline void validate(const Trace& trace) {
  Micros prev = -1;
  for (std::size_t k = 0; k < trace.frames.size(); ++k) {
    const auto& f = trace.frames[k];
    if (f.arrival < 0) throw Error(ErrorCode::InvalidInput, "negative arrival time");
    if (f.arrival <= prev)
      throw Error(ErrorCode::Ordering, "arrival " + std::to_string(f.arrival) + " does not follow " +
                                           std::to_string(prev) + " (frame " + std::to_string(k) + ")");
    validate(f.frame);
    prev = f.arrival;
  }
  for (const auto& w : trace.meta.warnings)
    if (w.find('\n') != std::string::npos) throw Error(ErrorCode::InvalidInput, "warning text spans lines");
}

namespace detail {

inline std::string candump_time(Micros t) {
  std::string frac = std::to_string(t % 1000000);
  return "(" + std::to_string(t / 1000000) + "." + std::string(6 - frac.size(), '0') + frac + ")";
}

}  // namespace detail

/// One `(SECONDS.MICROS) iface ID#DATA` line per frame after `#` header
/// lines carrying the metadata.
inline std::string write_trace(const Trace& trace, const std::string& iface = "can0") {
  validate(trace);
  const auto& m = trace.meta;
  std::string out;
  out += "# canskew trace v1\n";
  out += "# scenario_hash " + hash_text(m.scenario_hash) + "\n";
  out += "# seed " + text::fmt(m.seed) + "\n";
  out += "# bitrate_bps " + text::fmt(m.bitrate_bps) + "\n";
  out += "# frame_bits " + text::fmt(m.frame_bits) + "\n";
  out += "# duration_us " + text::fmt(m.duration_us) + "\n";
  for (const auto& [id, owner] : m.schedule)
    out += "# schedule " + text::hex(id.value(), 8) + " " + owner.ecu.str() + " " + text::fmt(owner.period_us) + "\n";
  for (const auto& w : m.warnings) out += "# warning " + w + "\n";
  for (const auto& f : trace.frames) {
    out += detail::candump_time(f.arrival);
    out += ' ';
    out += iface;
    out += ' ';
    out += f.frame.extended ? text::hex(f.frame.id.value(), 8) : text::hex(f.frame.id.value(), 3);
    out += '#';
    for (auto byte : f.frame.payload) out += text::hex(byte, 2);
    out += '\n';
  }
  return out;
}

namespace detail {

inline Micros parse_candump_time(std::string_view tok, std::size_t line) {
  if (tok.size() < 4 || tok.front() != '(' || tok.back() != ')')
    throw text::parse_error(line, "timestamp must look like (SECONDS.MICROS)");
  tok = tok.substr(1, tok.size() - 2);
  const auto dot = tok.find('.');
  if (dot == std::string_view::npos || tok.size() - dot - 1 != 6)
    throw text::parse_error(line, "timestamp needs exactly six fractional digits");
  const auto secs = text::parse_int<std::int64_t>(tok.substr(0, dot));
  const auto micros = text::parse_int<std::int64_t>(tok.substr(dot + 1));
  if (!secs || !micros || *secs < 0 || *micros < 0 || *secs > 9'000'000'000'000LL)
    throw text::parse_error(line, "bad timestamp '" + std::string(tok) + "'");
  return *secs * 1000000 + *micros;
}

inline CanFrame parse_candump_frame(std::string_view tok, std::size_t line) {
  const auto hash = tok.find('#');
  if (hash == std::string_view::npos) throw text::parse_error(line, "frame must look like ID#DATA");
  const auto id_text = tok.substr(0, hash);
  const auto data = tok.substr(hash + 1);
  CanFrame frame;
  if (id_text.size() != 3 && id_text.size() != 8)
    throw text::parse_error(line, "id must have 3 (standard) or 8 (extended) hex digits");
  if (!text::is_hex(id_text)) throw text::parse_error(line, "bad hex in id '" + std::string(id_text) + "'");
  const auto id = *text::parse_int<std::uint32_t>(id_text, 16);
  frame.extended = id_text.size() == 8;
  if (!frame.extended && id > 0x7FF) throw text::parse_error(line, "standard id exceeds 0x7FF");
  if (id > FrameId::kMax) throw text::parse_error(line, "extended id exceeds 29 bits");
  frame.id = FrameId{id};
  if (!data.empty() && (data.front() == 'R' || data.front() == '#'))
    throw text::parse_error(line, "remote and CAN FD frames are not supported");
  if (data.size() % 2 != 0 || data.size() > 16)
    throw text::parse_error(line, "data must be 0 to 8 bytes as hex pairs");
  if (!data.empty() && !text::is_hex(data)) throw text::parse_error(line, "bad hex in data '" + std::string(data) + "'");
  for (std::size_t i = 0; i < data.size(); i += 2)
    frame.payload.push_back(static_cast<std::uint8_t>(*text::parse_int<unsigned>(data.substr(i, 2), 16)));
  return frame;
}

inline void parse_trace_comment(std::string_view body, std::size_t line, TraceMetadata& m) {
  const auto words = text::split_ws(body);
  if (words.empty()) return;
  const auto key = words[0];
  auto one = [&]() {
    if (words.size() != 2) throw text::parse_error(line, "'" + std::string(key) + "' takes one value");
    return words[1];
  };
  auto number = [&](std::string_view v) {
    const auto d = text::parse_double(v);
    if (!d) throw text::parse_error(line, "bad number '" + std::string(v) + "'");
    return *d;
  };
  if (key == "scenario_hash") {
    const auto v = one();
    if (v.size() != 16 || !text::is_hex(v)) throw text::parse_error(line, "scenario_hash needs 16 hex digits");
    m.scenario_hash = *text::parse_int<std::uint64_t>(v, 16);
  } else if (key == "seed") {
    const auto v = text::parse_int<std::uint64_t>(one());
    if (!v) throw text::parse_error(line, "bad seed");
    m.seed = *v;
  } else if (key == "bitrate_bps") {
    m.bitrate_bps = number(one());
  } else if (key == "frame_bits") {
    m.frame_bits = number(one());
  } else if (key == "duration_us") {
    const auto v = text::parse_int<std::int64_t>(one());
    if (!v) throw text::parse_error(line, "bad duration_us");
    m.duration_us = *v;
  } else if (key == "schedule") {
    if (words.size() != 4) throw text::parse_error(line, "schedule takes ID OWNER PERIOD_US");
    if (words[1].size() != 8 || !text::is_hex(words[1])) throw text::parse_error(line, "schedule id needs 8 hex digits");
    const auto id = *text::parse_int<std::uint32_t>(words[1], 16);
    if (id > FrameId::kMax) throw text::parse_error(line, "schedule id exceeds 29 bits");
    try {
      m.schedule[FrameId{id}] = {EcuLabel{std::string(words[2])}, number(words[3])};
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Parse) throw;
      throw text::parse_error(line, e.what());
    }
  } else if (key == "warning") {
    const auto start = body.find("warning") + 8;
    m.warnings.emplace_back(start <= body.size() ? body.substr(start) : std::string_view{});
  }
  // anything else: foreign comment, ignored
}

}  // namespace detail

/// Reads writer output or a plain candump log. Unknown comment lines are
/// skipped; malformed lines raise a parse error carrying the line number,
/// and timestamps that do not increase raise an ordering error.
inline Trace parse_trace(std::string_view textdoc) {
  Trace trace;
  Micros prev = -1;
  std::size_t n = 0;
  for (auto raw : text::lines(textdoc)) {
    ++n;
    const auto first = raw.find_first_not_of(" \t");
    if (first == std::string_view::npos) continue;
    const auto line = raw.substr(first);
    if (line.front() == '#') {
      auto body = line.substr(1);
      if (!body.empty() && body.front() == ' ') body.remove_prefix(1);
      detail::parse_trace_comment(body, n, trace.meta);
      continue;
    }
    const auto words = text::split_ws(line);
    if (words.size() != 3) throw text::parse_error(n, "expected '(time) iface ID#DATA'");
    const Micros t = detail::parse_candump_time(words[0], n);
    CanFrame frame = detail::parse_candump_frame(words[2], n);
    if (t <= prev)
      throw Error(ErrorCode::Ordering, "line " + std::to_string(n) + ": timestamp does not increase", n);
    prev = t;
    trace.frames.push_back(TimestampedFrame{t, std::move(frame)});
  }
  return trace;
}

inline constexpr std::string_view kSeriesCsvHeader =
    "id,batch_index,elapsed_time_us,accumulated_offset_us,skew_estimate,identification_error";

/// One row per batch point, ids ascending. Estimator columns stay empty
/// where no estimate exists.
inline std::string write_series_csv(std::span<const IdAnalysis> ids) {
  std::vector<const IdAnalysis*> order;
  for (const auto& ida : ids) order.push_back(&ida);
  std::stable_sort(order.begin(), order.end(), [](auto a, auto b) { return a->stream.id < b->stream.id; });
  std::string out(kSeriesCsvHeader);
  out += '\n';
  for (const auto* ida : order) {
    const auto& pts = ida->stream.series.points;
    const std::string id = key_text(ida->stream.id);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      out += id;
      out += ',' + std::to_string(k);
      out += ',' + text::fmt(pts[k].elapsed_us);
      out += ',' + text::fmt(pts[k].accumulated_us);
      out += ',';
      if (k < ida->track.skew.size()) out += text::fmt(ida->track.skew[k]);
      out += ',';
      if (k < ida->track.error.size()) out += text::fmt(ida->track.error[k]);
      out += '\n';
    }
  }
  return out;
}

struct SeriesCsvRow {
  FrameId id;
  std::size_t batch_index = 0;
  double elapsed_time_us = 0.0;
  double accumulated_offset_us = 0.0;
  std::optional<double> skew_estimate;
  std::optional<double> identification_error;
  friend bool operator==(const SeriesCsvRow&, const SeriesCsvRow&) = default;
};

inline std::vector<SeriesCsvRow> parse_series_csv(std::string_view doc) {
  const auto ls = text::lines(doc);
  if (ls.empty() || ls.front() != kSeriesCsvHeader)
    throw text::parse_error(1, "expected header '" + std::string(kSeriesCsvHeader) + "'");
  std::vector<SeriesCsvRow> rows;
  for (std::size_t n = 2; n <= ls.size(); ++n) {
    const auto line = ls[n - 1];
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == ',') {
        cells.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    if (cells.size() != 6) throw text::parse_error(n, "expected 6 columns, found " + std::to_string(cells.size()));
    SeriesCsvRow row;
    const auto id = cells[0];
    if (id.size() != 10 || id.substr(0, 2) != "0x" || !text::is_hex(id.substr(2)))
      throw text::parse_error(n, "bad id '" + std::string(id) + "'");
    const auto idv = *text::parse_int<std::uint32_t>(id.substr(2), 16);
    if (idv > FrameId::kMax) throw text::parse_error(n, "id exceeds 29 bits");
    row.id = FrameId{idv};
    const auto batch = text::parse_int<std::size_t>(cells[1]);
    const auto elapsed = text::parse_double(cells[2]);
    const auto acc = text::parse_double(cells[3]);
    if (!batch || !elapsed || !acc) throw text::parse_error(n, "bad number");
    row.batch_index = *batch;
    row.elapsed_time_us = *elapsed;
    row.accumulated_offset_us = *acc;
    for (int c : {4, 5}) {
      if (cells[static_cast<std::size_t>(c)].empty()) continue;
      const auto v = text::parse_double(cells[static_cast<std::size_t>(c)]);
      if (!v) throw text::parse_error(n, "bad number");
      (c == 4 ? row.skew_estimate : row.identification_error) = *v;
    }
    rows.push_back(row);
  }
  return rows;
}

/// `key=value` records, one fingerprint per line, in database order.
inline std::string write_db(const FingerprintDb& db) {
  std::string out = "# canskew fingerprint db v1\n";
  for (const auto& e : db.entries) {
    if (const auto* id = std::get_if<FrameId>(&e.key))
      out += "id=" + key_text(*id);
    else
      out += "ecu=" + std::get<EcuLabel>(e.key).str();
    out += " skew_us_per_s=" + text::fmt(e.skew_us_per_s);
    out += " ci_us_per_s=" + text::fmt(e.ci_us_per_s);
    out += " n_batches=" + std::to_string(e.n_batches);
    if (e.period_us != 0.0) out += " period_us=" + text::fmt(e.period_us);
    if (!e.owner.empty()) out += " owner=" + EcuLabel{e.owner}.str();
    if (!e.trace_hash.empty()) {
      if (!text::is_hex(e.trace_hash)) throw Error(ErrorCode::InvalidInput, "trace hash must be hex");
      out += " trace_hash=" + e.trace_hash;
    }
    out += '\n';
  }
  return out;
}

inline FingerprintDb parse_db(std::string_view doc) {
  FingerprintDb db;
  std::size_t n = 0;
  for (auto raw : text::lines(doc)) {
    ++n;
    const auto first = raw.find_first_not_of(" \t");
    if (first == std::string_view::npos || raw[first] == '#') continue;
    Fingerprint fp;
    std::map<std::string_view, std::string_view> fields;
    for (auto word : text::split_ws(raw)) {
      const auto eq = word.find('=');
      if (eq == std::string_view::npos || eq == 0) throw text::parse_error(n, "expected key=value, got '" + std::string(word) + "'");
      if (!fields.emplace(word.substr(0, eq), word.substr(eq + 1)).second)
        throw text::parse_error(n, "duplicate field '" + std::string(word.substr(0, eq)) + "'");
    }
    auto take = [&](std::string_view key) -> std::optional<std::string_view> {
      auto it = fields.find(key);
      if (it == fields.end()) return std::nullopt;
      auto v = it->second;
      fields.erase(it);
      return v;
    };
    auto number = [&](std::string_view key) -> std::optional<double> {
      const auto v = take(key);
      if (!v) return std::nullopt;
      const auto d = text::parse_double(*v);
      if (!d) throw text::parse_error(n, "bad number for " + std::string(key));
      return d;
    };
    const auto id = take("id");
    const auto ecu = take("ecu");
    if (id.has_value() == ecu.has_value()) throw text::parse_error(n, "need exactly one of id= or ecu=");
    try {
      if (id) {
        if (id->size() != 10 || id->substr(0, 2) != "0x" || !text::is_hex(id->substr(2)))
          throw text::parse_error(n, "id must look like 0x0000000A");
        fp.key = FrameId{*text::parse_int<std::uint32_t>(id->substr(2), 16)};
      } else {
        fp.key = EcuLabel{std::string(*ecu)};
      }
      const auto skew = number("skew_us_per_s");
      const auto ci = number("ci_us_per_s");
      const auto nb = take("n_batches");
      if (!skew || !ci || !nb) throw text::parse_error(n, "skew_us_per_s, ci_us_per_s and n_batches are required");
      const auto nbv = text::parse_int<std::size_t>(*nb);
      if (!nbv) throw text::parse_error(n, "bad n_batches");
      if (!(*ci >= 0.0)) throw text::parse_error(n, "ci_us_per_s must be >= 0");
      fp.skew_us_per_s = *skew;
      fp.ci_us_per_s = *ci;
      fp.n_batches = *nbv;
      if (const auto p = number("period_us")) fp.period_us = *p;
      if (const auto o = take("owner")) fp.owner = EcuLabel{std::string(*o)}.str();
      if (const auto h = take("trace_hash")) {
        if (!text::is_hex(*h)) throw text::parse_error(n, "trace_hash must be hex");
        fp.trace_hash = std::string(*h);
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Parse) throw;
      throw text::parse_error(n, e.what());
    }
    if (!fields.empty()) throw text::parse_error(n, "unknown field '" + std::string(fields.begin()->first) + "'");
    db.entries.push_back(std::move(fp));
  }
  return db;
}

}  // namespace canskew
