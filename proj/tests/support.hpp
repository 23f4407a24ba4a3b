#pragma once

#include <canskew.hpp>

#include <bit>
#include <cmath>
#include <random>
#include <string>
#include <span>
#include <vector>

namespace testing_support {

/// Least-squares slope of y on x through the origin.
inline double ols_through_origin(std::span<const double> x, std::span<const double> y) {
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sxy += x[i] * y[i], sxx += x[i] * x[i];
  return sxy / sxx;
}

/// Coefficient of determination of an ordinary (intercept) line fit.
inline double r_squared(const canskew::AccumulatedOffsetSeries& s) {
  const double n = static_cast<double>(s.points.size());
  double mx = 0, my = 0;
  for (const auto& p : s.points) mx += static_cast<double>(p.elapsed_us), my += p.accumulated_us;
  mx /= n, my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& p : s.points) {
    const double dx = static_cast<double>(p.elapsed_us) - mx, dy = p.accumulated_us - my;
    sxx += dx * dx, sxy += dx * dy, syy += dy * dy;
  }
  if (syy == 0.0) return 1.0;
  return sxy * sxy / (sxx * syy);
}

/// One ECU sending one id every 50 ms, long enough for `batches` batches.
inline canskew::Scenario single_ecu(double skew_ppm, double jitter_us, std::size_t batches, std::uint64_t seed) {
  canskew::Scenario sc;
  sc.seed = seed;
  sc.duration_ms = 50.0 * static_cast<double>(batches * 10 + 10) + 10.0;
  sc.ecus.push_back(canskew::presets::periodic_ecu("E", skew_ppm, 0x1, 0.0, 50.0, 1, jitter_us));
  return sc;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Generators for fuzzed documents.
inline canskew::TimestampedFrame frame_at(canskew::Micros t, std::uint32_t id, bool extended,
                                         std::vector<std::uint8_t> payload) {
  canskew::TimestampedFrame f;
  f.arrival = t;
  f.frame.id = canskew::FrameId{id};
  f.frame.extended = extended;
  f.frame.payload = std::move(payload);
  return f;
}

inline double random_double(std::mt19937_64& rng) {
  switch (rng() % 4) {
    case 0: return std::uniform_real_distribution<double>(-1000, 1000)(rng);
    case 1: return static_cast<double>(static_cast<std::int64_t>(rng() % 2000000) - 1000000);
    case 2: return std::ldexp(std::uniform_real_distribution<double>(-1, 1)(rng), static_cast<int>(rng() % 120) - 60);
    default: return std::bit_cast<double>(rng() & 0x7FEFFFFFFFFFFFFFull) * ((rng() & 1) ? 1 : -1);
  }
}

inline std::string random_label(std::mt19937_64& rng) {
  static const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-.:/";
  std::string s;
  for (std::size_t n = 1 + rng() % 8; n > 0; --n) s += alphabet[rng() % alphabet.size()];
  return s;
}

inline canskew::Trace random_trace(std::mt19937_64& rng) {
  canskew::Trace t;
  t.meta.scenario_hash = rng();
  t.meta.seed = rng();
  t.meta.bitrate_bps = std::abs(random_double(rng));
  t.meta.frame_bits = std::abs(random_double(rng));
  t.meta.duration_us = static_cast<canskew::Micros>(rng() % 100000000000ull);
  for (std::size_t n = rng() % 5; n > 0; --n) {
    const canskew::FrameId id{static_cast<std::uint32_t>(rng() % 0x20000000u)};
    t.meta.schedule[id] = {canskew::EcuLabel{random_label(rng)}, std::abs(random_double(rng))};
  }
  for (std::size_t n = rng() % 3; n > 0; --n) {
    std::string w;
    for (std::size_t k = rng() % 40; k > 0; --k) w += static_cast<char>(' ' + rng() % 95);
    t.meta.warnings.push_back(w);
  }
  canskew::Micros at = static_cast<canskew::Micros>(rng() % 5000000);
  for (std::size_t n = rng() % 60; n > 0; --n) {
    const bool ext = rng() & 1;
    std::vector<std::uint8_t> payload(rng() % 9);
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
    t.frames.push_back(frame_at(at, static_cast<std::uint32_t>(rng() % (ext ? 0x20000000u : 0x800u)), ext, payload));
    at += 1 + static_cast<canskew::Micros>(rng() % 200000);
  }
  return t;
}

inline canskew::FingerprintDb random_db(std::mt19937_64& rng) {
  canskew::FingerprintDb db;
  for (std::size_t n = rng() % 12; n > 0; --n) {
    canskew::Fingerprint fp;
    if (rng() & 1)
      fp.key = canskew::FrameId{static_cast<std::uint32_t>(rng() % 0x20000000u)};
    else
      fp.key = canskew::EcuLabel{random_label(rng)};
    fp.skew_us_per_s = random_double(rng);
    fp.ci_us_per_s = std::abs(random_double(rng));
    fp.n_batches = rng() % 100000;
    if (rng() & 1) fp.period_us = std::abs(random_double(rng));
    if (rng() & 1) fp.owner = random_label(rng);
    if (rng() & 1) fp.trace_hash = canskew::hash_text(rng());
    db.entries.push_back(fp);
  }
  return db;
}

}  // namespace testing_support
