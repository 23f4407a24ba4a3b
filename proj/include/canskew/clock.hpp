#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "canskew/error.hpp"

namespace canskew {

/// Local oscillator of one ECU. The clock offset of the i-th message of a
/// schedule with period T is
///   O_i = skew_ppm * (i*T) * 1e-6 + eps_i + phase_us,  eps_i ~ N(0, offset_jitter_us)
struct ClockModel {
  double skew_ppm = 0.0;
  double offset_jitter_us = 0.0;
  double phase_us = 0.0;

  friend bool operator==(const ClockModel&, const ClockModel&) = default;
};

inline void validate(const ClockModel& clock) {
  if (!std::isfinite(clock.skew_ppm) || std::abs(clock.skew_ppm) > 10000.0)
    throw Error(ErrorCode::InvalidSpec, "skew_ppm outside [-10000, 10000]");
  if (!(clock.offset_jitter_us >= 0.0))
    throw Error(ErrorCode::InvalidSpec, "offset_jitter_us must be >= 0");
  if (!std::isfinite(clock.phase_us)) throw Error(ErrorCode::InvalidSpec, "phase_us not finite");
}

/// Deterministic offset of message i before noise.
inline double drift_offset_us(const ClockModel& clock, std::uint64_t i, double period_us) {
  return clock.skew_ppm * (static_cast<double>(i) * period_us) * 1e-6 + clock.phase_us;
}

/// iT + O_i for an explicit noise sample eps_i.
inline double intended_send_time(const ClockModel& clock, std::uint64_t i, double period_us,
                                 double noise_us) {
  return static_cast<double>(i) * period_us + drift_offset_us(clock, i, period_us) + noise_us;
}

/// Same, drawing eps_i from the ECU's noise stream.
template <class Rng>
double intended_send_time(const ClockModel& clock, std::uint64_t i, double period_us, Rng& rng) {
  double noise = 0.0;
  if (clock.offset_jitter_us > 0.0) {
    std::normal_distribution<double> dist(0.0, clock.offset_jitter_us);
    noise = dist(rng);
  }
  return intended_send_time(clock, i, period_us, noise);
}

// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Seed of one named noise stream of one ECU. Streams depend only on
/// (scenario seed, label, stream), never on the other nodes present.
inline std::uint64_t derive_seed(std::uint64_t scenario_seed, std::string_view label,
                                 std::uint64_t stream) noexcept {
  return mix64(mix64(scenario_seed ^ fnv1a(label)) + stream);
}

}  // namespace canskew
