#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "canskew/error.hpp"

namespace canskew {

/// Microseconds on the receiver clock, measured from trace start.
using Micros = std::int64_t;

/// 29-bit CAN identifier. Standard (11-bit) ids use the same type; the
/// frame carries the format bit.
class FrameId {
 public:
  static constexpr std::uint32_t kMax = 0x1FFFFFFFu;

  constexpr FrameId() = default;
  explicit FrameId(std::uint32_t value) : value_(value) {
    if (value > kMax) throw Error(ErrorCode::InvalidSpec, "frame id exceeds 29 bits");
  }

  constexpr std::uint32_t value() const noexcept { return value_; }
  friend constexpr auto operator<=>(const FrameId&, const FrameId&) = default;

 private:
  std::uint32_t value_ = 0;
};

class EcuLabel {
 public:
  EcuLabel() = default;
  explicit EcuLabel(std::string name) : name_(std::move(name)) {
    if (name_.empty()) throw Error(ErrorCode::InvalidScenario, "empty ECU label");
    for (unsigned char c : name_)
      if (c <= ' ' || c >= 0x7F || c == '=' || c == '#' || c == ',' || c == '"')
        throw Error(ErrorCode::InvalidScenario, "ECU label '" + name_ + "' has a character outside printable ASCII or one of = # , \"");
  }

  const std::string& str() const noexcept { return name_; }
  bool empty() const noexcept { return name_.empty(); }
  friend auto operator<=>(const EcuLabel&, const EcuLabel&) = default;

 private:
  std::string name_;
};

struct CanFrame {
  FrameId id;
  bool extended = true;
  std::vector<std::uint8_t> payload;  // dlc == payload.size()
  EcuLabel source;                    // sender; empty in receiver-side traces

  std::size_t dlc() const noexcept { return payload.size(); }
  friend bool operator==(const CanFrame&, const CanFrame&) = default;
};

inline void validate(const CanFrame& frame) {
  if (frame.payload.size() > 8) throw Error(ErrorCode::InvalidSpec, "dlc exceeds 8");
  if (!frame.extended && frame.id.value() > 0x7FF)
    throw Error(ErrorCode::InvalidSpec, "standard frame id exceeds 11 bits");
}

struct TimestampedFrame {
  Micros arrival = 0;
  CanFrame frame;
  friend bool operator==(const TimestampedFrame&, const TimestampedFrame&) = default;
};

/// Bit-level arbitration key: the frame that puts the first dominant bit
/// where the other is recessive wins, so lower keys win. For frames of the
/// same format this is plain numeric order of the identifier.
inline std::uint32_t arbitration_key(const CanFrame& frame) noexcept {
  const std::uint32_t id = frame.id.value();
  if (!frame.extended) return id << 20;  // base id, RTR=0, IDE=0
  const std::uint32_t base = id >> 18;
  const std::uint32_t ext = id & 0x3FFFFu;
  return (base << 20) | (1u << 19) | (1u << 18) | ext;  // SRR=1, IDE=1
}

}  // namespace canskew
