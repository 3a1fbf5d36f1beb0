#pragma once

// 70-byte authenticated telemetry frame. Layout (big-endian):
//
//   off len field
//     0   2 magic 0x57 0x4C ("WL")
//     2   1 version 0x01
//     3   1 flags (bit 0 = test frame, others 0)
//     4  16 node_id
//    20   4 seq
//    24   8 timestamp_ms
//    32   4 flow_mlpm      (L/min * 1000, half-up)
//    36   4 echo_time_us   (half-up)
//    40   2 gas_ppm_x10    (ppm * 10, half-up)
//    42   4 lat_e7         (signed, degrees * 1e7, half away from zero)
//    46   4 lon_e7
//    50   4 crc32          over bytes [0, 50)
//    54  16 auth_tag       HMAC-SHA256 over bytes [0, 54), truncated

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "wlds/core_model.hpp"

namespace wlds::wire {

inline constexpr std::size_t kFrameSize = 70;
inline constexpr std::size_t kCrcOffset = 50;
inline constexpr std::size_t kTagOffset = 54;
inline constexpr std::size_t kTagSize = 16;
inline constexpr std::size_t kKeySize = 32;
inline constexpr std::uint8_t kMagic0 = 0x57;
inline constexpr std::uint8_t kMagic1 = 0x4C;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::uint8_t kFlagTest = 0x01;

using Frame = std::array<std::uint8_t, kFrameSize>;
using Key = std::array<std::uint8_t, kKeySize>;
using Tag = std::array<std::uint8_t, kTagSize>;

/// Thrown by encode_frame when a field does not fit its wire width.
class RangeError : public std::out_of_range {
 public:
  RangeError(std::string field, const std::string& what)
      : std::out_of_range(what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class DecodeError { BadLength, BadMagic, BadVersion, BadCrc, BadAuth, BadField };

std::string_view to_string(DecodeError e);

struct Rejection {
  DecodeError error;
  std::string detail;
};

struct Decoded {
  TelemetryReading reading;
  std::uint8_t flags = 0;
};

using DecodeResult = std::variant<Decoded, Rejection>;

/// CRC-32/ISO-HDLC (reflected 0x04C11DB7, init and xorout 0xFFFFFFFF).
std::uint32_t crc32(std::span<const std::uint8_t> bytes);
/// Incremental form: start with crc = 0, feed chunks.
std::uint32_t crc32_update(std::uint32_t crc, std::span<const std::uint8_t> bytes);

std::array<std::uint8_t, 32> hmac_sha256(std::span<const std::uint8_t> key,
                                         std::span<const std::uint8_t> data);

/// First 16 bytes of HMAC-SHA256. Throws std::invalid_argument unless the key
/// is exactly 32 bytes.
Tag auth_tag(std::span<const std::uint8_t> bytes, std::span<const std::uint8_t> key);

Frame encode_frame(const TelemetryReading& reading, const Key& key, std::uint8_t flags = 0);

/// Checks run in order length, magic, version, crc, tag, fields; the first
/// failure is reported.
DecodeResult decode_frame(std::span<const std::uint8_t> bytes, const Key& key);

/// The reading as it would come back out of decode_frame.
TelemetryReading quantize(const TelemetryReading& reading);

std::string to_hex(std::span<const std::uint8_t> bytes);
/// Whitespace is ignored. Throws std::invalid_argument on odd length or bad digits.
std::vector<std::uint8_t> from_hex(std::string_view hex);
Key key_from_hex(std::string_view hex);

}  // namespace wlds::wire
