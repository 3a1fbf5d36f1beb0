#include "wlds/wire.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <cmath>
#include <cstring>

namespace wlds::wire {

namespace {

constexpr std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1u) ? (c >> 1) ^ 0xEDB88320u : c >> 1;
    t[i] = c;
  }
  return t;
}

constexpr auto kCrcTable = make_crc_table();

void put_u16(std::uint8_t* p, std::uint16_t v) {
  p[0] = static_cast<std::uint8_t>(v >> 8);
  p[1] = static_cast<std::uint8_t>(v);
}
void put_u32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (24 - 8 * i));
}
void put_u64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (56 - 8 * i));
}
std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] << 8 | p[1]); }
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = v << 8 | p[i];
  return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = v << 8 | p[i];
  return v;
}

// Non-negative fixed point, rounded half-up.
std::uint64_t fixed_unsigned(double value, double scale, std::uint64_t max, const char* field,
                             const char* wire_name, int bits) {
  if (!std::isfinite(value) || value < 0.0)
    throw RangeError(field, std::string(field) + " must be finite and non-negative");
  const double scaled = std::floor(value * scale + 0.5);
  if (scaled > static_cast<double>(max))
    throw RangeError(field, std::string(wire_name) + " overflows " + std::to_string(bits) + " bits");
  return static_cast<std::uint64_t>(scaled);
}

std::int32_t fixed_degrees(double deg, double limit, const char* field) {
  if (!std::isfinite(deg) || deg < -limit || deg > limit)
    throw RangeError(field, std::string(field) + " out of range");
  return static_cast<std::int32_t>(std::llround(deg * 1e7));
}

bool constant_time_equal(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  std::uint8_t diff = 0;
  for (std::size_t i = 0; i < n; ++i) diff |= a[i] ^ b[i];
  return diff == 0;
}

}  // namespace

std::string_view to_string(DecodeError e) {
  switch (e) {
    case DecodeError::BadLength: return "BadLength";
    case DecodeError::BadMagic: return "BadMagic";
    case DecodeError::BadVersion: return "BadVersion";
    case DecodeError::BadCrc: return "BadCrc";
    case DecodeError::BadAuth: return "BadAuth";
    case DecodeError::BadField: return "BadField";
  }
  return "Unknown";
}

std::uint32_t crc32_update(std::uint32_t crc, std::span<const std::uint8_t> bytes) {
  crc = ~crc;
  for (auto b : bytes) crc = kCrcTable[(crc ^ b) & 0xffu] ^ (crc >> 8);
  return ~crc;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) { return crc32_update(0, bytes); }

std::array<std::uint8_t, 32> hmac_sha256(std::span<const std::uint8_t> key,
                                         std::span<const std::uint8_t> data) {
  std::array<std::uint8_t, 32> out{};
  unsigned int len = 0;
  if (!HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(),
            out.data(), &len) ||
      len != out.size())
    throw std::runtime_error("HMAC-SHA256 failed");
  return out;
}

Tag auth_tag(std::span<const std::uint8_t> bytes, std::span<const std::uint8_t> key) {
  if (key.size() != kKeySize)
    throw std::invalid_argument("auth key must be 32 bytes, got " + std::to_string(key.size()));
  const auto full = hmac_sha256(key, bytes);
  Tag tag;
  std::memcpy(tag.data(), full.data(), tag.size());
  return tag;
}

Frame encode_frame(const TelemetryReading& r, const Key& key, std::uint8_t flags) {
  if (flags & ~kFlagTest) throw RangeError("flags", "reserved flag bits must be zero");
  const auto flow = fixed_unsigned(r.flow_lpm, 1000.0, 0xFFFFFFFFull, "flow_lpm", "flow_mlpm", 32);
  const auto echo = fixed_unsigned(r.echo_time_us, 1.0, 0xFFFFFFFFull, "echo_time_us", "echo_time_us", 32);
  const auto gas = fixed_unsigned(r.gas_ppm, 10.0, 0xFFFFull, "gas_ppm", "gas_ppm_x10", 16);
  const auto lat = fixed_degrees(r.position.lat_deg, 90.0, "lat_deg");
  const auto lon = fixed_degrees(r.position.lon_deg, 180.0, "lon_deg");

  Frame f{};
  f[0] = kMagic0;
  f[1] = kMagic1;
  f[2] = kVersion;
  f[3] = flags;
  std::memcpy(&f[4], r.node_id.bytes().data(), 16);
  put_u32(&f[20], r.seq);
  put_u64(&f[24], r.timestamp_ms);
  put_u32(&f[32], static_cast<std::uint32_t>(flow));
  put_u32(&f[36], static_cast<std::uint32_t>(echo));
  put_u16(&f[40], static_cast<std::uint16_t>(gas));
  put_u32(&f[42], static_cast<std::uint32_t>(lat));
  put_u32(&f[46], static_cast<std::uint32_t>(lon));
  put_u32(&f[kCrcOffset], crc32(std::span(f.data(), kCrcOffset)));
  const auto tag = auth_tag(std::span(f.data(), kTagOffset), key);
  std::memcpy(&f[kTagOffset], tag.data(), tag.size());
  return f;
}

DecodeResult decode_frame(std::span<const std::uint8_t> b, const Key& key) {
  if (b.size() != kFrameSize)
    return Rejection{DecodeError::BadLength, "expected 70 bytes, got " + std::to_string(b.size())};
  if (b[0] != kMagic0 || b[1] != kMagic1) return Rejection{DecodeError::BadMagic, "bad magic"};
  if (b[2] != kVersion)
    return Rejection{DecodeError::BadVersion, "unsupported version " + std::to_string(b[2])};
  if (get_u32(&b[kCrcOffset]) != crc32(b.first(kCrcOffset)))
    return Rejection{DecodeError::BadCrc, "crc32 mismatch"};
  const auto tag = auth_tag(b.first(kTagOffset), key);
  if (!constant_time_equal(tag.data(), &b[kTagOffset], kTagSize))
    return Rejection{DecodeError::BadAuth, "auth tag mismatch"};

  if (b[3] & ~kFlagTest) return Rejection{DecodeError::BadField, "reserved flag bits set"};
  NodeId::Bytes id{};
  std::memcpy(id.data(), &b[4], 16);
  bool nil = true;
  for (auto x : id) nil = nil && x == 0;
  if (nil) return Rejection{DecodeError::BadField, "nil node_id"};
  const auto lat_e7 = static_cast<std::int32_t>(get_u32(&b[42]));
  const auto lon_e7 = static_cast<std::int32_t>(get_u32(&b[46]));
  if (lat_e7 < -900000000 || lat_e7 > 900000000)
    return Rejection{DecodeError::BadField, "lat_e7 out of range"};
  if (lon_e7 < -1800000000 || lon_e7 > 1800000000)
    return Rejection{DecodeError::BadField, "lon_e7 out of range"};

  Decoded d{TelemetryReading{
                .node_id = NodeId(id),
                .seq = get_u32(&b[20]),
                .timestamp_ms = get_u64(&b[24]),
                .flow_lpm = get_u32(&b[32]) / 1000.0,
                .echo_time_us = static_cast<double>(get_u32(&b[36])),
                .gas_ppm = get_u16(&b[40]) / 10.0,
                .position = GeoPoint{lat_e7 / 1e7, lon_e7 / 1e7},
            },
            b[3]};
  return d;
}

TelemetryReading quantize(const TelemetryReading& r) {
  static const Key kScratch{1};
  const auto f = encode_frame(r, kScratch);
  return std::get<Decoded>(decode_frame(f, kScratch)).reading;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 0x0f]);
  }
  return s;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
  std::vector<std::uint8_t> out;
  int hi = -1;
  for (char c : hex) {
    if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else throw std::invalid_argument(std::string("invalid hex digit '") + c + "'");
    if (hi < 0) {
      hi = v;
    } else {
      out.push_back(static_cast<std::uint8_t>(hi << 4 | v));
      hi = -1;
    }
  }
  if (hi >= 0) throw std::invalid_argument("odd number of hex digits");
  return out;
}

Key key_from_hex(std::string_view hex) {
  const auto bytes = from_hex(hex);
  if (bytes.size() != kKeySize)
    throw std::invalid_argument("key must be 32 bytes (64 hex digits), got " +
                                std::to_string(bytes.size()));
  Key k;
  std::memcpy(k.data(), bytes.data(), k.size());
  return k;
}

}  // namespace wlds::wire
