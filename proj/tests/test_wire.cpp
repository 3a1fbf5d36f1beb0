#include <gtest/gtest.h>
#include <zlib.h>

#include <random>
#include <string>

#include <json.hpp>

#include "testkit.hpp"
#include "wlds/json_codec.hpp"
#include "wlds/wire.hpp"

using namespace wlds;
using namespace wlds::wire;
using testkit::node;

namespace {

std::span<const std::uint8_t> bytes_of(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

std::uint32_t zlib_crc(std::span<const std::uint8_t> b) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), b.data(), static_cast<uInt>(b.size())));
}

Key key_of(std::uint8_t fill) {
  Key k;
  k.fill(fill);
  return k;
}

TelemetryReading random_reading(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> u32;
  std::uniform_int_distribution<std::uint64_t> u64(0, 4'102'444'800'000ull);
  std::uniform_real_distribution<double> flow(0, 4'000'000), echo(0, 4'000'000'000.0), gas(0, 6553.5),
      lat(-90, 90), lon(-180, 180);
  return TelemetryReading{node(u32(rng) | 1), u32(rng), u64(rng), flow(rng), echo(rng), gas(rng),
                          GeoPoint{lat(rng), lon(rng)}};
}

TelemetryReading accepted(const DecodeResult& r) {
  if (const auto* rej = std::get_if<Rejection>(&r)) ADD_FAILURE() << "rejected: " << rej->detail;
  return std::get<Decoded>(r).reading;
}

}  // namespace

TEST(Crc32, CheckValue) {
  EXPECT_EQ(wire::crc32(bytes_of("123456789")), 0xCBF43926u);
  EXPECT_EQ(zlib_crc(bytes_of("123456789")), 0xCBF43926u);
}

TEST(Crc32, Empty) { EXPECT_EQ(wire::crc32({}), 0u); }

TEST(Crc32, AgreesWithZlib) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    std::vector<std::uint8_t> buf(rng() % 300);
    for (auto& b : buf) b = static_cast<std::uint8_t>(rng());
    ASSERT_EQ(wire::crc32(buf), zlib_crc(buf));
  }
}

TEST(Crc32, IncrementalMatchesOneShot) {
  const std::string s = "The quick brown fox jumps over the lazy dog";
  const auto all = bytes_of(s);
  std::uint32_t c = crc32_update(0, all.first(10));
  c = crc32_update(c, all.subspan(10));
  EXPECT_EQ(c, wire::crc32(all));
  EXPECT_EQ(c, 0x414FA339u);
}

TEST(Crc32, DetectsEverySingleBitFlip) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::uint8_t> buf(50);
    for (auto& b : buf) b = static_cast<std::uint8_t>(rng());
    const auto base = wire::crc32(buf);
    for (std::size_t bit = 0; bit < buf.size() * 8; ++bit) {
      buf[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
      ASSERT_NE(wire::crc32(buf), base);
      buf[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    }
  }
}

TEST(HmacSha256, Rfc4231Case1) {
  const std::vector<std::uint8_t> key(20, 0x0b);
  EXPECT_EQ(to_hex(hmac_sha256(key, bytes_of("Hi There"))),
            "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7");
}

TEST(HmacSha256, Rfc4231Case2) {
  EXPECT_EQ(to_hex(hmac_sha256(bytes_of("Jefe"), bytes_of("what do ya want for nothing?"))),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843");
}

TEST(HmacSha256, Rfc4231Case6LongKey) {
  const std::vector<std::uint8_t> key(131, 0xaa);
  EXPECT_EQ(to_hex(hmac_sha256(key, bytes_of("Test Using Larger Than Block-Size Key - Hash Key First"))),
            "60e431591ee0b67f0d8a26aacbf5b77f8e0bc6213728c5140546040f0ee37f54");
}

TEST(AuthTag, TruncatesAndIsDeterministic) {
  const auto k = key_of(0x42);
  const auto full = hmac_sha256(k, bytes_of("payload"));
  const auto tag = auth_tag(bytes_of("payload"), k);
  EXPECT_TRUE(std::equal(tag.begin(), tag.end(), full.begin()));
  EXPECT_EQ(auth_tag(bytes_of("payload"), k), tag);
  EXPECT_THROW(auth_tag(bytes_of("payload"), std::vector<std::uint8_t>(20, 1)), std::invalid_argument);
}

TEST(AuthTag, DistinctKeysGiveDistinctTags) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 2000; ++i) {
    Key a, b;
    for (auto& x : a) x = static_cast<std::uint8_t>(rng());
    b = a;
    b[rng() % kKeySize] ^= static_cast<std::uint8_t>(1 + rng() % 255);
    ASSERT_NE(auth_tag(bytes_of("same data"), a), auth_tag(bytes_of("same data"), b));
  }
}

TEST(EncodeFrame, FixedLength) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(encode_frame(random_reading(rng), key_of(1)).size(), 70u);
}

TEST(EncodeFrame, GasOverflow) {
  auto r = testkit::reading(node(1), 1, 1, 10, 10, 7000);
  try {
    encode_frame(r, key_of(1));
    FAIL() << "expected RangeError";
  } catch (const RangeError& e) {
    EXPECT_EQ(std::string(e.what()), "gas_ppm_x10 overflows 16 bits");
    EXPECT_EQ(e.field(), "gas_ppm");
  }
  r.gas_ppm = 6553.5;
  EXPECT_NO_THROW(encode_frame(r, key_of(1)));
  r.gas_ppm = 6553.55;  // rounds to 65536
  EXPECT_THROW(encode_frame(r, key_of(1)), RangeError);
}

TEST(EncodeFrame, RejectsNegativeAndNonFinite) {
  auto r = testkit::reading(node(1), 1, 1, 10, 10, 10);
  r.flow_lpm = -0.1;
  EXPECT_THROW(encode_frame(r, key_of(1)), RangeError);
  r.flow_lpm = std::nan("");
  EXPECT_THROW(encode_frame(r, key_of(1)), RangeError);
  r.flow_lpm = 1;
  EXPECT_THROW(encode_frame(r, key_of(1), 0x02), RangeError);
}

TEST(EncodeFrame, RoundingIsHalfUp) {
  auto r = testkit::reading(node(1), 1, 1, 0.0005, 10, 0.05);
  r.echo_time_us = 10.5;
  const auto q = quantize(r);
  EXPECT_EQ(q.flow_lpm, 0.001);
  EXPECT_EQ(q.gas_ppm, 0.1);
  EXPECT_EQ(q.echo_time_us, 11.0);
  r.position = {-0.00000005, 0.00000005};
  const auto p = quantize(r);
  EXPECT_EQ(p.position.lat_deg, -1e-7);  // half away from zero on the signed fields
  EXPECT_EQ(p.position.lon_deg, 1e-7);
}

TEST(DecodeFrame, RoundTripUpToQuantization) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 20000; ++i) {
    const auto r = random_reading(rng);
    const auto key = key_of(static_cast<std::uint8_t>(i));
    const auto& d = accepted(decode_frame(encode_frame(r, key), key));
    ASSERT_EQ(d.node_id, r.node_id);
    ASSERT_EQ(d.seq, r.seq);
    ASSERT_EQ(d.timestamp_ms, r.timestamp_ms);
    ASSERT_LE(std::abs(d.flow_lpm - r.flow_lpm), 0.0005 + 1e-9);
    ASSERT_LE(std::abs(d.echo_time_us - r.echo_time_us), 0.5 + 1e-6);
    ASSERT_LE(std::abs(d.gas_ppm - r.gas_ppm), 0.05 + 1e-9);
    ASSERT_LE(std::abs(d.position.lat_deg - r.position.lat_deg), 0.5e-7 + 1e-12);
    ASSERT_LE(std::abs(d.position.lon_deg - r.position.lon_deg), 0.5e-7 + 1e-12);
    // Quantization is idempotent: a decoded reading re-encodes to the same frame.
    ASSERT_EQ(encode_frame(d, key), encode_frame(r, key));
  }
}

TEST(DecodeFrame, Rejections) {
  const auto key = key_of(9);
  const auto f = encode_frame(testkit::reading(node(1), 1, 1, 10, 10, 10), key);

  EXPECT_EQ(std::get<Rejection>(decode_frame(std::span(f).first(69), key)).error, DecodeError::BadLength);
  std::vector<std::uint8_t> longer(f.begin(), f.end());
  longer.push_back(0);
  EXPECT_EQ(std::get<Rejection>(decode_frame(longer, key)).error, DecodeError::BadLength);

  auto flipped = f;
  flipped[30] ^= 0x10;
  EXPECT_EQ(std::get<Rejection>(decode_frame(flipped, key)).error, DecodeError::BadCrc);

  EXPECT_EQ(std::get<Rejection>(decode_frame(f, key_of(10))).error, DecodeError::BadAuth);

  auto magic = f;
  magic[0] = 'X';
  EXPECT_EQ(std::get<Rejection>(decode_frame(magic, key)).error, DecodeError::BadMagic);
  auto version = f;
  version[2] = 2;
  EXPECT_EQ(std::get<Rejection>(decode_frame(version, key)).error, DecodeError::BadVersion);
}

TEST(DecodeFrame, ReMacWithWrongKeyIsBadAuth) {
  auto f = encode_frame(testkit::reading(node(1), 1, 1, 10, 10, 10), key_of(1));
  const auto tag = auth_tag(std::span(f).first(kTagOffset), key_of(2));
  std::copy(tag.begin(), tag.end(), f.begin() + kTagOffset);
  EXPECT_EQ(std::get<Rejection>(decode_frame(f, key_of(1))).error, DecodeError::BadAuth);
}

TEST(DecodeFrame, SemanticFieldChecksAfterAuth) {
  // Well-formed and authentic but out-of-range latitude: hand-assemble, then seal.
  const auto key = key_of(3);
  auto f = encode_frame(testkit::reading(node(1), 1, 1, 10, 10, 10), key);
  const std::int32_t lat = 900000001;
  f[42] = static_cast<std::uint8_t>(lat >> 24);
  f[43] = static_cast<std::uint8_t>(lat >> 16);
  f[44] = static_cast<std::uint8_t>(lat >> 8);
  f[45] = static_cast<std::uint8_t>(lat);
  const auto crc = wire::crc32(std::span(f).first(kCrcOffset));
  for (int i = 0; i < 4; ++i) f[kCrcOffset + i] = static_cast<std::uint8_t>(crc >> (24 - 8 * i));
  const auto tag = auth_tag(std::span(f).first(kTagOffset), key);
  std::copy(tag.begin(), tag.end(), f.begin() + kTagOffset);
  EXPECT_EQ(std::get<Rejection>(decode_frame(f, key)).error, DecodeError::BadField);
}

TEST(DecodeFrame, EverySingleByteMutationRejected) {
  std::mt19937_64 rng(8);
  const auto key = key_of(0x5a);
  for (int trial = 0; trial < 300; ++trial) {
    const auto f = encode_frame(random_reading(rng), key);
    for (std::size_t i = 0; i < f.size(); ++i) {
      auto m = f;
      m[i] ^= static_cast<std::uint8_t>(1 + rng() % 255);
      ASSERT_TRUE(std::holds_alternative<Rejection>(decode_frame(m, key))) << "byte " << i;
    }
  }
}

class Golden : public ::testing::TestWithParam<int> {};

TEST_P(Golden, DecodesToCommittedReading) {
  const auto n = std::to_string(GetParam());
  const auto frame = from_hex(testkit::fixture("golden_frame_" + n + ".hex"));
  const auto key = key_from_hex(testkit::fixture("golden_frame_" + n + ".key"));
  const auto expected = nlohmann::json::parse(testkit::fixture("golden_frame_" + n + ".json"));

  const auto& d = accepted(decode_frame(frame, key));
  EXPECT_EQ(reading_to_json(d), expected);
  const auto flags = std::get<Decoded>(decode_frame(frame, key)).flags;
  const auto again = encode_frame(d, key, flags);
  EXPECT_TRUE(std::equal(again.begin(), again.end(), frame.begin(), frame.end()));
}

INSTANTIATE_TEST_SUITE_P(Fixtures, Golden, ::testing::Values(1, 2));

TEST(Hex, RoundTripAndErrors) {
  const std::vector<std::uint8_t> b{0x00, 0xab, 0xff};
  EXPECT_EQ(to_hex(b), "00abff");
  EXPECT_EQ(from_hex("00ABff"), b);
  EXPECT_THROW(from_hex("abc"), std::invalid_argument);
  EXPECT_THROW(from_hex("zz"), std::invalid_argument);
  EXPECT_THROW(key_from_hex("00"), std::invalid_argument);
}
