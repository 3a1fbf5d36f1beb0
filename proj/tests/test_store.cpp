#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "testkit.hpp"
#include "wlds/store.hpp"
#include "wlds/wire.hpp"

using namespace wlds;
using namespace wlds::store;
using testkit::node;
using testkit::TempDir;
namespace fs = std::filesystem;

namespace {

StoreOptions fast(std::uint64_t segment_bytes = 4u << 20) {
  StoreOptions o;
  o.fsync = false;
  o.segment_bytes = segment_bytes;
  return o;
}

std::vector<fs::path> segments_of(const fs::path& dir, const NodeId& id) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir / "nodes" / id.to_string()))
    if (e.path().extension() == ".log") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(Append, EvaluatesBaselineAndClog) {
  TempDir d;
  Store s(d.path(), fast());
  const auto spec = testkit::spec(node(1));
  const auto a = s.append(testkit::reading(node(1), 1, 1000, 15, 80, 90), spec);
  EXPECT_EQ(a.evaluation.state, AlertState::Normal);
  const auto b = s.append(testkit::reading(node(1), 2, 2000, 2, 40, 90), spec);
  EXPECT_EQ(b.evaluation.state, AlertState::Warning);
  EXPECT_TRUE(b.evaluation.causes.contains(Cause::ClogRule));
  EXPECT_EQ(b.ingest_offset, a.ingest_offset + 1);
  EXPECT_EQ(a.ingest_offset, 1u);
}

TEST(Append, StoresWirePrecision) {
  TempDir d;
  Store s(d.path(), fast());
  const auto r = testkit::reading(node(1), 1, 1000, 12.34567, 80, 90.04);
  const auto rec = s.append(r, testkit::spec(node(1)));
  EXPECT_EQ(rec.reading, wire::quantize(r));
  EXPECT_EQ(rec.reading.flow_lpm, 12.346);
  EXPECT_EQ(rec.reading.gas_ppm, 90.0);
}

TEST(Append, OffsetsArePerNode) {
  TempDir d;
  Store s(d.path(), fast());
  EXPECT_EQ(s.append(testkit::reading(node(1), 1, 1, 15, 80, 90), testkit::spec(node(1))).ingest_offset, 1u);
  EXPECT_EQ(s.append(testkit::reading(node(2), 1, 1, 15, 80, 90), testkit::spec(node(2))).ingest_offset, 1u);
  EXPECT_EQ(s.append(testkit::reading(node(1), 2, 2, 15, 80, 90), testkit::spec(node(1))).ingest_offset, 2u);
  EXPECT_EQ(s.size(), 3u);
  EXPECT_EQ(s.nodes(), (std::vector<NodeId>{node(1), node(2)}));
}

TEST(Latest, UnseenAfterAppendsAndAfterRestart) {
  TempDir d;
  const auto spec = testkit::spec(node(1));
  std::optional<StoredRecord> before;
  {
    Store s(d.path(), fast());
    EXPECT_FALSE(s.latest(node(1)));
    s.append(testkit::reading(node(1), 1, 1000, 15, 80, 90), spec);
    const auto b = s.append(testkit::reading(node(1), 2, 2000, 14, 79, 91), spec);
    before = s.latest(node(1));
    EXPECT_EQ(before, b);
  }
  Store reopened(d.path(), fast());
  EXPECT_EQ(reopened.latest(node(1)), before);
  EXPECT_FALSE(reopened.latest(node(2)));
}

TEST(Range, EmptyAllAndBadBounds) {
  TempDir d;
  Store s(d.path(), fast());
  EXPECT_TRUE(s.range({node(1), 0, 100}).empty());
  const auto spec = testkit::spec(node(1));
  std::vector<StoredRecord> all;
  for (std::uint32_t i = 1; i <= 20; ++i)
    all.push_back(s.append(testkit::reading(node(1), i, 1000 * i, 15, 80, 90), spec));
  EXPECT_EQ(s.range({node(1), 0, UINT64_MAX}), all);
  EXPECT_EQ(s.range({node(1), 3000, 6000}), std::vector<StoredRecord>(all.begin() + 2, all.begin() + 5));
  EXPECT_THROW(s.range({node(1), 10, 10}), std::invalid_argument);
  EXPECT_THROW(s.range({node(1), 11, 10}), std::invalid_argument);
}

TEST(Range, MatchesLinearScanOracle) {
  TempDir d;
  Store s(d.path(), fast(64 * 1024));
  std::mt19937_64 rng(99);
  std::vector<StoredRecord> oracle;
  for (int i = 0; i < 1000; ++i) {
    const auto n = node(1 + static_cast<std::uint32_t>(rng() % 4));
    // Timestamps jitter and repeat so ordering ties are exercised.
    const std::uint64_t ts = 1'000'000 + (rng() % 500) * 10;
    oracle.push_back(
        s.append(testkit::reading(n, static_cast<std::uint32_t>(i + 1), ts, 1 + rng() % 30, rng() % 120, rng() % 500),
                 testkit::spec(n)));
  }
  auto naive = [&](const QueryRange& q) {
    std::vector<StoredRecord> out;
    for (const auto& r : oracle)
      if (r.reading.node_id == q.node_id && r.reading.timestamp_ms >= q.from_ms && r.reading.timestamp_ms < q.to_ms)
        out.push_back(r);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      return std::pair(a.reading.timestamp_ms, a.ingest_offset) < std::pair(b.reading.timestamp_ms, b.ingest_offset);
    });
    return out;
  };
  for (int q = 0; q < 100; ++q) {
    const auto n = node(1 + static_cast<std::uint32_t>(rng() % 5));
    const std::uint64_t a = 999'000 + rng() % 6000, b = a + 1 + rng() % 3000;
    ASSERT_EQ(s.range({n, a, b}), naive({n, a, b})) << "query " << q;
  }
  Store reopened(d.path(), fast(64 * 1024));
  for (std::uint32_t n = 1; n <= 4; ++n) {
    ASSERT_EQ(reopened.range({node(n), 0, UINT64_MAX}), naive({node(n), 0, UINT64_MAX}));
    ASSERT_EQ(reopened.latest(node(n)), s.latest(node(n)));
  }
}

TEST(Scan, IngestOrder) {
  TempDir d;
  Store s(d.path(), fast());
  const auto spec = testkit::spec(node(1));
  s.append(testkit::reading(node(1), 1, 5000, 15, 80, 90), spec);
  s.append(testkit::reading(node(1), 2, 1000, 15, 80, 90), spec);
  const auto scanned = s.scan(node(1));
  ASSERT_EQ(scanned.size(), 2u);
  EXPECT_EQ(scanned[0].reading.timestamp_ms, 5000u);
  EXPECT_EQ(s.range({node(1), 0, 10000})[0].reading.timestamp_ms, 1000u);
  EXPECT_EQ(s.latest(node(1))->reading.seq, 2u);  // latest means most recently ingested
}

TEST(Evaluation, ImmutableUnderSpecChanges) {
  TempDir d;
  auto spec = testkit::spec(node(1));
  {
    Store s(d.path(), fast());
    s.append(testkit::reading(node(1), 1, 1000, 8, 45, 90), spec);  // G 55 > 50, flow 8 < 10
    spec.fill_threshold_cm = 60;
    s.save_spec(spec);
    s.append(testkit::reading(node(1), 2, 2000, 8, 45, 90), spec);
  }
  Store s(d.path(), fast());
  const auto recs = s.scan(node(1));
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].evaluation.state, AlertState::Warning);
  EXPECT_EQ(recs[1].evaluation.state, AlertState::Normal);
  for (const auto& r : recs) EXPECT_EQ(r.evaluation, evaluate_warning(r.reading, r.spec, r.sonic_speed_mps));
  EXPECT_EQ(recs[0].spec.fill_threshold_cm, 50);
  EXPECT_EQ(s.saved_specs(), std::vector<PipeSpec>{spec});
}

TEST(Recovery, TornTailIsTruncated) {
  TempDir d;
  const auto spec = testkit::spec(node(1));
  {
    Store s(d.path(), fast());
    for (std::uint32_t i = 1; i <= 10; ++i) s.append(testkit::reading(node(1), i, 1000 * i, 15, 80, 90), spec);
  }
  const auto seg = segments_of(d.path(), node(1)).back();
  const auto full = fs::file_size(seg);
  fs::resize_file(seg, full - 20);  // cut the last record mid-payload
  {
    Store s(d.path(), fast());
    EXPECT_EQ(s.scan(node(1)).size(), 9u);
    EXPECT_GT(s.recovery().truncated_bytes, 0u);
    EXPECT_EQ(s.recovery().records, 9u);
    EXPECT_EQ(s.latest(node(1))->reading.seq, 9u);
    const auto again = s.append(testkit::reading(node(1), 10, 10000, 15, 80, 90), spec);
    EXPECT_EQ(again.ingest_offset, 10u);
  }
  Store s(d.path(), fast());
  EXPECT_EQ(s.scan(node(1)).size(), 10u);
  EXPECT_EQ(s.recovery().truncated_bytes, 0u);
  EXPECT_EQ(fs::file_size(seg), full);
}

TEST(Recovery, CorruptTailRecordIsDropped) {
  TempDir d;
  const auto spec = testkit::spec(node(1));
  {
    Store s(d.path(), fast());
    for (std::uint32_t i = 1; i <= 5; ++i) s.append(testkit::reading(node(1), i, 1000 * i, 15, 80, 90), spec);
  }
  const auto seg = segments_of(d.path(), node(1)).back();
  {
    std::fstream f(seg, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(fs::file_size(seg)) - 30);
    f.put('\x7f');
  }
  Store s(d.path(), fast());
  EXPECT_EQ(s.scan(node(1)).size(), 4u);
  EXPECT_GT(s.recovery().truncated_bytes, 0u);
}

TEST(Recovery, GarbageAppendedAfterLastRecord) {
  TempDir d;
  const auto spec = testkit::spec(node(1));
  {
    Store s(d.path(), fast());
    for (std::uint32_t i = 1; i <= 3; ++i) s.append(testkit::reading(node(1), i, 1000 * i, 15, 80, 90), spec);
  }
  const auto seg = segments_of(d.path(), node(1)).back();
  std::ofstream(seg, std::ios::app | std::ios::binary) << std::string("\x00\x00\x01", 3);
  Store s(d.path(), fast());
  EXPECT_EQ(s.scan(node(1)).size(), 3u);
  EXPECT_EQ(s.recovery().truncated_bytes, 3u);
}

TEST(Segments, RollAndReopenWithoutNewSegment) {
  TempDir d;
  const auto spec = testkit::spec(node(1));
  {
    Store s(d.path(), fast(2000));
    for (std::uint32_t i = 1; i <= 40; ++i) s.append(testkit::reading(node(1), i, 1000 * i, 15, 80, 90), spec);
  }
  const auto before = segments_of(d.path(), node(1));
  EXPECT_GT(before.size(), 2u);
  {
    Store s(d.path(), fast(2000));
    EXPECT_EQ(s.scan(node(1)).size(), 40u);
    if (s.active_segment_bytes(node(1)) < 2000) {
      s.append(testkit::reading(node(1), 41, 41000, 15, 80, 90), spec);
      EXPECT_EQ(segments_of(d.path(), node(1)), before);
    }
  }
  // Segment names carry the first offset they hold.
  EXPECT_EQ(before.front().filename(), "seg-00000000000000000001.log");
}

TEST(Retention, DropsOldClosedSegmentsOnly) {
  TempDir d;
  const auto spec = testkit::spec(node(1));
  StoreOptions o = fast(2000);
  o.retention_ms = 10'000;
  Store s(d.path(), o);
  for (std::uint32_t i = 1; i <= 60; ++i) s.append(testkit::reading(node(1), i, 1000 * i, 15, 80, 90), spec);
  const auto segs_before = segments_of(d.path(), node(1)).size();
  const auto dropped = s.enforce_retention(60'000);
  const auto remaining = s.scan(node(1));
  EXPECT_EQ(dropped + remaining.size(), 60u);
  EXPECT_GT(dropped, 0u);
  EXPECT_LT(segments_of(d.path(), node(1)).size(), segs_before);
  // Everything newer than the horizon survives; offsets stay contiguous.
  for (std::size_t i = 1; i < remaining.size(); ++i)
    EXPECT_EQ(remaining[i].ingest_offset, remaining[i - 1].ingest_offset + 1);
  EXPECT_LE(remaining.front().reading.timestamp_ms, 50'000u);
  EXPECT_EQ(s.range({node(1), 0, 100'000}).size(), remaining.size());
  // Far future: all closed segments go, the active one stays.
  s.enforce_retention(10'000'000);
  EXPECT_EQ(segments_of(d.path(), node(1)).size(), 1u);
  EXPECT_EQ(s.latest(node(1))->reading.seq, 60u);
  const auto next = s.append(testkit::reading(node(1), 61, 61000, 15, 80, 90), spec);
  EXPECT_EQ(next.ingest_offset, 61u);
}

TEST(RecordCodec, RoundTripAndRejects) {
  const auto r = testkit::record(wire::quantize(testkit::reading(node(7), 3, 77, 3.5, 60, 120)), testkit::spec(node(7)), 42);
  const auto bytes = encode_record(r);
  EXPECT_EQ(decode_record(bytes), r);
  EXPECT_FALSE(decode_record(std::span(bytes).first(bytes.size() - 1)));
  auto bad = bytes;
  bad[0] ^= 0xff;
  EXPECT_FALSE(decode_record(bad));
}

TEST(Dump, JsonLinesInIngestOrder) {
  TempDir d;
  Store s(d.path(), fast());
  const auto spec = testkit::spec(node(1));
  for (std::uint32_t i = 1; i <= 5; ++i) s.append(testkit::reading(node(1), i, 1000 * i, 15, 80, 90), spec);
  std::stringstream out;
  EXPECT_EQ(dump_jsonl(s, node(1), out), 5u);
  std::string line;
  std::uint64_t expect = 1;
  while (std::getline(out, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("ingest_offset"), expect);
    EXPECT_EQ(j.at("reading").at("seq"), expect);
    EXPECT_EQ(j.at("evaluation").at("state"), "Normal");
    EXPECT_TRUE(j.contains("derived"));
    EXPECT_TRUE(j.contains("spec"));
    ++expect;
  }
  EXPECT_EQ(expect, 6u);
}

TEST(Concurrency, WritersPerNodeAndReaders) {
  TempDir d;
  Store s(d.path(), fast(16 * 1024));
  std::atomic<bool> done{false};
  std::vector<std::thread> writers;
  for (std::uint32_t n = 1; n <= 4; ++n)
    writers.emplace_back([&, n] {
      for (std::uint32_t i = 1; i <= 500; ++i) s.append(testkit::reading(node(n), i, i, 15, 80, 90), testkit::spec(node(n)));
    });
  std::thread reader([&] {
    while (!done) {
      for (std::uint32_t n = 1; n <= 4; ++n) {
        const auto all = s.range({node(n), 0, UINT64_MAX});
        for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i].ingest_offset, i + 1);
      }
    }
  });
  for (auto& w : writers) w.join();
  done = true;
  reader.join();
  EXPECT_EQ(s.size(), 2000u);
}
