#pragma once

// Durable per-node time series.
//
// Layout under the data directory:
//
//   nodes/<node-uuid>/seg-<first ingest offset, 20 digits>.log
//   nodes/<node-uuid>/spec.json        current thresholds (operator edits)
//
// A segment is a sequence of records
//
//   u32 payload_len | payload | u32 crc32(payload)
//
// where the payload is a sealed 70-byte telemetry frame followed by the
// ingest offset, the derived depths, the evaluation and the pipe spec that
// was in force at append time (see store.cpp). Reopening scans every segment
// and truncates a torn tail.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "wlds/core_model.hpp"

namespace wlds::store {

struct StoredRecord {
  TelemetryReading reading;
  DerivedDepths derived;
  AlertEvaluation evaluation;
  std::uint64_t ingest_offset;
  /// Spec and sonic speed in force at append time.
  PipeSpec spec;
  double sonic_speed_mps;

  friend bool operator==(const StoredRecord&, const StoredRecord&) = default;
};

struct QueryRange {
  NodeId node_id;
  std::uint64_t from_ms;  // inclusive
  std::uint64_t to_ms;    // exclusive
};

struct StoreOptions {
  bool fsync = true;
  std::uint64_t segment_bytes = 4u << 20;
  std::uint64_t retention_ms = 30ull * 24 * 3600 * 1000;
};

class AppendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RecoveryReport {
  std::uint64_t records = 0;
  std::uint64_t truncated_bytes = 0;
  std::uint64_t torn_segments = 0;
};

class Store {
 public:
  explicit Store(std::filesystem::path dir, StoreOptions options = {});
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  /// Quantizes the reading to its wire precision, evaluates it against
  /// `spec`, and persists the result before returning.
  StoredRecord append(const TelemetryReading& reading, const PipeSpec& spec,
                      double sonic_speed_mps = kDefaultSonicSpeedMps);

  std::optional<StoredRecord> latest(const NodeId& node) const;
  /// Ordered by (timestamp_ms, ingest_offset). Throws std::invalid_argument
  /// when from_ms >= to_ms.
  std::vector<StoredRecord> range(const QueryRange& q) const;
  /// Every retained record of `node` in ingest order.
  std::vector<StoredRecord> scan(const NodeId& node) const;

  std::vector<NodeId> nodes() const;
  std::uint64_t size() const;

  /// Deletes whole closed segments whose newest record is older than
  /// now_ms - retention. Returns the number of records dropped.
  std::uint64_t enforce_retention(std::uint64_t now_ms);

  void save_spec(const PipeSpec& spec);
  std::vector<PipeSpec> saved_specs() const;

  const RecoveryReport& recovery() const { return recovery_; }
  const std::filesystem::path& dir() const { return dir_; }
  /// Total bytes in the segment currently receiving appends for `node`.
  std::uint64_t active_segment_bytes(const NodeId& node) const;
  std::filesystem::path active_segment_path(const NodeId& node) const;

 private:
  struct Partition;

  Partition& partition_for(const NodeId& node);
  const Partition* find(const NodeId& node) const;
  void load_partition(const std::filesystem::path& node_dir);

  std::filesystem::path dir_;
  StoreOptions options_;
  RecoveryReport recovery_;
  mutable std::shared_mutex map_mu_;
  std::map<NodeId, std::unique_ptr<Partition>> partitions_;
};

/// {reading, derived, evaluation, ingest_offset, spec, sonic_speed_mps}
nlohmann::json record_to_json(const StoredRecord& r);
/// One record_to_json document per line, ingest order. Returns the count.
std::uint64_t dump_jsonl(const Store& store, const NodeId& node, std::ostream& out);

/// Record payload codec, exposed for tests and tooling.
std::vector<std::uint8_t> encode_record(const StoredRecord& r);
std::optional<StoredRecord> decode_record(std::span<const std::uint8_t> payload);

}  // namespace wlds::store
