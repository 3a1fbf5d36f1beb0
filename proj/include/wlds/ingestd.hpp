#pragma once

// Network ingestion: node sessions over TCP carrying length-prefixed frames.
//
// Record:  u16 big-endian length | frame bytes
// Ack:     one byte per record (0x00 accept, 0x01 duplicate, 0x02 stale,
//          0xFF invalid). An accept ack is only sent once the reading is
//          durable in the store.

#include <atomic>
#include <cstdint>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "wlds/alerting.hpp"
#include "wlds/core_model.hpp"
#include "wlds/store.hpp"
#include "wlds/wire.hpp"

namespace wlds::ingest {

enum class Admission { Accept, Duplicate, Stale, Invalid };

struct AdmissionResult {
  Admission kind;
  std::string reason;  // Invalid only
};

std::uint8_t ack_code(const AdmissionResult& result);
std::string_view to_string(Admission a);

struct SessionCounters {
  std::uint64_t accepted = 0;
  std::uint64_t duplicate = 0;
  std::uint64_t stale = 0;
  std::uint64_t invalid = 0;
};

struct SessionState {
  std::optional<NodeId> node_id;  // learned from the first valid frame
  std::optional<std::uint32_t> last_seq;
  std::uint64_t last_timestamp_ms = 0;
  SessionCounters counters;
};

inline constexpr std::uint64_t kDefaultStalenessWindowMs = 300'000;

/// Identity change, then Duplicate (seq not above the last accepted), then
/// Stale (older than now - window). Accept updates the session. Counters are
/// left to count().
AdmissionResult admit(const TelemetryReading& reading, SessionState& session, std::uint64_t now_ms,
                      std::uint64_t staleness_window_ms = kDefaultStalenessWindowMs);
void count(SessionState& session, const AdmissionResult& result);

/// Current pipe specs, keyed by node. Edits are validated and serialized.
class SpecRegistry {
 public:
  SpecRegistry() = default;
  explicit SpecRegistry(std::vector<PipeSpec> specs);

  std::optional<PipeSpec> get(const NodeId& node) const;
  std::vector<PipeSpec> all() const;
  /// Inserts or replaces. Returns violations instead of applying a bad spec.
  std::vector<std::string> put(const PipeSpec& spec);

 private:
  mutable std::mutex mu_;
  std::map<NodeId, PipeSpec> specs_;
};

struct PipelineOptions {
  wire::Key fleet_key{};
  std::unordered_map<NodeId, wire::Key> node_keys;
  std::uint64_t staleness_window_ms = kDefaultStalenessWindowMs;
  double sonic_speed_mps = kDefaultSonicSpeedMps;
  std::function<std::uint64_t()> clock;  // ms since epoch; wall clock when empty
};

/// Hook run after a reading is stored and evaluated, still under the node's
/// ordering lock.
using CommitListener =
    std::function<void(const store::StoredRecord&, const std::optional<alerting::AlertTransition>&)>;

class SessionHandle;

/// Admission, storage and alerting for accepted readings. Work for a single
/// node is serialized; different nodes proceed in parallel.
class Pipeline {
 public:
  Pipeline(store::Store& store, SpecRegistry& specs, alerting::AlertEngine& alerts, PipelineOptions options,
           alerting::Dispatcher* dispatcher = nullptr);

  void set_commit_listener(CommitListener listener) { listener_ = std::move(listener); }

  const wire::Key& key_for(std::span<const std::uint8_t> frame) const;
  std::uint64_t now_ms() const;

  /// Throws store::AppendError when the reading could not be made durable.
  AdmissionResult submit(const TelemetryReading& reading, SessionState& session);

  /// Registers `handle` as the live session for `node`; a previous live
  /// session for the same node is closed.
  void claim(const NodeId& node, const std::shared_ptr<SessionHandle>& handle);
  void release(const NodeId& node, const SessionHandle* handle);

  store::Store& store() { return store_; }

 private:
  struct NodeLane {
    std::mutex mu;
    bool seeded = false;
    std::optional<std::uint32_t> last_seq;
  };
  NodeLane& lane(const NodeId& node);

  store::Store& store_;
  SpecRegistry& specs_;
  alerting::AlertEngine& alerts_;
  PipelineOptions options_;
  alerting::Dispatcher* dispatcher_;
  CommitListener listener_;

  std::mutex lanes_mu_;
  std::unordered_map<NodeId, std::unique_ptr<NodeLane>> lanes_;
  std::mutex sessions_mu_;
  std::unordered_map<NodeId, std::weak_ptr<SessionHandle>> sessions_;
};

/// Minimal blocking byte stream.
class ByteStream {
 public:
  virtual ~ByteStream() = default;
  /// Returns 0 at end of stream; throws on transport error.
  virtual std::size_t read_some(std::span<std::uint8_t> buf) = 0;
  virtual void write_all(std::span<const std::uint8_t> bytes) = 0;
  /// Unblocks a pending read; callable from another thread.
  virtual void shutdown() = 0;
};

/// Shared between a running session and the pipeline so that a newer session
/// for the same node can close it.
class SessionHandle {
 public:
  explicit SessionHandle(ByteStream* stream) : stream_(stream) {}
  void supersede();
  bool superseded() const { return superseded_.load(); }
  void detach();

 private:
  std::mutex mu_;
  ByteStream* stream_;
  std::atomic<bool> superseded_{false};
};

struct SessionOptions {
  std::uint32_t max_consecutive_invalid = 10;
  std::uint16_t max_record_length = 1024;
};

struct SessionSummary {
  std::optional<NodeId> node_id;
  SessionCounters counters;
  std::string close_reason;
};

SessionSummary handle_session(ByteStream& stream, Pipeline& pipeline, const SessionOptions& options = {});

/// Structured session-close log line (single-line JSON).
std::string session_log_line(const SessionSummary& s, const std::string& peer, std::uint64_t duration_ms);

struct HostPort {
  std::string host;
  std::uint16_t port;
};
/// "host:port"; throws std::invalid_argument.
HostPort parse_host_port(std::string_view text);

class TcpServer {
 public:
  using LogSink = std::function<void(const std::string&)>;

  TcpServer(Pipeline& pipeline, HostPort listen, SessionOptions options = {}, LogSink log = {});
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  /// Binds and starts accepting. Throws std::runtime_error on bind failure.
  void start();
  void stop();
  std::uint16_t port() const { return port_; }

 private:
  struct Connection;
  void accept_loop();

  Pipeline& pipeline_;
  HostPort listen_;
  SessionOptions options_;
  LogSink log_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex conns_mu_;
  std::list<std::unique_ptr<Connection>> conns_;
};

/// Client side of one node session.
class FrameClient {
 public:
  /// Throws std::runtime_error when the connection cannot be established.
  static FrameClient connect(const HostPort& target);
  FrameClient(FrameClient&&) noexcept;
  FrameClient& operator=(FrameClient&&) noexcept;
  ~FrameClient();

  /// Sends one record and waits for its ack byte. Throws on transport error.
  std::uint8_t send(std::span<const std::uint8_t> frame);
  void close();

 private:
  explicit FrameClient(int fd) : fd_(fd) {}
  int fd_ = -1;
};

struct UplinkStats {
  std::uint64_t accepted = 0;
  std::uint64_t duplicate = 0;
  std::uint64_t stale = 0;
  std::uint64_t invalid = 0;
};

/// Simulator sink: one connection per node, frames sealed with the node's key.
class Uplink {
 public:
  Uplink(HostPort target, wire::Key fleet_key, std::unordered_map<NodeId, wire::Key> node_keys = {});

  /// Throws on transport failure or (when set) on a non-accept ack.
  void operator()(const TelemetryReading& reading);

  void set_require_accept(bool v) { require_accept_ = v; }
  /// Called with every accepted reading.
  void set_on_accept(std::function<void(const TelemetryReading&)> f) { on_accept_ = std::move(f); }
  const UplinkStats& stats() const { return stats_; }
  void close();

 private:
  HostPort target_;
  wire::Key fleet_key_;
  std::unordered_map<NodeId, wire::Key> node_keys_;
  std::unordered_map<NodeId, FrameClient> links_;
  UplinkStats stats_;
  bool require_accept_ = false;
  std::function<void(const TelemetryReading&)> on_accept_;
};

}  // namespace wlds::ingest
