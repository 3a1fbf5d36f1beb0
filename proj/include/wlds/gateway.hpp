#pragma once

// Operator HTTP API and live event feed.
//
//   GET  /nodes                         node snapshots
//   GET  /nodes/{id}                    one snapshot
//   GET  /nodes/{id}/history?from&to    stored records, JSON
//   GET  /map                           GeoJSON FeatureCollection
//   GET  /alerts[?active=true|false]
//   GET  /alerts/stream                 server-sent events
//   POST /alerts/{id}/ack               {"operator_id": "..."}
//   PUT  /nodes/{id}/thresholds         {set_limit_flow_lpm?, fill_threshold_cm?, gas_threshold_ppm?}

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "wlds/alerting.hpp"
#include "wlds/ingestd.hpp"
#include "wlds/store.hpp"

namespace httplib {
class Server;
}

namespace wlds::gateway {

struct Event {
  std::uint64_t id;
  std::string type;
  std::string data;  // single-line JSON
};

/// Sequenced in-memory event log shared by all SSE subscribers. Publishing
/// never waits on subscribers; a subscriber that falls behind the retained
/// window is told to resync.
class EventBus {
 public:
  explicit EventBus(std::size_t retention = 10'000);

  std::uint64_t publish(std::string type, std::string data);

  struct Batch {
    std::vector<Event> events;
    bool resync = false;
    bool closed = false;
  };
  /// Events with id > after, waiting up to `timeout` for at least one.
  Batch wait_after(std::uint64_t after, std::chrono::milliseconds timeout, std::size_t max_events = 512);

  std::uint64_t last_id() const;
  void close();

 private:
  std::size_t retention_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Event> events_;
  std::uint64_t next_id_ = 1;
  bool closed_ = false;
};

/// `id: N`, `event: TYPE`, `data: JSON`, blank line.
std::string format_sse(const Event& e);

struct GatewayDeps {
  store::Store& store;
  ingest::SpecRegistry& specs;
  alerting::AlertEngine& alerts;
  EventBus& bus;
  std::function<std::uint64_t()> clock;
  /// Called after a successful acknowledgement (persistence hook).
  std::function<void(const std::string& alert_id, const alerting::OperatorAck&)> on_ack;
};

nlohmann::json node_snapshot(const PipeSpec& spec, const std::optional<store::StoredRecord>& latest, bool raised);
nlohmann::json map_document(const GatewayDeps& deps);

/// Publishes the alert event (if any) followed by the snapshot event for a
/// committed record. Intended as the pipeline's commit listener.
void publish_commit(EventBus& bus, const PipeSpec& spec, const store::StoredRecord& record,
                    const std::optional<alerting::AlertTransition>& transition, bool raised);

class Gateway {
 public:
  explicit Gateway(GatewayDeps deps);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Binds and serves on a background thread. Throws std::runtime_error.
  void start(const ingest::HostPort& listen);
  void stop();
  std::uint16_t port() const { return port_; }

 private:
  void routes();

  GatewayDeps deps_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::uint16_t port_ = 0;
  std::mutex thresholds_mu_;
};

}  // namespace wlds::gateway
