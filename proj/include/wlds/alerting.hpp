#pragma once

// Debounced alert state machine, nearest-office lookup and webhook dispatch.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "wlds/core_model.hpp"
#include "wlds/store.hpp"

namespace wlds::alerting {

inline constexpr double kEarthRadiusKm = 6371.0;

struct MaintenanceOffice {
  std::string office_id;
  std::string name;
  GeoPoint location;
  std::string webhook_url;

  friend bool operator==(const MaintenanceOffice&, const MaintenanceOffice&) = default;
};

struct DebounceConfig {
  std::uint32_t raise_after = 3;
  std::uint32_t clear_after = 3;
};

enum class Direction { Raised, Cleared };
std::string_view to_string(Direction d);

struct OperatorAck {
  std::string operator_id;
  std::uint64_t at_ms;

  friend bool operator==(const OperatorAck&, const OperatorAck&) = default;
};

/// A Cleared transition reuses the alert_id of the Raised one it closes.
struct AlertTransition {
  std::string alert_id;
  NodeId node_id;
  Direction direction;
  CauseSet causes;
  double garbage_level_cm;
  std::uint64_t at_ms;
  GeoPoint position;
  std::optional<std::string> dispatched_to;
  std::optional<OperatorAck> ack;

  friend bool operator==(const AlertTransition&, const AlertTransition&) = default;
};

/// Per-node machine state. Two stable states: raised or not.
struct NodeAlertState {
  bool raised = false;
  std::uint32_t streak = 0;  // consecutive evaluations disagreeing with `raised`
  std::uint64_t raise_count = 0;
  std::optional<std::string> active_alert_id;
  CauseSet active_causes;
};

std::string make_alert_id(const NodeId& node, std::uint64_t ordinal);

/// Feeds one record (in ingest order) through the machine.
std::optional<AlertTransition> process(const store::StoredRecord& record, NodeAlertState& state,
                                       const DebounceConfig& debounce);

double haversine_km(const GeoPoint& a, const GeoPoint& b);

/// Minimum great-circle distance; exact ties go to the smallest office_id.
/// Throws std::invalid_argument on an empty registry.
const MaintenanceOffice& nearest_office(const GeoPoint& p, std::span<const MaintenanceOffice> registry);

/// Empty result means the registry document is valid.
std::vector<std::string> validate_offices(std::string_view json_text);
/// Throws std::invalid_argument with every violation.
std::vector<MaintenanceOffice> parse_offices(std::string_view json_text);
std::vector<MaintenanceOffice> load_offices(const std::filesystem::path& path);

/// Webhook body: {alert_id, node_id, direction, causes, garbage_level_cm,
/// lat_deg, lon_deg, at_ms}.
nlohmann::json webhook_document(const AlertTransition& t);
nlohmann::json transition_to_json(const AlertTransition& t);

struct DispatchResult {
  bool delivered;
  std::uint32_t attempts;

  friend bool operator==(const DispatchResult&, const DispatchResult&) = default;
};

struct RetryPolicy {
  std::uint32_t max_attempts = 5;
  std::chrono::milliseconds base_delay{1000};
  std::chrono::milliseconds max_delay{16000};

  /// Wait after failed attempt `attempt` (1-based): base * 2^(attempt-1), capped.
  std::chrono::milliseconds delay_after(std::uint32_t attempt) const;
};

/// HTTP status code, or a negative value for a transport failure.
using HttpPoster = std::function<int(const std::string& url, const std::string& json_body)>;
using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// cpp-httplib backed poster for http:// URLs (no TLS).
HttpPoster make_http_poster(std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));

DispatchResult dispatch(const AlertTransition& transition, const MaintenanceOffice& office,
                        const HttpPoster& post, const Sleeper& sleep, const RetryPolicy& policy = {});

/// Single worker draining a bounded queue; overflow drops the oldest pending
/// job. enqueue() never blocks on the network.
class Dispatcher {
 public:
  using ResultCallback = std::function<void(const AlertTransition&, const DispatchResult&)>;

  Dispatcher(HttpPoster post, Sleeper sleep, RetryPolicy policy, ResultCallback on_result,
             std::size_t capacity = 1024);
  ~Dispatcher();
  Dispatcher(const Dispatcher&) = delete;
  Dispatcher& operator=(const Dispatcher&) = delete;

  void enqueue(AlertTransition transition, MaintenanceOffice office);
  /// Blocks until the queue is empty and no job is running (tests, shutdown).
  void drain();
  void stop();
  std::uint64_t dropped() const;
  std::size_t pending() const;

 private:
  void loop();

  HttpPoster post_;
  Sleeper sleep_;
  RetryPolicy policy_;
  ResultCallback on_result_;
  std::size_t capacity_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<std::pair<AlertTransition, MaintenanceOffice>> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::uint64_t dropped_ = 0;
  std::thread worker_;
};

enum class DispatchStatus { NotDispatched, Pending, Delivered, GaveUp };
std::string_view to_string(DispatchStatus s);

/// One alert as the operator sees it: the Raised transition plus its later
/// history.
struct AlertRecord {
  AlertTransition raised;
  std::optional<AlertTransition> cleared;
  std::optional<OperatorAck> ack;
  DispatchStatus dispatch_status = DispatchStatus::NotDispatched;
  std::uint32_t dispatch_attempts = 0;

  bool active() const { return !cleared.has_value(); }
};

nlohmann::json alert_record_to_json(const AlertRecord& a);

enum class AckOutcome { Ok, UnknownAlert, AlreadyAcked, AlreadyCleared };

/// Thread-safe owner of every node's machine and the alert registry.
/// observe() must be called per node in ingest order.
class AlertEngine {
 public:
  AlertEngine(DebounceConfig debounce, std::vector<MaintenanceOffice> offices);

  const DebounceConfig& debounce() const { return debounce_; }
  const std::vector<MaintenanceOffice>& offices() const { return offices_; }

  /// Advances the node's machine. Raised transitions get their nearest
  /// office filled in and are registered as Pending dispatch.
  std::optional<AlertTransition> observe(const store::StoredRecord& record);
  /// Same as observe() for startup replay: Raised alerts are registered
  /// without a dispatch.
  std::optional<AlertTransition> replay(const store::StoredRecord& record);

  void record_dispatch(const std::string& alert_id, const DispatchResult& result);
  AckOutcome acknowledge(const std::string& alert_id, const std::string& operator_id, std::uint64_t at_ms);

  bool raised(const NodeId& node) const;
  std::map<NodeId, bool> states() const;
  std::optional<AlertRecord> alert(const std::string& alert_id) const;
  /// Ordered by raise time, then alert_id.
  std::vector<AlertRecord> alerts() const;
  std::vector<AlertTransition> transitions() const;

 private:
  std::optional<AlertTransition> advance(const store::StoredRecord& record, bool dispatching);

  DebounceConfig debounce_;
  std::vector<MaintenanceOffice> offices_;
  mutable std::mutex mu_;
  std::unordered_map<NodeId, NodeAlertState> nodes_;
  std::map<std::string, AlertRecord> alerts_;
  std::vector<AlertTransition> log_;
};

}  // namespace wlds::alerting
