#pragma once

// The `serve` process: store, alerting, ingestion and gateway over one config.

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "wlds/alerting.hpp"
#include "wlds/gateway.hpp"
#include "wlds/ingestd.hpp"
#include "wlds/store.hpp"
#include "wlds/wire.hpp"

namespace wlds {

struct ServiceConfig {
  std::string ingest_listen = "0.0.0.0:7701";
  std::string http_listen = "0.0.0.0:7702";
  wire::Key fleet_key{};
  std::unordered_map<NodeId, wire::Key> node_keys;
  alerting::DebounceConfig debounce;
  std::uint64_t staleness_window_ms = ingest::kDefaultStalenessWindowMs;
  std::filesystem::path data_dir = "data";
  std::vector<alerting::MaintenanceOffice> offices;
  std::vector<PipeSpec> nodes;
  double sonic_speed_mps = kDefaultSonicSpeedMps;
  std::uint64_t retention_days = 30;
  bool fsync = true;
};

/// Parses the config document. Relative paths resolve against `base_dir`.
/// Throws std::invalid_argument listing every problem.
ServiceConfig parse_service_config(std::string_view json_text, const std::filesystem::path& base_dir);
ServiceConfig load_service_config(const std::filesystem::path& path);
/// WLDS_LISTEN_ADDR and WLDS_HTTP_ADDR override the listen addresses.
void apply_env_overrides(ServiceConfig& config);

struct ServiceHooks {
  std::function<std::uint64_t()> clock;
  alerting::HttpPoster poster;
  alerting::Sleeper sleeper;
  std::function<void(const std::string&)> log;
};

class Service {
 public:
  explicit Service(ServiceConfig config, ServiceHooks hooks = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void start();
  void stop();

  std::uint16_t ingest_port() const { return tcp_ ? tcp_->port() : 0; }
  std::uint16_t http_port() const { return gateway_ ? gateway_->port() : 0; }

  store::Store& store() { return *store_; }
  alerting::AlertEngine& alerts() { return *alerts_; }
  ingest::SpecRegistry& specs() { return specs_; }
  gateway::EventBus& bus() { return bus_; }
  ingest::Pipeline& pipeline() { return *pipeline_; }
  alerting::Dispatcher& dispatcher() { return *dispatcher_; }

 private:
  void restore();
  void retention_loop();

  ServiceConfig config_;
  ServiceHooks hooks_;
  std::unique_ptr<store::Store> store_;
  ingest::SpecRegistry specs_;
  std::unique_ptr<alerting::AlertEngine> alerts_;
  gateway::EventBus bus_;
  std::unique_ptr<alerting::Dispatcher> dispatcher_;
  std::unique_ptr<ingest::Pipeline> pipeline_;
  std::unique_ptr<ingest::TcpServer> tcp_;
  std::unique_ptr<gateway::Gateway> gateway_;

  std::mutex retention_mu_;
  std::condition_variable retention_cv_;
  bool stopping_ = false;
  std::thread retention_thread_;
};

}  // namespace wlds
