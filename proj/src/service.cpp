#include "wlds/service.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "wlds/json_codec.hpp"
#include "wlds/node_sim.hpp"

namespace fs = std::filesystem;

namespace wlds {

using nlohmann::json;

namespace {

std::uint64_t wall_clock_ms() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count());
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

ServiceConfig parse_service_config(std::string_view text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  ServiceConfig c;
  std::vector<std::string> errors;
  auto attempt = [&](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      errors.push_back(std::string(what) + ": " + e.what());
    }
  };

  attempt("ingest_listen", [&] {
    c.ingest_listen = doc.value("ingest_listen", c.ingest_listen);
    ingest::parse_host_port(c.ingest_listen);
  });
  attempt("http_listen", [&] {
    c.http_listen = doc.value("http_listen", c.http_listen);
    ingest::parse_host_port(c.http_listen);
  });
  attempt("fleet_key_hex", [&] { c.fleet_key = wire::key_from_hex(doc.at("fleet_key_hex").get<std::string>()); });
  attempt("node_keys", [&] {
    if (!doc.contains("node_keys")) return;
    for (const auto& [id, hex] : doc.at("node_keys").items())
      c.node_keys.emplace(NodeId::parse(id), wire::key_from_hex(hex.get<std::string>()));
  });
  attempt("debounce", [&] {
    if (!doc.contains("debounce")) return;
    const auto& d = doc.at("debounce");
    c.debounce.raise_after = d.value("raise_after", c.debounce.raise_after);
    c.debounce.clear_after = d.value("clear_after", c.debounce.clear_after);
    if (c.debounce.raise_after < 1 || c.debounce.clear_after < 1) throw std::invalid_argument("counts must be ≥ 1");
  });
  attempt("staleness_window_ms",
          [&] { c.staleness_window_ms = doc.value("staleness_window_ms", c.staleness_window_ms); });
  attempt("data_dir", [&] { c.data_dir = resolve(base_dir, doc.value("data_dir", std::string("data"))); });
  attempt("offices_file", [&] {
    c.offices = alerting::load_offices(resolve(base_dir, doc.at("offices_file").get<std::string>()));
  });
  attempt("nodes", [&] {
    if (doc.contains("scenario_file")) {
      const auto scenario = sim::load_scenario(resolve(base_dir, doc.at("scenario_file").get<std::string>()));
      c.nodes = scenario.nodes;
    }
    if (doc.contains("nodes"))
      for (const auto& n : doc.at("nodes")) c.nodes.push_back(spec_from_json(n));
    for (const auto& n : c.nodes)
      if (auto v = validate_pipe_spec(n); !v.empty())
        throw std::invalid_argument(n.node_id.to_string() + ": " + v.front());
  });
  attempt("sonic_speed_mps", [&] {
    c.sonic_speed_mps = doc.value("sonic_speed_mps", c.sonic_speed_mps);
    if (!(c.sonic_speed_mps > 0.0)) throw std::invalid_argument("must be positive");
  });
  attempt("retention_days", [&] { c.retention_days = doc.value("retention_days", c.retention_days); });
  attempt("fsync", [&] { c.fsync = doc.value("fsync", c.fsync); });

  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw std::invalid_argument(msg);
  }
  return c;
}

ServiceConfig load_service_config(const fs::path& path) {
  return parse_service_config(read_text(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

void apply_env_overrides(ServiceConfig& c) {
  if (const char* v = std::getenv("WLDS_LISTEN_ADDR"); v && *v) c.ingest_listen = v;
  if (const char* v = std::getenv("WLDS_HTTP_ADDR"); v && *v) c.http_listen = v;
}

Service::Service(ServiceConfig config, ServiceHooks hooks) : config_(std::move(config)), hooks_(std::move(hooks)) {
  if (!hooks_.clock) hooks_.clock = wall_clock_ms;
  if (!hooks_.poster) hooks_.poster = alerting::make_http_poster();
  if (!hooks_.sleeper) hooks_.sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (!hooks_.log) hooks_.log = [](const std::string& line) { std::cerr << line << '\n'; };

  store::StoreOptions so;
  so.fsync = config_.fsync;
  so.retention_ms = config_.retention_days * 24ull * 3600 * 1000;
  store_ = std::make_unique<store::Store>(config_.data_dir, so);
  alerts_ = std::make_unique<alerting::AlertEngine>(config_.debounce, config_.offices);
  restore();

  dispatcher_ = std::make_unique<alerting::Dispatcher>(
      hooks_.poster, hooks_.sleeper, alerting::RetryPolicy{},
      [this](const alerting::AlertTransition& t, const alerting::DispatchResult& r) {
        alerts_->record_dispatch(t.alert_id, r);
        bus_.publish("dispatch", json{{"alert_id", t.alert_id},
                                      {"office_id", t.dispatched_to.value_or("")},
                                      {"delivered", r.delivered},
                                      {"attempts", r.attempts}}
                                     .dump());
        hooks_.log(json{{"event", "dispatch"},
                        {"alert_id", t.alert_id},
                        {"delivered", r.delivered},
                        {"attempts", r.attempts}}
                       .dump());
      });

  ingest::PipelineOptions po;
  po.fleet_key = config_.fleet_key;
  po.node_keys = config_.node_keys;
  po.staleness_window_ms = config_.staleness_window_ms;
  po.sonic_speed_mps = config_.sonic_speed_mps;
  po.clock = hooks_.clock;
  pipeline_ = std::make_unique<ingest::Pipeline>(*store_, specs_, *alerts_, po, dispatcher_.get());
  pipeline_->set_commit_listener([this](const store::StoredRecord& r, const std::optional<alerting::AlertTransition>& t) {
    gateway::publish_commit(bus_, r.spec, r, t, alerts_->raised(r.reading.node_id));
  });
}

Service::~Service() { stop(); }

void Service::restore() {
  for (const auto& n : config_.nodes) specs_.put(n);
  for (const auto& n : store_->saved_specs()) specs_.put(n);
  for (const auto& node : store_->nodes())
    for (const auto& r : store_->scan(node)) alerts_->replay(r);

  const auto acks = config_.data_dir / "acks.jsonl";
  if (fs::exists(acks)) {
    std::ifstream in(acks);
    std::string line;
    while (std::getline(in, line)) {
      try {
        const auto j = json::parse(line);
        alerts_->acknowledge(j.at("alert_id").get<std::string>(), j.at("operator_id").get<std::string>(),
                             j.at("at_ms").get<std::uint64_t>());
      } catch (const std::exception&) {
        // torn last line
      }
    }
  }
}

void Service::start() {
  tcp_ = std::make_unique<ingest::TcpServer>(*pipeline_, ingest::parse_host_port(config_.ingest_listen),
                                             ingest::SessionOptions{}, hooks_.log);
  tcp_->start();

  gateway::GatewayDeps deps{*store_, specs_, *alerts_, bus_, hooks_.clock,
                            [this](const std::string& id, const alerting::OperatorAck& ack) {
                              std::ofstream out(config_.data_dir / "acks.jsonl", std::ios::app);
                              out << json{{"alert_id", id}, {"operator_id", ack.operator_id}, {"at_ms", ack.at_ms}}.dump()
                                  << '\n';
                            }};
  gateway_ = std::make_unique<gateway::Gateway>(std::move(deps));
  gateway_->start(ingest::parse_host_port(config_.http_listen));

  store_->enforce_retention(hooks_.clock());
  retention_thread_ = std::thread([this] { retention_loop(); });
}

void Service::retention_loop() {
  std::unique_lock lk(retention_mu_);
  while (!retention_cv_.wait_for(lk, std::chrono::hours(1), [&] { return stopping_; })) {
    const auto dropped = store_->enforce_retention(hooks_.clock());
    if (dropped) hooks_.log(json{{"event", "retention"}, {"dropped_records", dropped}}.dump());
  }
}

void Service::stop() {
  {
    std::lock_guard lk(retention_mu_);
    if (stopping_) return;
    stopping_ = true;
  }
  retention_cv_.notify_all();
  if (retention_thread_.joinable()) retention_thread_.join();
  if (tcp_) tcp_->stop();
  if (gateway_) gateway_->stop();
  if (dispatcher_) dispatcher_->stop();
}

}  // namespace wlds
