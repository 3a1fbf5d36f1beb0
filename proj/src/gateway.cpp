#include "wlds/gateway.hpp"

#include <httplib.h>

#include <charconv>
#include <limits>

#include "wlds/json_codec.hpp"

namespace wlds::gateway {

using nlohmann::json;

EventBus::EventBus(std::size_t retention) : retention_(retention) {}

std::uint64_t EventBus::publish(std::string type, std::string data) {
  std::uint64_t id;
  {
    std::lock_guard lk(mu_);
    id = next_id_++;
    events_.push_back(Event{id, std::move(type), std::move(data)});
    while (events_.size() > retention_) events_.pop_front();
  }
  cv_.notify_all();
  return id;
}

EventBus::Batch EventBus::wait_after(std::uint64_t after, std::chrono::milliseconds timeout,
                                     std::size_t max_events) {
  std::unique_lock lk(mu_);
  Batch b;
  if (after >= next_id_) {
    b.resync = true;
    return b;
  }
  cv_.wait_for(lk, timeout, [&] { return closed_ || next_id_ - 1 > after; });
  if (closed_) {
    b.closed = true;
    return b;
  }
  if (events_.empty()) return b;
  const auto oldest = events_.front().id;
  if (after + 1 < oldest) {
    b.resync = true;
    return b;
  }
  for (auto i = static_cast<std::size_t>(after + 1 - oldest); i < events_.size() && b.events.size() < max_events; ++i)
    b.events.push_back(events_[i]);
  return b;
}

std::uint64_t EventBus::last_id() const {
  std::lock_guard lk(mu_);
  return next_id_ - 1;
}

void EventBus::close() {
  {
    std::lock_guard lk(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

std::string format_sse(const Event& e) {
  return "id: " + std::to_string(e.id) + "\nevent: " + e.type + "\ndata: " + e.data + "\n\n";
}

namespace {

std::string_view color(bool raised) { return raised ? "RED" : "GREEN"; }

json thresholds_json(const PipeSpec& s) {
  return json{{"pipe_height_cm", s.pipe_height_cm},
              {"set_limit_flow_lpm", s.set_limit_flow_lpm},
              {"fill_threshold_cm", s.fill_threshold_cm},
              {"gas_threshold_ppm", s.gas_threshold_ppm}};
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}});
}

std::optional<std::uint64_t> parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

json node_snapshot(const PipeSpec& spec, const std::optional<store::StoredRecord>& latest, bool raised) {
  json latest_json = nullptr;
  if (latest) {
    latest_json = json{{"seq", latest->reading.seq},
                       {"timestamp_ms", latest->reading.timestamp_ms},
                       {"flow_lpm", latest->reading.flow_lpm},
                       {"garbage_level_cm", latest->derived.garbage_level_cm},
                       {"gas_ppm", latest->reading.gas_ppm},
                       {"anomalous", latest->derived.anomalous},
                       {"evaluation", evaluation_to_json(latest->evaluation)}};
  }
  return json{{"node_id", spec.node_id.to_string()},
              {"spec", thresholds_json(spec)},
              {"latest", latest_json},
              {"alert_state", raised ? "Raised" : "Normal"},
              {"color", color(raised)},
              {"position", {{"lat_deg", spec.location.lat_deg}, {"lon_deg", spec.location.lon_deg}}}};
}

json map_document(const GatewayDeps& deps) {
  json features = json::array();
  for (const auto& spec : deps.specs.all()) {
    const auto latest = deps.store.latest(spec.node_id);
    const bool raised = deps.alerts.raised(spec.node_id);
    features.push_back(json{
        {"type", "Feature"},
        {"geometry", {{"type", "Point"}, {"coordinates", {spec.location.lon_deg, spec.location.lat_deg}}}},
        {"properties",
         {{"node_id", spec.node_id.to_string()},
          {"state", color(raised)},
          {"garbage_level_cm", latest ? json(latest->derived.garbage_level_cm) : json(nullptr)}}},
    });
  }
  return json{{"type", "FeatureCollection"}, {"features", features}};
}

void publish_commit(EventBus& bus, const PipeSpec& spec, const store::StoredRecord& record,
                    const std::optional<alerting::AlertTransition>& transition, bool raised) {
  if (transition) bus.publish("alert", alerting::transition_to_json(*transition).dump());
  bus.publish("snapshot", node_snapshot(spec, record, raised).dump());
}

Gateway::Gateway(GatewayDeps deps) : deps_(std::move(deps)), server_(std::make_unique<httplib::Server>()) {
  if (!deps_.clock)
    deps_.clock = [] {
      return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                            std::chrono::system_clock::now().time_since_epoch())
                                            .count());
    };
  server_->new_task_queue = [] { return new httplib::ThreadPool(32); };
  routes();
}

Gateway::~Gateway() { stop(); }

void Gateway::routes() {
  auto& srv = *server_;
  auto& d = deps_;

  srv.Get("/nodes", [&d](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& spec : d.specs.all())
      out.push_back(node_snapshot(spec, d.store.latest(spec.node_id), d.alerts.raised(spec.node_id)));
    send_json(res, 200, out);
  });

  srv.Get(R"(/nodes/([^/]+))", [&d](const httplib::Request& req, httplib::Response& res) {
    const auto id = NodeId::try_parse(req.matches[1].str());
    const auto spec = id ? d.specs.get(*id) : std::nullopt;
    if (!spec) return send_error(res, 404, "unknown node");
    send_json(res, 200, node_snapshot(*spec, d.store.latest(*id), d.alerts.raised(*id)));
  });

  srv.Get(R"(/nodes/([^/]+)/history)", [&d](const httplib::Request& req, httplib::Response& res) {
    const auto id = NodeId::try_parse(req.matches[1].str());
    if (!id || !d.specs.get(*id)) return send_error(res, 404, "unknown node");
    std::uint64_t from = 0, to = std::numeric_limits<std::uint64_t>::max();
    if (req.has_param("from")) {
      auto v = parse_u64(req.get_param_value("from"));
      if (!v) return send_error(res, 400, "bad 'from'");
      from = *v;
    }
    if (req.has_param("to")) {
      auto v = parse_u64(req.get_param_value("to"));
      if (!v) return send_error(res, 400, "bad 'to'");
      to = *v;
    }
    if (from >= to) return send_error(res, 400, "'from' must be less than 'to'");
    json records = json::array();
    for (const auto& r : d.store.range(store::QueryRange{*id, from, to})) records.push_back(store::record_to_json(r));
    send_json(res, 200, json{{"node_id", id->to_string()}, {"from", from}, {"to", to}, {"records", records}});
  });

  srv.Get("/map", [&d](const httplib::Request&, httplib::Response& res) {
    res.status = 200;
    res.set_content(map_document(d).dump(), "application/geo+json");
  });

  srv.Get("/alerts", [&d](const httplib::Request& req, httplib::Response& res) {
    std::optional<bool> active;
    if (req.has_param("active")) {
      const auto v = req.get_param_value("active");
      if (v == "true") active = true;
      else if (v == "false") active = false;
      else return send_error(res, 400, "active must be true or false");
    }
    json out = json::array();
    for (const auto& a : d.alerts.alerts())
      if (!active || a.active() == *active) out.push_back(alerting::alert_record_to_json(a));
    send_json(res, 200, out);
  });

  srv.Get("/alerts/stream", [&d](const httplib::Request& req, httplib::Response& res) {
    std::uint64_t cursor = d.bus.last_id();
    std::string last = req.get_header_value("Last-Event-ID");
    if (last.empty() && req.has_param("last_event_id")) last = req.get_param_value("last_event_id");
    if (!last.empty()) {
      auto v = parse_u64(last);
      if (!v) return send_error(res, 400, "bad Last-Event-ID");
      cursor = *v;
    }
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [&d, cursor](std::size_t, httplib::DataSink& sink) mutable {
      auto batch = d.bus.wait_after(cursor, std::chrono::milliseconds(1000));
      if (batch.closed) {
        sink.done();
        return true;
      }
      if (batch.resync) {
        const std::string msg = "event: resync\ndata: {\"reason\":\"resync required\"}\n\n";
        sink.write(msg.data(), msg.size());
        sink.done();
        return true;
      }
      if (batch.events.empty()) {
        static constexpr std::string_view ping = ": keepalive\n\n";
        return sink.write(ping.data(), ping.size());
      }
      std::string chunk;
      for (const auto& e : batch.events) chunk += format_sse(e);
      cursor = batch.events.back().id;
      return sink.write(chunk.data(), chunk.size());
    });
  });

  srv.Post(R"(/alerts/([^/]+)/ack)", [&d](const httplib::Request& req, httplib::Response& res) {
    const auto alert_id = req.matches[1].str();
    std::string operator_id;
    try {
      operator_id = json::parse(req.body).at("operator_id").get<std::string>();
    } catch (const json::exception&) {
      return send_error(res, 400, "body must be {\"operator_id\": string}");
    }
    if (operator_id.empty()) return send_error(res, 400, "operator_id must not be empty");
    const auto now = d.clock();
    switch (d.alerts.acknowledge(alert_id, operator_id, now)) {
      case alerting::AckOutcome::UnknownAlert: return send_error(res, 404, "unknown alert");
      case alerting::AckOutcome::AlreadyAcked: return send_error(res, 409, "alert already acknowledged");
      case alerting::AckOutcome::AlreadyCleared: return send_error(res, 409, "alert already cleared");
      case alerting::AckOutcome::Ok: break;
    }
    const auto record = d.alerts.alert(alert_id);
    if (d.on_ack) d.on_ack(alert_id, *record->ack);
    const auto body = alerting::alert_record_to_json(*record);
    d.bus.publish("ack", body.dump());
    send_json(res, 200, body);
  });

  srv.Put(R"(/nodes/([^/]+)/thresholds)", [this, &d](const httplib::Request& req, httplib::Response& res) {
    const auto id = NodeId::try_parse(req.matches[1].str());
    if (!id || !d.specs.get(*id)) return send_error(res, 404, "unknown node");
    json body;
    try {
      body = json::parse(req.body);
      if (!body.is_object()) throw std::invalid_argument("not an object");
    } catch (const std::exception&) {
      return send_error(res, 400, "body must be a JSON object");
    }
    std::lock_guard lk(thresholds_mu_);
    auto spec = *d.specs.get(*id);
    try {
      for (const auto& [key, value] : body.items()) {
        if (key == "set_limit_flow_lpm") spec.set_limit_flow_lpm = value.get<double>();
        else if (key == "fill_threshold_cm") spec.fill_threshold_cm = value.get<double>();
        else if (key == "gas_threshold_ppm") spec.gas_threshold_ppm = value.get<double>();
        else return send_error(res, 400, "unknown field " + key);
      }
    } catch (const json::exception&) {
      return send_error(res, 400, "threshold values must be numbers");
    }
    if (auto v = validate_pipe_spec(spec); !v.empty()) return send_json(res, 400, json{{"violations", v}});
    d.specs.put(spec);
    d.store.save_spec(spec);
    const auto snapshot = node_snapshot(spec, d.store.latest(*id), d.alerts.raised(*id));
    d.bus.publish("snapshot", snapshot.dump());
    send_json(res, 200, snapshot);
  });
}

void Gateway::start(const ingest::HostPort& listen) {
  const std::string host = listen.host.empty() ? "0.0.0.0" : listen.host;
  int port = listen.port;
  if (port == 0) {
    port = server_->bind_to_any_port(host);
    if (port < 0) throw std::runtime_error("gateway: cannot bind " + host);
  } else if (!server_->bind_to_port(host, port)) {
    throw std::runtime_error("gateway: cannot bind " + host + ":" + std::to_string(port));
  }
  port_ = static_cast<std::uint16_t>(port);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void Gateway::stop() {
  deps_.bus.close();
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace wlds::gateway
