#include "wlds/alerting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

namespace wlds::alerting {

using nlohmann::json;

std::string_view to_string(Direction d) { return d == Direction::Raised ? "Raised" : "Cleared"; }

std::string_view to_string(DispatchStatus s) {
  switch (s) {
    case DispatchStatus::NotDispatched: return "not_dispatched";
    case DispatchStatus::Pending: return "pending";
    case DispatchStatus::Delivered: return "delivered";
    case DispatchStatus::GaveUp: return "gave_up";
  }
  return "?";
}

std::string make_alert_id(const NodeId& node, std::uint64_t ordinal) {
  return node.to_string() + "." + std::to_string(ordinal);
}

std::optional<AlertTransition> process(const store::StoredRecord& record, NodeAlertState& s,
                                       const DebounceConfig& debounce) {
  const bool warning = record.evaluation.state == AlertState::Warning;
  if (warning == s.raised) {
    s.streak = 0;
    return std::nullopt;
  }
  ++s.streak;
  const auto needed = s.raised ? debounce.clear_after : debounce.raise_after;
  if (s.streak < needed) return std::nullopt;

  s.streak = 0;
  AlertTransition t{
      .alert_id = {},
      .node_id = record.reading.node_id,
      .direction = warning ? Direction::Raised : Direction::Cleared,
      .causes = {},
      .garbage_level_cm = record.derived.garbage_level_cm,
      .at_ms = record.reading.timestamp_ms,
      .position = record.reading.position,
      .dispatched_to = std::nullopt,
      .ack = std::nullopt,
  };
  if (warning) {
    s.raised = true;
    ++s.raise_count;
    s.active_alert_id = make_alert_id(t.node_id, s.raise_count);
    s.active_causes = record.evaluation.causes;
    t.alert_id = *s.active_alert_id;
    t.causes = s.active_causes;
  } else {
    s.raised = false;
    t.alert_id = s.active_alert_id.value_or("");
    t.causes = s.active_causes;
    s.active_alert_id.reset();
    s.active_causes = CauseSet{};
  }
  return t;
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  constexpr double kRad = std::numbers::pi / 180.0;
  // Differences are taken in degrees first so mirrored points stay exactly symmetric.
  const double dlat = (b.lat_deg - a.lat_deg) * kRad;
  const double dlon = (b.lon_deg - a.lon_deg) * kRad;
  const double s1 = std::sin(dlat / 2.0), s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(a.lat_deg * kRad) * std::cos(b.lat_deg * kRad) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

const MaintenanceOffice& nearest_office(const GeoPoint& p, std::span<const MaintenanceOffice> registry) {
  if (registry.empty()) throw std::invalid_argument("office registry is empty");
  const MaintenanceOffice* best = &registry[0];
  double best_km = haversine_km(p, best->location);
  for (const auto& o : registry.subspan(1)) {
    const double d = haversine_km(p, o.location);
    if (d < best_km || (d == best_km && o.office_id < best->office_id)) {
      best = &o;
      best_km = d;
    }
  }
  return *best;
}

namespace {

std::pair<std::vector<MaintenanceOffice>, std::vector<std::string>> read_offices(std::string_view text) {
  std::vector<MaintenanceOffice> out;
  std::vector<std::string> v;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    return {out, {std::string("malformed JSON: ") + e.what()}};
  }
  if (!doc.is_array()) return {out, {"registry must be a JSON array"}};
  if (doc.empty()) v.emplace_back("registry must not be empty");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& o = doc[i];
    const std::string tag = "office " + std::to_string(i + 1) + ": ";
    try {
      MaintenanceOffice m{o.at("office_id").get<std::string>(), o.at("name").get<std::string>(),
                          GeoPoint{o.at("lat_deg").get<double>(), o.at("lon_deg").get<double>()},
                          o.at("webhook_url").get<std::string>()};
      if (m.office_id.empty()) v.push_back(tag + "empty office_id");
      if (!seen.insert(m.office_id).second) v.push_back(tag + "duplicate office_id " + m.office_id);
      if (!GeoPoint::valid(m.location.lat_deg, m.location.lon_deg)) v.push_back(tag + "location out of range");
      if (!m.webhook_url.starts_with("http://")) v.push_back(tag + "webhook_url must be an http:// URL");
      out.push_back(std::move(m));
    } catch (const json::exception& e) {
      v.push_back(tag + e.what());
    }
  }
  return {out, v};
}

}  // namespace

std::vector<std::string> validate_offices(std::string_view json_text) { return read_offices(json_text).second; }

std::vector<MaintenanceOffice> parse_offices(std::string_view json_text) {
  auto [offices, violations] = read_offices(json_text);
  if (!violations.empty()) {
    std::string msg = "invalid office registry:";
    for (const auto& v : violations) msg += " " + v + ";";
    throw std::invalid_argument(msg);
  }
  return offices;
}

std::vector<MaintenanceOffice> load_offices(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open office registry " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_offices(ss.str());
}

json webhook_document(const AlertTransition& t) {
  return json{{"alert_id", t.alert_id},
              {"node_id", t.node_id.to_string()},
              {"direction", std::string(to_string(t.direction))},
              {"causes", t.causes.names()},
              {"garbage_level_cm", t.garbage_level_cm},
              {"lat_deg", t.position.lat_deg},
              {"lon_deg", t.position.lon_deg},
              {"at_ms", t.at_ms}};
}

json transition_to_json(const AlertTransition& t) {
  auto j = webhook_document(t);
  j["dispatched_to"] = t.dispatched_to ? json(*t.dispatched_to) : json(nullptr);
  j["ack"] = t.ack ? json{{"operator_id", t.ack->operator_id}, {"at_ms", t.ack->at_ms}} : json(nullptr);
  return j;
}

json alert_record_to_json(const AlertRecord& a) {
  return json{
      {"alert_id", a.raised.alert_id},
      {"node_id", a.raised.node_id.to_string()},
      {"active", a.active()},
      {"causes", a.raised.causes.names()},
      {"garbage_level_cm", a.raised.garbage_level_cm},
      {"lat_deg", a.raised.position.lat_deg},
      {"lon_deg", a.raised.position.lon_deg},
      {"raised_at_ms", a.raised.at_ms},
      {"cleared_at_ms", a.cleared ? json(a.cleared->at_ms) : json(nullptr)},
      {"dispatched_to", a.raised.dispatched_to ? json(*a.raised.dispatched_to) : json(nullptr)},
      {"dispatch", {{"status", std::string(to_string(a.dispatch_status))}, {"attempts", a.dispatch_attempts}}},
      {"ack", a.ack ? json{{"operator_id", a.ack->operator_id}, {"at_ms", a.ack->at_ms}} : json(nullptr)},
  };
}

std::chrono::milliseconds RetryPolicy::delay_after(std::uint32_t attempt) const {
  auto d = base_delay;
  for (std::uint32_t i = 1; i < attempt && d < max_delay; ++i) d *= 2;
  return std::min(d, max_delay);
}

DispatchResult dispatch(const AlertTransition& transition, const MaintenanceOffice& office,
                        const HttpPoster& post, const Sleeper& sleep, const RetryPolicy& policy) {
  if (transition.direction != Direction::Raised)
    throw std::invalid_argument("only Raised transitions are dispatched");
  const auto body = webhook_document(transition).dump();
  for (std::uint32_t attempt = 1; attempt <= policy.max_attempts; ++attempt) {
    int status = -1;
    try {
      status = post(office.webhook_url, body);
    } catch (const std::exception&) {
      status = -1;
    }
    if (status >= 200 && status < 300) return DispatchResult{true, attempt};
    if (attempt < policy.max_attempts) sleep(policy.delay_after(attempt));
  }
  return DispatchResult{false, policy.max_attempts};
}

Dispatcher::Dispatcher(HttpPoster post, Sleeper sleep, RetryPolicy policy, ResultCallback on_result,
                       std::size_t capacity)
    : post_(std::move(post)),
      sleep_(std::move(sleep)),
      policy_(policy),
      on_result_(std::move(on_result)),
      capacity_(capacity),
      worker_([this] { loop(); }) {}

Dispatcher::~Dispatcher() { stop(); }

void Dispatcher::enqueue(AlertTransition transition, MaintenanceOffice office) {
  std::lock_guard lk(mu_);
  if (stopping_) return;
  if (queue_.size() >= capacity_) {
    std::cerr << R"({"event":"dispatch_dropped","alert_id":")" << queue_.front().first.alert_id << "\"}\n";
    queue_.pop_front();
    ++dropped_;
  }
  queue_.emplace_back(std::move(transition), std::move(office));
  cv_.notify_one();
}

void Dispatcher::loop() {
  std::unique_lock lk(mu_);
  for (;;) {
    cv_.wait(lk, [&] { return stopping_ || !queue_.empty(); });
    if (stopping_) return;
    auto job = std::move(queue_.front());
    queue_.pop_front();
    busy_ = true;
    lk.unlock();
    const auto result = dispatch(job.first, job.second, post_, sleep_, policy_);
    if (on_result_) on_result_(job.first, result);
    lk.lock();
    busy_ = false;
    idle_cv_.notify_all();
  }
}

void Dispatcher::drain() {
  std::unique_lock lk(mu_);
  idle_cv_.wait(lk, [&] { return stopping_ || (queue_.empty() && !busy_); });
}

void Dispatcher::stop() {
  {
    std::lock_guard lk(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  idle_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

std::uint64_t Dispatcher::dropped() const {
  std::lock_guard lk(mu_);
  return dropped_;
}

std::size_t Dispatcher::pending() const {
  std::lock_guard lk(mu_);
  return queue_.size() + (busy_ ? 1 : 0);
}

AlertEngine::AlertEngine(DebounceConfig debounce, std::vector<MaintenanceOffice> offices)
    : debounce_(debounce), offices_(std::move(offices)) {
  if (debounce_.raise_after < 1 || debounce_.clear_after < 1)
    throw std::invalid_argument("debounce counts must be ≥ 1");
  if (offices_.empty()) throw std::invalid_argument("office registry is empty");
}

std::optional<AlertTransition> AlertEngine::advance(const store::StoredRecord& record, bool dispatching) {
  std::lock_guard lk(mu_);
  auto t = process(record, nodes_[record.reading.node_id], debounce_);
  if (!t) return t;
  if (t->direction == Direction::Raised) {
    t->dispatched_to = nearest_office(t->position, offices_).office_id;
    AlertRecord a{*t};
    a.dispatch_status = dispatching ? DispatchStatus::Pending : DispatchStatus::NotDispatched;
    alerts_.insert_or_assign(t->alert_id, std::move(a));
  } else if (auto it = alerts_.find(t->alert_id); it != alerts_.end()) {
    it->second.cleared = *t;
  }
  log_.push_back(*t);
  return t;
}

std::optional<AlertTransition> AlertEngine::observe(const store::StoredRecord& record) {
  return advance(record, true);
}

std::optional<AlertTransition> AlertEngine::replay(const store::StoredRecord& record) {
  return advance(record, false);
}

void AlertEngine::record_dispatch(const std::string& alert_id, const DispatchResult& result) {
  std::lock_guard lk(mu_);
  auto it = alerts_.find(alert_id);
  if (it == alerts_.end()) return;
  it->second.dispatch_status = result.delivered ? DispatchStatus::Delivered : DispatchStatus::GaveUp;
  it->second.dispatch_attempts = result.attempts;
}

AckOutcome AlertEngine::acknowledge(const std::string& alert_id, const std::string& operator_id,
                                    std::uint64_t at_ms) {
  std::lock_guard lk(mu_);
  auto it = alerts_.find(alert_id);
  if (it == alerts_.end()) return AckOutcome::UnknownAlert;
  if (it->second.ack) return AckOutcome::AlreadyAcked;
  if (!it->second.active()) return AckOutcome::AlreadyCleared;
  it->second.ack = OperatorAck{operator_id, at_ms};
  it->second.raised.ack = it->second.ack;
  return AckOutcome::Ok;
}

bool AlertEngine::raised(const NodeId& node) const {
  std::lock_guard lk(mu_);
  auto it = nodes_.find(node);
  return it != nodes_.end() && it->second.raised;
}

std::map<NodeId, bool> AlertEngine::states() const {
  std::lock_guard lk(mu_);
  std::map<NodeId, bool> out;
  for (const auto& [id, s] : nodes_) out.emplace(id, s.raised);
  return out;
}

std::optional<AlertRecord> AlertEngine::alert(const std::string& alert_id) const {
  std::lock_guard lk(mu_);
  auto it = alerts_.find(alert_id);
  if (it == alerts_.end()) return std::nullopt;
  return it->second;
}

std::vector<AlertRecord> AlertEngine::alerts() const {
  std::vector<AlertRecord> out;
  {
    std::lock_guard lk(mu_);
    for (const auto& [id, a] : alerts_) out.push_back(a);
  }
  std::sort(out.begin(), out.end(), [](const AlertRecord& a, const AlertRecord& b) {
    return std::tie(a.raised.at_ms, a.raised.alert_id) < std::tie(b.raised.at_ms, b.raised.alert_id);
  });
  return out;
}

std::vector<AlertTransition> AlertEngine::transitions() const {
  std::lock_guard lk(mu_);
  return log_;
}

}  // namespace wlds::alerting
