#include "wlds/node_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace wlds::sim {

namespace {

// Flow ramps are exponential with this many time constants per event duration,
// renormalized so the ramp lands exactly on its target.
constexpr double kRampRate = 5.0;
constexpr double kNoiseFraction = 0.05;
constexpr double kBaseFlowFactor = 1.5;
constexpr double kBaseFillFactor = 0.2;
constexpr double kBaseGasFactor = 0.3;
constexpr double kClogFlowFactor = 0.2;
constexpr double kClogFillFactor = 0.9;

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Uniform in [-1, 1), bit-reproducible across standard libraries.
double symmetric_unit(std::mt19937_64& rng) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return 2.0 * u - 1.0;
}

double normalized_decay(double x) {
  const double floor = std::exp(-kRampRate);
  return (std::exp(-kRampRate * x) - floor) / (1.0 - floor);
}

std::uint64_t wall_clock_ms() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count());
}

}  // namespace

struct Fleet::Ramp {
  bool recovering;
  double from_fill, to_fill, from_flow, to_flow;
  std::uint64_t start_tick, duration;
};

struct Fleet::Node {
  double base_flow, base_fill, base_gas;
  double flow, fill;  // truth before transient effects and noise
  double last_flow, last_gas;
  bool clogged = false;
  std::optional<Ramp> ramp;
  std::vector<ScenarioEvent> transients;  // active RainSurge / GasSpike
  std::uint32_t seq = 0;
  std::mt19937_64 rng;
};

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::RainSurge: return "RainSurge";
    case EventKind::ClogOnset: return "ClogOnset";
    case EventKind::ClogClear: return "ClogClear";
    case EventKind::GasSpike: return "GasSpike";
  }
  return "?";
}

std::optional<EventKind> parse_event_kind(std::string_view s) {
  for (auto k : {EventKind::RainSurge, EventKind::ClogOnset, EventKind::ClogClear, EventKind::GasSpike})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

namespace {
std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : "; ") + x;
  return s;
}
}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : std::invalid_argument("invalid scenario: " + join(violations)), violations_(std::move(violations)) {}

std::vector<std::string> validate_scenario(const ScenarioConfig& c) {
  std::vector<std::string> v;
  if (c.nodes.empty()) v.emplace_back("node count ≥ 1");
  if (c.tick_interval_ms < 1) v.emplace_back("tick_interval_ms ≥ 1");
  if (!std::isfinite(c.time_acceleration) || c.time_acceleration < 1.0)
    v.emplace_back("time_acceleration ≥ 1");
  if (!std::isfinite(c.sonic_speed_mps) || c.sonic_speed_mps <= 0.0)
    v.emplace_back("sonic_speed_mps > 0");
  for (std::size_t i = 0; i < c.nodes.size(); ++i) {
    for (const auto& msg : validate_pipe_spec(c.nodes[i]))
      v.push_back("node " + std::to_string(i + 1) + ": " + msg);
    for (std::size_t j = 0; j < i; ++j)
      if (c.nodes[j].node_id == c.nodes[i].node_id)
        v.push_back("node " + std::to_string(i + 1) + ": duplicate node_id");
  }
  for (std::size_t i = 0; i < c.events.size(); ++i) {
    const auto& e = c.events[i];
    const std::string tag = "event " + std::to_string(i + 1) + ": ";
    if (e.node < 1 || e.node > c.nodes.size()) v.push_back(tag + "unknown node " + std::to_string(e.node));
    if (e.duration_ticks < 1) v.push_back(tag + "duration ≥ 1");
    if (!std::isfinite(e.magnitude) || e.magnitude <= 0.0) v.push_back(tag + "magnitude > 0");
    if (e.start_tick < 1) v.push_back(tag + "start_tick ≥ 1");
  }
  return v;
}

NodeId derived_node_id(std::uint64_t seed, std::size_t index) {
  std::uint64_t state = seed ^ (0xD1B54A32D192ED03ull * (index + 1));
  NodeId::Bytes b{};
  const auto hi = splitmix64(state), lo = splitmix64(state);
  for (int i = 0; i < 8; ++i) {
    b[i] = static_cast<std::uint8_t>(hi >> (56 - 8 * i));
    b[8 + i] = static_cast<std::uint8_t>(lo >> (56 - 8 * i));
  }
  b[6] = static_cast<std::uint8_t>((b[6] & 0x0f) | 0x40);
  b[8] = static_cast<std::uint8_t>((b[8] & 0x3f) | 0x80);
  return NodeId(b);
}

ScenarioConfig parse_scenario(std::string_view text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError({std::string("malformed JSON: ") + e.what()});
  }
  std::vector<std::string> errors;
  ScenarioConfig c;
  try {
    c.seed = doc.value("seed", std::uint64_t{0});
    c.tick_interval_ms = doc.value("tick_interval_ms", std::uint64_t{1000});
    c.time_acceleration = doc.value("time_acceleration", 1.0);
    c.sonic_speed_mps = doc.value("sonic_speed_mps", kDefaultSonicSpeedMps);
    if (doc.contains("start_time_ms")) c.start_time_ms = doc.at("start_time_ms").get<std::uint64_t>();

    auto node_from = [&](const json& n, std::size_t index) {
      std::optional<NodeId> id;
      if (n.contains("node_id")) {
        id = NodeId::try_parse(n.at("node_id").get<std::string>());
        if (!id) errors.push_back("node " + std::to_string(index + 1) + ": malformed node_id");
      }
      return PipeSpec{
          .node_id = id.value_or(derived_node_id(c.seed, index)),
          .pipe_height_cm = n.at("pipe_height_cm").get<double>(),
          .set_limit_flow_lpm = n.at("set_limit_flow_lpm").get<double>(),
          .fill_threshold_cm = n.at("fill_threshold_cm").get<double>(),
          .gas_threshold_ppm = n.at("gas_threshold_ppm").get<double>(),
          .location = GeoPoint{n.at("lat_deg").get<double>(), n.at("lon_deg").get<double>()},
      };
    };

    if (doc.contains("nodes")) {
      const auto& nodes = doc.at("nodes");
      for (std::size_t i = 0; i < nodes.size(); ++i) c.nodes.push_back(node_from(nodes[i], i));
    } else if (doc.contains("node_count")) {
      // Grid layout: copies of node_template spaced spacing_deg apart.
      const auto count = doc.at("node_count").get<std::size_t>();
      const auto& tmpl = doc.at("node_template");
      const double spacing = doc.value("spacing_deg", 0.005);
      const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
      for (std::size_t i = 0; i < count; ++i) {
        auto n = tmpl;
        n.erase("node_id");
        n["lat_deg"] = tmpl.at("lat_deg").get<double>() + spacing * static_cast<double>(i / cols);
        n["lon_deg"] = tmpl.at("lon_deg").get<double>() + spacing * static_cast<double>(i % cols);
        c.nodes.push_back(node_from(n, i));
      }
    }

    if (doc.contains("events")) {
      for (const auto& e : doc.at("events")) {
        const auto kind_name = e.at("kind").get<std::string>();
        const auto kind = parse_event_kind(kind_name);
        if (!kind) {
          errors.push_back("unknown event kind " + kind_name);
          continue;
        }
        c.events.push_back(ScenarioEvent{*kind, e.at("node").get<std::size_t>(),
                                         e.at("start_tick").get<std::uint64_t>(),
                                         e.value("duration_ticks", std::uint64_t{1}),
                                         e.value("magnitude", 1.0)});
      }
    }
  } catch (const json::exception& e) {
    errors.push_back(std::string("schema: ") + e.what());
  }
  if (!errors.empty()) throw ConfigError(errors);
  return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

Fleet::Fleet(ScenarioConfig config) : config_(std::move(config)) {}
Fleet::Fleet(Fleet&& o) noexcept
    : config_(std::move(o.config_)),
      start_time_ms_(o.start_time_ms_),
      next_tick_(o.next_tick_),
      nodes_(std::move(o.nodes_)),
      scheduled_(std::move(o.scheduled_)),
      scheduled_pos_(o.scheduled_pos_) {
  std::lock_guard lk(o.inject_mu_);
  injected_ = std::move(o.injected_);
}
Fleet& Fleet::operator=(Fleet&& o) noexcept {
  if (this == &o) return *this;
  std::scoped_lock lk(inject_mu_, o.inject_mu_);
  config_ = std::move(o.config_);
  start_time_ms_ = o.start_time_ms_;
  next_tick_ = o.next_tick_;
  nodes_ = std::move(o.nodes_);
  scheduled_ = std::move(o.scheduled_);
  scheduled_pos_ = o.scheduled_pos_;
  injected_ = std::move(o.injected_);
  return *this;
}
Fleet::~Fleet() = default;

std::size_t Fleet::size() const { return nodes_.size(); }

NodeState Fleet::state(std::size_t i) const {
  const auto& n = nodes_.at(i);
  return NodeState{n.last_flow, n.fill, n.last_gas, config_.nodes[i].location, n.seq};
}

std::vector<NodeState> Fleet::states() const {
  std::vector<NodeState> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) out.push_back(state(i));
  return out;
}

Fleet build_fleet(const ScenarioConfig& config) {
  if (auto v = validate_scenario(config); !v.empty()) throw ConfigError(std::move(v));
  Fleet f(config);
  f.start_time_ms_ = config.start_time_ms.value_or(wall_clock_ms());
  std::uint64_t seed_state = config.seed;
  for (const auto& spec : config.nodes) {
    Fleet::Node n;
    n.base_flow = kBaseFlowFactor * spec.set_limit_flow_lpm;
    n.base_fill = kBaseFillFactor * spec.pipe_height_cm;
    n.base_gas = kBaseGasFactor * spec.gas_threshold_ppm;
    n.flow = n.last_flow = n.base_flow;
    n.fill = n.base_fill;
    n.last_gas = n.base_gas;
    n.rng.seed(splitmix64(seed_state));
    f.nodes_.push_back(std::move(n));
  }
  f.scheduled_ = config.events;
  std::stable_sort(f.scheduled_.begin(), f.scheduled_.end(),
                   [](const auto& a, const auto& b) { return a.start_tick < b.start_tick; });
  return f;
}

void Fleet::start_event(const ScenarioEvent& e, std::uint64_t tick) {
  auto& n = nodes_[e.node - 1];
  const auto& spec = config_.nodes[e.node - 1];
  switch (e.kind) {
    case EventKind::RainSurge:
    case EventKind::GasSpike: {
      auto active = e;
      active.start_tick = tick;
      n.transients.push_back(active);
      break;
    }
    case EventKind::ClogOnset: {
      const double severity = std::min(e.magnitude, 1.0);
      const double fill_target = n.base_fill + severity * (kClogFillFactor * spec.pipe_height_cm - n.base_fill);
      const double flow_target =
          n.base_flow - severity * (n.base_flow - kClogFlowFactor * spec.set_limit_flow_lpm);
      n.ramp = Ramp{false, n.fill, fill_target, n.flow, flow_target, tick, e.duration_ticks};
      n.clogged = true;
      break;
    }
    case EventKind::ClogClear:
      if (!n.clogged) break;
      n.ramp = Ramp{true, n.fill, n.base_fill, n.flow, n.base_flow, tick, e.duration_ticks};
      n.clogged = false;
      break;
  }
}

std::vector<TelemetryReading> step(Fleet& f, std::uint64_t tick) {
  if (tick != f.next_tick_)
    throw std::logic_error("step: expected tick " + std::to_string(f.next_tick_) + ", got " +
                           std::to_string(tick));
  {
    std::vector<ScenarioEvent> injected;
    {
      std::lock_guard lk(f.inject_mu_);
      injected.swap(f.injected_);
    }
    while (f.scheduled_pos_ < f.scheduled_.size() && f.scheduled_[f.scheduled_pos_].start_tick <= tick)
      f.start_event(f.scheduled_[f.scheduled_pos_++], tick);
    for (const auto& e : injected) f.start_event(e, tick);
  }

  std::vector<TelemetryReading> out;
  out.reserve(f.nodes_.size());
  for (std::size_t i = 0; i < f.nodes_.size(); ++i) {
    auto& n = f.nodes_[i];
    const auto& spec = f.config_.nodes[i];

    std::erase_if(n.transients, [&](const ScenarioEvent& e) { return tick >= e.start_tick + e.duration_ticks; });

    if (n.ramp) {
      const auto& r = *n.ramp;
      const auto k = std::min<std::uint64_t>(tick - r.start_tick + 1, r.duration);
      const double x = static_cast<double>(k) / static_cast<double>(r.duration);
      n.fill = r.from_fill + (r.to_fill - r.from_fill) * x;
      // Recovery replays the onset curve backwards in time.
      n.flow = r.recovering ? r.from_flow + (r.to_flow - r.from_flow) * normalized_decay(1.0 - x)
                            : r.to_flow + (r.from_flow - r.to_flow) * normalized_decay(x);
      if (k == r.duration) {
        n.fill = r.to_fill;
        n.flow = r.to_flow;
        n.ramp.reset();
      }
    }
    n.fill = std::clamp(n.fill, 0.0, spec.pipe_height_cm);
    n.flow = std::max(n.flow, 0.0);

    double rain = 1.0, spike = 0.0;
    for (const auto& e : n.transients) {
      if (e.kind == EventKind::RainSurge) rain *= 1.0 + e.magnitude;
      if (e.kind == EventKind::GasSpike) spike += e.magnitude;
    }
    const double flow_noise = kNoiseFraction * n.base_flow * symmetric_unit(n.rng);
    const double gas_noise = kNoiseFraction * n.base_gas * symmetric_unit(n.rng);
    n.last_flow = std::max(0.0, n.flow * rain + flow_noise);
    n.last_gas = std::max(0.0, n.base_gas + spike + gas_noise);
    ++n.seq;

    out.push_back(TelemetryReading{
        .node_id = spec.node_id,
        .seq = n.seq,
        .timestamp_ms = f.start_time_ms_ + (tick - 1) * f.config_.tick_interval_ms,
        .flow_lpm = n.last_flow,
        .echo_time_us = distance_to_echo(spec.pipe_height_cm - n.fill, f.config_.sonic_speed_mps),
        .gas_ppm = n.last_gas,
        .position = spec.location,
    });
  }
  ++f.next_tick_;
  return out;
}

void inject_event(Fleet& f, ScenarioEvent event) {
  if (event.node < 1 || event.node > f.nodes_.size())
    throw std::out_of_range("inject_event: unknown node " + std::to_string(event.node));
  if (event.duration_ticks < 1 || !std::isfinite(event.magnitude) || event.magnitude <= 0.0)
    throw std::invalid_argument("inject_event: duration ≥ 1 and magnitude > 0 required");
  std::lock_guard lk(f.inject_mu_);
  f.injected_.push_back(event);
}

RunStats run(Fleet& fleet, std::uint64_t n_ticks, const Sink& sink, RunOptions options) {
  RunStats stats;
  const auto period = std::chrono::duration<double, std::milli>(
      static_cast<double>(fleet.config().tick_interval_ms) / fleet.config().time_acceleration);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t i = 0; i < n_ticks; ++i) {
    if (options.pacing && i > 0)
      std::this_thread::sleep_until(t0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                             period * static_cast<double>(i)));
    const auto readings = step(fleet, fleet.next_tick());
    ++stats.ticks_executed;
    for (const auto& r : readings) {
      // A reading counts as emitted once handed to the sink, even if the sink then fails.
      ++stats.readings_emitted;
      try {
        sink(r);
      } catch (const std::exception& e) {
        stats.error = e.what();
        stats.final_states = fleet.states();
        return stats;
      }
    }
  }
  stats.final_states = fleet.states();
  return stats;
}

}  // namespace wlds::sim
