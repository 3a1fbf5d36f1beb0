#pragma once

// Deterministic fleet of simulated drainage nodes.
//
// Each node keeps an internal truth (flow, fill G, gas) that scripted events
// push around; every tick it reports one reading with bounded uniform noise on
// flow and gas and an echo time synthesized from G by inverting the ultrasonic
// range equation.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "wlds/core_model.hpp"

namespace wlds::sim {

enum class EventKind { RainSurge, ClogOnset, ClogClear, GasSpike };

std::string_view to_string(EventKind k);
std::optional<EventKind> parse_event_kind(std::string_view s);

/// `node` is the 1-based position of the target in ScenarioConfig::nodes.
/// Event windows cover ticks [start_tick, start_tick + duration_ticks).
struct ScenarioEvent {
  EventKind kind;
  std::size_t node;
  std::uint64_t start_tick;
  std::uint64_t duration_ticks;
  double magnitude;
};

struct ScenarioConfig {
  std::uint64_t seed = 0;
  std::vector<PipeSpec> nodes;
  std::uint64_t tick_interval_ms = 1000;
  double time_acceleration = 1.0;
  /// Timestamp of tick 1. Unset means wall clock at build_fleet.
  std::optional<std::uint64_t> start_time_ms;
  double sonic_speed_mps = kDefaultSonicSpeedMps;
  std::vector<ScenarioEvent> events;
};

class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

std::vector<std::string> validate_scenario(const ScenarioConfig& config);

/// Parses the scenario JSON document (schema in docs/SCENARIO.md).
ScenarioConfig parse_scenario(std::string_view json_text);
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Deterministic v4-shaped UUID for node `index` (0-based) of a seeded fleet.
NodeId derived_node_id(std::uint64_t seed, std::size_t index);

struct NodeState {
  double flow_lpm;
  double fill_cm;
  double gas_ppm;
  GeoPoint position;
  std::uint32_t seq;

  friend bool operator==(const NodeState&, const NodeState&) = default;
};

class Fleet {
 public:
  Fleet(const Fleet&) = delete;
  Fleet& operator=(const Fleet&) = delete;
  Fleet(Fleet&&) noexcept;
  Fleet& operator=(Fleet&&) noexcept;
  ~Fleet();

  const ScenarioConfig& config() const { return config_; }
  std::size_t size() const;
  const PipeSpec& spec(std::size_t index) const { return config_.nodes.at(index); }
  NodeState state(std::size_t index) const;
  std::vector<NodeState> states() const;
  std::uint64_t start_time_ms() const { return start_time_ms_; }
  /// The tick the next call to step() must use (ticks start at 1).
  std::uint64_t next_tick() const { return next_tick_; }

  friend Fleet build_fleet(const ScenarioConfig& config);
  friend std::vector<TelemetryReading> step(Fleet& fleet, std::uint64_t tick);
  friend void inject_event(Fleet& fleet, ScenarioEvent event);

 private:
  struct Ramp;
  struct Node;

  explicit Fleet(ScenarioConfig config);
  void start_event(const ScenarioEvent& e, std::uint64_t tick);

  ScenarioConfig config_;
  std::uint64_t start_time_ms_ = 0;
  std::uint64_t next_tick_ = 1;
  std::vector<Node> nodes_;
  std::vector<ScenarioEvent> scheduled_;  // from config, sorted by start_tick
  std::size_t scheduled_pos_ = 0;

  std::mutex inject_mu_;
  std::vector<ScenarioEvent> injected_;
};

/// Throws ConfigError listing every violation.
Fleet build_fleet(const ScenarioConfig& config);

/// One reading per node for `tick`, which must equal fleet.next_tick().
std::vector<TelemetryReading> step(Fleet& fleet, std::uint64_t tick);

/// Queues `event` to start at the next tick boundary. Safe to call from a
/// thread other than the driver. Throws std::out_of_range for unknown nodes.
void inject_event(Fleet& fleet, ScenarioEvent event);

/// Receives readings; throwing aborts the run.
using Sink = std::function<void(const TelemetryReading&)>;

struct RunOptions {
  bool pacing = true;
};

struct RunStats {
  std::uint64_t ticks_executed = 0;
  std::uint64_t readings_emitted = 0;
  std::vector<NodeState> final_states;
  std::optional<std::string> error;
};

RunStats run(Fleet& fleet, std::uint64_t n_ticks, const Sink& sink, RunOptions options = {});

}  // namespace wlds::sim
