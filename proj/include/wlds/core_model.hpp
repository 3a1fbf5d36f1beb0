#pragma once

// Domain types and the drainage formulas. Everything here is pure.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wlds {

inline constexpr double kDefaultSonicSpeedMps = 343.0;

class NodeId {
 public:
  using Bytes = std::array<std::uint8_t, 16>;

  /// Throws std::invalid_argument on the nil UUID.
  explicit NodeId(const Bytes& bytes);

  /// Accepts canonical 8-4-4-4-12 hex form or 32 bare hex digits.
  static NodeId parse(std::string_view text);
  static std::optional<NodeId> try_parse(std::string_view text);

  const Bytes& bytes() const { return bytes_; }
  std::string to_string() const;

  friend bool operator==(const NodeId&, const NodeId&) = default;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;

 private:
  Bytes bytes_;
};

struct GeoPoint {
  double lat_deg = 0.0;
  double lon_deg = 0.0;

  /// Range-checked construction; throws std::invalid_argument.
  static GeoPoint make(double lat_deg, double lon_deg);
  static bool valid(double lat_deg, double lon_deg);

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

struct PipeSpec {
  NodeId node_id;
  double pipe_height_cm;
  double set_limit_flow_lpm;
  double fill_threshold_cm;
  double gas_threshold_ppm;
  GeoPoint location;

  friend bool operator==(const PipeSpec&, const PipeSpec&) = default;
};

struct TelemetryReading {
  NodeId node_id;
  std::uint32_t seq = 0;
  std::uint64_t timestamp_ms = 0;
  double flow_lpm = 0.0;
  double echo_time_us = 0.0;
  double gas_ppm = 0.0;
  GeoPoint position;

  friend bool operator==(const TelemetryReading&, const TelemetryReading&) = default;
};

struct DerivedDepths {
  double distance_cm = 0.0;
  double garbage_level_cm = 0.0;
  bool anomalous = false;

  friend bool operator==(const DerivedDepths&, const DerivedDepths&) = default;
};

enum class AlertState : std::uint8_t { Normal = 0, Warning = 1 };

/// Bit set of warning causes.
enum class Cause : std::uint8_t { ClogRule = 1u << 0, GasThreshold = 1u << 1 };

class CauseSet {
 public:
  constexpr CauseSet() = default;
  constexpr explicit CauseSet(std::uint8_t bits) : bits_(bits & 0x03u) {}

  constexpr void insert(Cause c) { bits_ |= static_cast<std::uint8_t>(c); }
  constexpr bool contains(Cause c) const { return (bits_ & static_cast<std::uint8_t>(c)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t bits() const { return bits_; }

  /// Stable names, e.g. {"ClogRule", "GasThreshold"}.
  std::vector<std::string> names() const;

  friend constexpr bool operator==(CauseSet, CauseSet) = default;

 private:
  std::uint8_t bits_ = 0;
};

struct AlertEvaluation {
  AlertState state = AlertState::Normal;
  CauseSet causes;
  double garbage_level_cm = 0.0;

  friend bool operator==(const AlertEvaluation&, const AlertEvaluation&) = default;
};

std::string_view to_string(AlertState s);
std::string_view to_string(Cause c);

/// Ultrasonic round trip to one-way distance: 0.5 * T * C, in centimetres.
/// Throws std::invalid_argument on negative, non-finite or non-positive speed.
double echo_to_distance(double echo_time_us, double sonic_speed_mps);

/// Inverse of echo_to_distance; used by the simulator.
double distance_to_echo(double distance_cm, double sonic_speed_mps);

/// G = PH - D. A distance beyond the pipe floor clamps G to 0 and flags the
/// sample as anomalous.
DerivedDepths clog_level(double pipe_height_cm, double distance_cm);

/// Throws std::invalid_argument when the reading belongs to another node.
AlertEvaluation evaluate_warning(const TelemetryReading& reading, const PipeSpec& spec,
                                 double sonic_speed_mps = kDefaultSonicSpeedMps);

/// Both derived depths and the evaluation in one pass.
struct Assessment {
  DerivedDepths depths;
  AlertEvaluation evaluation;
};
Assessment assess(const TelemetryReading& reading, const PipeSpec& spec,
                  double sonic_speed_mps = kDefaultSonicSpeedMps);

/// Empty result means the spec is well formed.
std::vector<std::string> validate_pipe_spec(const PipeSpec& spec);

}  // namespace wlds

template <>
struct std::hash<wlds::NodeId> {
  std::size_t operator()(const wlds::NodeId& id) const noexcept {
    std::size_t h = 1469598103934665603ull;
    for (auto b : id.bytes()) h = (h ^ b) * 1099511628211ull;
    return h;
  }
};
