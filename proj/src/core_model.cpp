#include "wlds/core_model.hpp"

#include <cmath>

namespace wlds {

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw std::invalid_argument(std::string(name) + " must be finite");
}

}  // namespace

NodeId::NodeId(const Bytes& bytes) : bytes_(bytes) {
  bool nil = true;
  for (auto b : bytes_) nil = nil && b == 0;
  if (nil) throw std::invalid_argument("node id must not be the nil UUID");
}

std::optional<NodeId> NodeId::try_parse(std::string_view text) {
  Bytes out{};
  std::size_t n = 0;
  const bool dashed = text.size() == 36;
  if (!dashed && text.size() != 32) return std::nullopt;
  for (std::size_t i = 0; i < text.size();) {
    if (dashed && (i == 8 || i == 13 || i == 18 || i == 23)) {
      if (text[i] != '-') return std::nullopt;
      ++i;
      continue;
    }
    if (i + 1 >= text.size()) return std::nullopt;
    int hi = hex_value(text[i]), lo = hex_value(text[i + 1]);
    if (hi < 0 || lo < 0 || n >= out.size()) return std::nullopt;
    out[n++] = static_cast<std::uint8_t>(hi << 4 | lo);
    i += 2;
  }
  if (n != out.size()) return std::nullopt;
  bool nil = true;
  for (auto b : out) nil = nil && b == 0;
  if (nil) return std::nullopt;
  return NodeId(out);
}

NodeId NodeId::parse(std::string_view text) {
  auto id = try_parse(text);
  if (!id) throw std::invalid_argument("malformed node id: " + std::string(text));
  return *id;
}

std::string NodeId::to_string() const {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(36);
  for (std::size_t i = 0; i < bytes_.size(); ++i) {
    if (i == 4 || i == 6 || i == 8 || i == 10) s.push_back('-');
    s.push_back(kHex[bytes_[i] >> 4]);
    s.push_back(kHex[bytes_[i] & 0x0f]);
  }
  return s;
}

bool GeoPoint::valid(double lat_deg, double lon_deg) {
  return std::isfinite(lat_deg) && std::isfinite(lon_deg) && lat_deg >= -90.0 && lat_deg <= 90.0 &&
         lon_deg >= -180.0 && lon_deg <= 180.0;
}

GeoPoint GeoPoint::make(double lat_deg, double lon_deg) {
  if (!valid(lat_deg, lon_deg)) throw std::invalid_argument("position out of range");
  return GeoPoint{lat_deg, lon_deg};
}

std::vector<std::string> CauseSet::names() const {
  std::vector<std::string> out;
  if (contains(Cause::ClogRule)) out.emplace_back(to_string(Cause::ClogRule));
  if (contains(Cause::GasThreshold)) out.emplace_back(to_string(Cause::GasThreshold));
  return out;
}

std::string_view to_string(AlertState s) { return s == AlertState::Warning ? "Warning" : "Normal"; }

std::string_view to_string(Cause c) { return c == Cause::ClogRule ? "ClogRule" : "GasThreshold"; }

double echo_to_distance(double echo_time_us, double sonic_speed_mps) {
  require_finite(echo_time_us, "echo_time_us");
  require_finite(sonic_speed_mps, "sonic_speed_mps");
  if (echo_time_us < 0.0) throw std::invalid_argument("echo_time_us must be non-negative");
  if (sonic_speed_mps <= 0.0) throw std::invalid_argument("sonic_speed_mps must be positive");
  const double seconds = echo_time_us / 1e6;
  return 0.5 * seconds * sonic_speed_mps * 100.0;
}

double distance_to_echo(double distance_cm, double sonic_speed_mps) {
  require_finite(distance_cm, "distance_cm");
  require_finite(sonic_speed_mps, "sonic_speed_mps");
  if (distance_cm < 0.0) throw std::invalid_argument("distance_cm must be non-negative");
  if (sonic_speed_mps <= 0.0) throw std::invalid_argument("sonic_speed_mps must be positive");
  return 2.0 * (distance_cm / 100.0) / sonic_speed_mps * 1e6;
}

DerivedDepths clog_level(double pipe_height_cm, double distance_cm) {
  require_finite(pipe_height_cm, "pipe_height_cm");
  require_finite(distance_cm, "distance_cm");
  if (pipe_height_cm <= 0.0) throw std::invalid_argument("pipe_height_cm must be positive");
  if (distance_cm < 0.0) throw std::invalid_argument("distance_cm must be non-negative");
  if (distance_cm > pipe_height_cm) return DerivedDepths{distance_cm, 0.0, true};
  return DerivedDepths{distance_cm, pipe_height_cm - distance_cm, false};
}

Assessment assess(const TelemetryReading& reading, const PipeSpec& spec, double sonic_speed_mps) {
  if (reading.node_id != spec.node_id)
    throw std::invalid_argument("reading node " + reading.node_id.to_string() +
                                " does not match spec node " + spec.node_id.to_string());
  Assessment a;
  a.depths = clog_level(spec.pipe_height_cm, echo_to_distance(reading.echo_time_us, sonic_speed_mps));
  auto& ev = a.evaluation;
  ev.garbage_level_cm = a.depths.garbage_level_cm;
  if (reading.flow_lpm < spec.set_limit_flow_lpm && a.depths.garbage_level_cm > spec.fill_threshold_cm)
    ev.causes.insert(Cause::ClogRule);
  if (reading.gas_ppm > spec.gas_threshold_ppm) ev.causes.insert(Cause::GasThreshold);
  ev.state = ev.causes.empty() ? AlertState::Normal : AlertState::Warning;
  return a;
}

AlertEvaluation evaluate_warning(const TelemetryReading& reading, const PipeSpec& spec,
                                 double sonic_speed_mps) {
  return assess(reading, spec, sonic_speed_mps).evaluation;
}

std::vector<std::string> validate_pipe_spec(const PipeSpec& spec) {
  std::vector<std::string> v;
  auto positive = [&](double x, const char* what) {
    if (!std::isfinite(x)) {
      v.push_back(std::string("non-finite ") + what);
      return false;
    }
    if (x <= 0.0) {
      v.push_back(std::string("non-positive ") + what);
      return false;
    }
    return true;
  };
  const bool ph_ok = positive(spec.pipe_height_cm, "pipe_height");
  positive(spec.set_limit_flow_lpm, "setlimit");
  positive(spec.gas_threshold_ppm, "gas_threshold");
  if (positive(spec.fill_threshold_cm, "fill_threshold") && ph_ok &&
      spec.fill_threshold_cm >= spec.pipe_height_cm)
    v.emplace_back("fill_threshold ≥ pipe_height");
  if (!GeoPoint::valid(spec.location.lat_deg, spec.location.lon_deg))
    v.emplace_back("location out of range");
  return v;
}

}  // namespace wlds
