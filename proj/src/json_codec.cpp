#include "wlds/json_codec.hpp"

namespace wlds {

using nlohmann::json;

json reading_to_json(const TelemetryReading& r) {
  return json{{"node_id", r.node_id.to_string()},
              {"seq", r.seq},
              {"timestamp_ms", r.timestamp_ms},
              {"flow_lpm", r.flow_lpm},
              {"echo_time_us", r.echo_time_us},
              {"gas_ppm", r.gas_ppm},
              {"lat_deg", r.position.lat_deg},
              {"lon_deg", r.position.lon_deg}};
}

TelemetryReading reading_from_json(const json& j) {
  TelemetryReading r{
      .node_id = NodeId::parse(j.at("node_id").get<std::string>()),
      .seq = j.at("seq").get<std::uint32_t>(),
      .timestamp_ms = j.at("timestamp_ms").get<std::uint64_t>(),
      .flow_lpm = j.at("flow_lpm").get<double>(),
      .echo_time_us = j.at("echo_time_us").get<double>(),
      .gas_ppm = j.at("gas_ppm").get<double>(),
      .position = GeoPoint::make(j.at("lat_deg").get<double>(), j.at("lon_deg").get<double>()),
  };
  return r;
}

json spec_to_json(const PipeSpec& s) {
  return json{{"node_id", s.node_id.to_string()},
              {"pipe_height_cm", s.pipe_height_cm},
              {"set_limit_flow_lpm", s.set_limit_flow_lpm},
              {"fill_threshold_cm", s.fill_threshold_cm},
              {"gas_threshold_ppm", s.gas_threshold_ppm},
              {"lat_deg", s.location.lat_deg},
              {"lon_deg", s.location.lon_deg}};
}

PipeSpec spec_from_json(const json& j) {
  return PipeSpec{
      .node_id = NodeId::parse(j.at("node_id").get<std::string>()),
      .pipe_height_cm = j.at("pipe_height_cm").get<double>(),
      .set_limit_flow_lpm = j.at("set_limit_flow_lpm").get<double>(),
      .fill_threshold_cm = j.at("fill_threshold_cm").get<double>(),
      .gas_threshold_ppm = j.at("gas_threshold_ppm").get<double>(),
      .location = GeoPoint{j.at("lat_deg").get<double>(), j.at("lon_deg").get<double>()},
  };
}

json depths_to_json(const DerivedDepths& d) {
  return json{{"distance_cm", d.distance_cm},
              {"garbage_level_cm", d.garbage_level_cm},
              {"anomalous", d.anomalous}};
}

json causes_to_json(CauseSet c) { return c.names(); }

CauseSet causes_from_json(const json& j) {
  CauseSet c;
  for (const auto& name : j) {
    const auto s = name.get<std::string>();
    if (s == to_string(Cause::ClogRule)) c.insert(Cause::ClogRule);
    else if (s == to_string(Cause::GasThreshold)) c.insert(Cause::GasThreshold);
    else throw std::invalid_argument("unknown cause " + s);
  }
  return c;
}

json evaluation_to_json(const AlertEvaluation& e) {
  return json{{"state", std::string(to_string(e.state))},
              {"causes", causes_to_json(e.causes)},
              {"garbage_level_cm", e.garbage_level_cm}};
}

}  // namespace wlds
