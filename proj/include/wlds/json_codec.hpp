#pragma once

// JSON shapes shared by the store dump, the HTTP API and the CLI.

#include <json.hpp>

#include "wlds/core_model.hpp"

namespace wlds {

nlohmann::json reading_to_json(const TelemetryReading& r);
/// Throws std::invalid_argument (or nlohmann::json::exception) on bad input.
TelemetryReading reading_from_json(const nlohmann::json& j);

nlohmann::json spec_to_json(const PipeSpec& s);
PipeSpec spec_from_json(const nlohmann::json& j);

nlohmann::json depths_to_json(const DerivedDepths& d);
nlohmann::json evaluation_to_json(const AlertEvaluation& e);
nlohmann::json causes_to_json(CauseSet c);
CauseSet causes_from_json(const nlohmann::json& j);

}  // namespace wlds
