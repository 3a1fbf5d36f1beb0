// wlds: run and operate the water-logging detection service.
//
//   wlds serve --config FILE
//   wlds simulate --scenario FILE --target HOST:PORT [--time-accel N] [--key-hex HEX | --config FILE]
//   wlds query latest --data-dir DIR --node UUID
//   wlds query range  --data-dir DIR --node UUID --from MS --to MS
//   wlds dump --data-dir DIR --node UUID
//   wlds replay --dump FILE --target HOST:PORT [--key-hex HEX | --config FILE]
//   wlds frame encode [--key-hex HEX] [--test] < reading.json
//   wlds frame decode HEX [--key-hex HEX]
//   wlds offices validate FILE
//
// Exit status: 0 success, 1 runtime error, 2 usage error.

#include <signal.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "wlds/alerting.hpp"
#include "wlds/ingestd.hpp"
#include "wlds/json_codec.hpp"
#include "wlds/node_sim.hpp"
#include "wlds/service.hpp"
#include "wlds/store.hpp"
#include "wlds/wire.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

bool g_json_errors = false;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int fail(int code, const std::string& message) {
  if (g_json_errors)
    std::cerr << json{{"error", message}, {"kind", code == 2 ? "usage" : "runtime"}, {"exit_code", code}}.dump()
              << '\n';
  else
    std::cerr << "wlds: " << message << '\n';
  return code;
}

std::string slurp(std::istream& in) { return {std::istreambuf_iterator<char>(in), {}}; }

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return slurp(in);
}

struct KeyArgs {
  std::string key_hex;
  std::string config;
};

// Keys come from --key-hex, else from the service config, else all zeros.
std::pair<wlds::wire::Key, std::unordered_map<wlds::NodeId, wlds::wire::Key>> resolve_keys(const KeyArgs& k) {
  if (!k.key_hex.empty()) return {wlds::wire::key_from_hex(k.key_hex), {}};
  if (!k.config.empty()) {
    const auto c = wlds::load_service_config(k.config);
    return {c.fleet_key, c.node_keys};
  }
  return {wlds::wire::Key{}, {}};
}

wlds::NodeId node_arg(const std::string& text) {
  auto id = wlds::NodeId::try_parse(text);
  if (!id) throw UsageError("--node: not a UUID: " + text);
  return *id;
}

int cmd_serve(const std::string& config_path) {
  auto config = wlds::load_service_config(config_path);
  wlds::apply_env_overrides(config);

  // Block the shutdown signals before any thread starts so they all inherit
  // the mask and only sigwait below sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  signal(SIGPIPE, SIG_IGN);

  wlds::Service service(std::move(config));
  service.start();
  std::cout << json{{"event", "listening"},
                    {"ingest_port", service.ingest_port()},
                    {"http_port", service.http_port()}}
                   .dump()
            << std::endl;

  int sig = 0;
  sigwait(&set, &sig);
  service.stop();
  return 0;
}

int cmd_simulate(const std::string& scenario_path, const std::string& target, std::optional<double> accel,
                 std::optional<std::uint64_t> ticks, const KeyArgs& keys) {
  auto scenario = wlds::sim::load_scenario(scenario_path);
  if (accel) scenario.time_acceleration = *accel;
  const auto host = wlds::ingest::parse_host_port(target);
  auto [fleet_key, node_keys] = resolve_keys(keys);
  signal(SIGPIPE, SIG_IGN);

  auto fleet = wlds::sim::build_fleet(scenario);
  wlds::ingest::Uplink uplink(host, fleet_key, node_keys);
  const auto stats = wlds::sim::run(fleet, ticks.value_or(UINT64_MAX),
                                    [&](const wlds::TelemetryReading& r) { uplink(r); });
  uplink.close();

  const auto& u = uplink.stats();
  std::cout << json{{"ticks", stats.ticks_executed},
                    {"readings", stats.readings_emitted},
                    {"accepted", u.accepted},
                    {"duplicate", u.duplicate},
                    {"stale", u.stale},
                    {"invalid", u.invalid}}
                   .dump()
            << '\n';
  if (stats.error) return fail(1, *stats.error);
  return 0;
}

int cmd_query_latest(const std::string& dir, const std::string& node) {
  const auto id = node_arg(node);
  wlds::store::Store store(dir);
  const auto r = store.latest(id);
  if (!r) return fail(1, "no records for node " + id.to_string());
  std::cout << wlds::store::record_to_json(*r).dump() << '\n';
  return 0;
}

int cmd_query_range(const std::string& dir, const std::string& node, std::uint64_t from, std::uint64_t to) {
  const auto id = node_arg(node);
  if (from >= to) throw UsageError("--from must be less than --to");
  wlds::store::Store store(dir);
  for (const auto& r : store.range({id, from, to})) std::cout << wlds::store::record_to_json(r).dump() << '\n';
  return 0;
}

int cmd_dump(const std::string& dir, const std::string& node) {
  const auto id = node_arg(node);
  wlds::store::Store store(dir);
  wlds::store::dump_jsonl(store, id, std::cout);
  return 0;
}

int cmd_replay(const std::string& dump_path, const std::string& target, const KeyArgs& keys) {
  std::ifstream in(dump_path);
  if (!in) throw std::runtime_error("cannot open " + dump_path);
  const auto host = wlds::ingest::parse_host_port(target);
  auto [fleet_key, node_keys] = resolve_keys(keys);
  signal(SIGPIPE, SIG_IGN);

  wlds::ingest::Uplink uplink(host, fleet_key, node_keys);
  std::string line;
  std::uint64_t lineno = 0, sent = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::optional<wlds::TelemetryReading> r;
    try {
      const auto j = json::parse(line);
      r = wlds::reading_from_json(j.contains("reading") ? j.at("reading") : j);
    } catch (const std::exception& e) {
      throw std::runtime_error(dump_path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    uplink(*r);
    ++sent;
  }
  uplink.close();
  const auto& u = uplink.stats();
  std::cout << json{{"sent", sent},
                    {"accepted", u.accepted},
                    {"duplicate", u.duplicate},
                    {"stale", u.stale},
                    {"invalid", u.invalid}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_frame_encode(const std::string& input, const std::string& key_hex, bool test_flag) {
  const auto text = input.empty() || input == "-" ? slurp(std::cin) : read_file(input);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("reading JSON: ") + e.what());
  }
  const auto key = key_hex.empty() ? wlds::wire::Key{} : wlds::wire::key_from_hex(key_hex);
  const auto frame =
      wlds::wire::encode_frame(wlds::reading_from_json(j), key, test_flag ? wlds::wire::kFlagTest : 0);
  std::cout << wlds::wire::to_hex(frame) << '\n';
  return 0;
}

int cmd_frame_decode(std::string hex, const std::string& key_hex) {
  if (hex.empty() || hex == "-") hex = slurp(std::cin);
  std::erase_if(hex, [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
  std::vector<std::uint8_t> bytes;
  try {
    bytes = wlds::wire::from_hex(hex);
  } catch (const std::exception& e) {
    throw UsageError(std::string("frame hex: ") + e.what());
  }
  const auto key = key_hex.empty() ? wlds::wire::Key{} : wlds::wire::key_from_hex(key_hex);
  const auto result = wlds::wire::decode_frame(bytes, key);
  if (const auto* rej = std::get_if<wlds::wire::Rejection>(&result)) {
    std::string msg = "frame rejected: " + std::string(wlds::wire::to_string(rej->error));
    if (!rej->detail.empty()) msg += " (" + rej->detail + ")";
    return fail(1, msg);
  }
  std::cout << wlds::reading_to_json(std::get<wlds::wire::Decoded>(result).reading).dump(2) << '\n';
  return 0;
}

int cmd_offices_validate(const std::string& path) {
  const auto violations = wlds::alerting::validate_offices(read_file(path));
  if (violations.empty()) {
    std::cout << "ok\n";
    return 0;
  }
  if (g_json_errors) {
    std::cerr << json{{"error", "invalid office registry"}, {"violations", violations}, {"exit_code", 1}}.dump()
              << '\n';
  } else {
    for (const auto& v : violations) std::cerr << path << ": " << v << '\n';
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Water-logging detection system"};
  app.require_subcommand(1);
  app.add_flag("--json", g_json_errors, "Print errors on stderr as JSON");

  std::string config, scenario, target, data_dir, node, dump_file, hex, input, key_hex, offices_file;
  std::optional<double> accel;
  std::optional<std::uint64_t> ticks;
  std::uint64_t from = 0, to = 0;
  bool test_flag = false;
  KeyArgs keys;

  auto* serve = app.add_subcommand("serve", "Run ingestion, storage, alerting and the HTTP gateway");
  serve->add_option("--config", config, "Service config file")->required();

  auto* simulate = app.add_subcommand("simulate", "Drive a simulated fleet against an ingest endpoint");
  simulate->add_option("--scenario", scenario, "Scenario file")->required();
  simulate->add_option("--target", target, "Ingest endpoint HOST:PORT")->required();
  simulate->add_option("--time-accel", accel, "Override time_acceleration")->check(CLI::PositiveNumber);
  simulate->add_option("--ticks", ticks, "Stop after this many ticks");
  auto* sim_key = simulate->add_option("--key-hex", keys.key_hex, "Fleet key, 64 hex digits");
  simulate->add_option("--config", keys.config, "Take keys from a service config")->excludes(sim_key);

  auto* query = app.add_subcommand("query", "Read stored records");
  query->require_subcommand(1);
  auto* latest = query->add_subcommand("latest", "Most recent record of a node");
  latest->add_option("--data-dir", data_dir)->required();
  latest->add_option("--node", node)->required();
  auto* range = query->add_subcommand("range", "Records with from <= timestamp < to");
  range->add_option("--data-dir", data_dir)->required();
  range->add_option("--node", node)->required();
  range->add_option("--from", from)->required();
  range->add_option("--to", to)->required();

  auto* dump = app.add_subcommand("dump", "Export a node's records as JSON lines");
  dump->add_option("--data-dir", data_dir)->required();
  dump->add_option("--node", node)->required();

  auto* replay = app.add_subcommand("replay", "Re-ingest a JSON-lines dump");
  replay->add_option("--dump", dump_file)->required();
  replay->add_option("--target", target)->required();
  auto* rep_key = replay->add_option("--key-hex", keys.key_hex);
  replay->add_option("--config", keys.config)->excludes(rep_key);

  auto* frame = app.add_subcommand("frame", "Encode or decode a telemetry frame");
  frame->require_subcommand(1);
  auto* encode = frame->add_subcommand("encode", "Reading JSON (file or stdin) to frame hex");
  encode->add_option("input", input, "Reading JSON file, '-' or omitted for stdin");
  encode->add_option("--key-hex", key_hex);
  encode->add_flag("--test", test_flag, "Set the test-traffic flag");
  auto* decode = frame->add_subcommand("decode", "Frame hex to reading JSON");
  decode->add_option("hex", hex, "Frame hex, '-' or omitted for stdin");
  decode->add_option("--key-hex", key_hex);

  auto* offices = app.add_subcommand("offices", "Maintenance office registry");
  offices->require_subcommand(1);
  auto* validate = offices->add_subcommand("validate", "Check an office registry file");
  validate->add_option("file", offices_file)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(2, e.what());
  }

  try {
    if (*serve) return cmd_serve(config);
    if (*simulate) return cmd_simulate(scenario, target, accel, ticks, keys);
    if (*latest) return cmd_query_latest(data_dir, node);
    if (*range) return cmd_query_range(data_dir, node, from, to);
    if (*dump) return cmd_dump(data_dir, node);
    if (*replay) return cmd_replay(dump_file, target, keys);
    if (*encode) return cmd_frame_encode(input, key_hex, test_flag);
    if (*decode) return cmd_frame_decode(hex, key_hex);
    if (*validate) return cmd_offices_validate(offices_file);
  } catch (const UsageError& e) {
    return fail(2, e.what());
  } catch (const wlds::sim::ConfigError& e) {
    std::string msg = "invalid scenario:";
    for (const auto& v : e.violations()) msg += " " + v + ";";
    return fail(1, msg);
  } catch (const std::exception& e) {
    return fail(1, e.what());
  }
  return fail(2, "no command");
}
