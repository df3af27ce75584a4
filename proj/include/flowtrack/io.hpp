#pragma once

#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "flowtrack/graph.hpp"
#include "flowtrack/mpn.hpp"
#include "flowtrack/neural.hpp"
#include "flowtrack/scenario.hpp"
#include "flowtrack/ssp.hpp"
#include "flowtrack/training.hpp"

namespace flowtrack {

using Json = nlohmann::json;

inline constexpr int kScenarioFormatVersion = 1;
inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr int kTracksFormatVersion = 1;

// Graph construction overrides; unset fields fall back to the scenario defaults.
struct GraphOptions {
  std::optional<int> max_gap;
  std::optional<double> gate_speed;
};

DetectionGraph build_graph_for(const Scenario& scenario, const GraphOptions& opts);

// Everything `train` reads from its config file.
struct TrainingSetup {
  TrainConfig train;
  GraphOptions graph;
  int min_track_length = 3;  // edge-belief post-processing
  bool reweight_positives = true;
  int checkpoint_every = 50;  // epochs (passes for edge-belief); 0 disables
};

// Parsers reject unknown fields and wrong types with a ConfigError naming the
// dotted field path, then run the module's own validation.
Json to_json(const ScenarioConfig& c);
ScenarioConfig scenario_config_from_json(const Json& j);

Json to_json(const MpnConfig& c);
MpnConfig mpn_config_from_json(const Json& j, const std::string& where = "mpn");

Json to_json(const TrainingSetup& s);
TrainingSetup training_setup_from_json(const Json& j);

// Self-describing scenario document (config, ground truth, detections).
Json to_json(const Scenario& s);
// Throws IncompatibleError for an unknown format_version.
Scenario scenario_from_json(const Json& j);

struct Checkpoint {
  std::string tracker = "ssp-gnn";  // or "edge-belief"
  TrainingSetup setup;
  int reid_dim = 0;
  ParamStore params;
  std::string config_hash;  // sha256 of the serialized setup
};

Json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const Json& j);

struct TracksDocument {
  std::string tracker;
  std::string scenario_sha256;
  PathSet paths;
};

Json to_json(const TracksDocument& t);
TracksDocument tracks_from_json(const Json& j);

// Throws ConfigError when `j` is not an object or has a key outside `allowed`.
void check_keys(const Json& j, const std::string& where, std::initializer_list<std::string_view> allowed);

// Sets a value at a dotted path ("reid.strength_kl_nats"), creating objects.
void set_dotted(Json& j, std::string_view dotted, const Json& value);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Missing or unreadable files and malformed JSON raise ConfigError.
std::string read_text(const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);

// Canonical text form: sorted keys, two-space indent, trailing newline.
std::string dump_json(const Json& j);

// Writes to a sibling temporary file, then renames over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace flowtrack
