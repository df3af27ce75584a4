#pragma once

#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowtrack/io.hpp"

namespace flowtrack::cli {

namespace fs = std::filesystem;

const char* tool_version();

// 0 success, 2 config error, 3 numeric failure, 4 incompatible artifacts, 1 other.
int exit_code_for(const std::exception& e);

// Relative output paths resolve against $FLOWTRACK_RUN_ROOT when it is set.
fs::path resolve_output(const fs::path& out);

// Files are written into a staging directory next to `out` and the directory
// is renamed into place by commit(), which also writes manifest.json.
class OutputDir {
 public:
  OutputDir(fs::path out, bool force);
  ~OutputDir();
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  void write(const std::string& name, const std::string& contents);
  void add_input(const fs::path& path);
  // `config` is the fully resolved configuration of the command.
  void commit(const std::string& command, const Json& config, std::uint64_t seed);

  const fs::path& path() const { return out_; }

 private:
  fs::path out_;
  fs::path staging_;
  bool force_ = false;
  bool committed_ = false;
  Json inputs_ = Json::array();
  std::map<std::string, std::string> outputs_;  // name -> sha256
  std::chrono::steady_clock::time_point start_;
};

Json read_manifest(const fs::path& dir);

struct GenerateOptions {
  fs::path config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};
// Returns the scenario files written, relative to the output directory.
std::vector<std::string> cmd_generate(const GenerateOptions& opts);

struct TrainOptions {
  std::vector<fs::path> scenarios;
  std::optional<fs::path> config;
  fs::path out;
  std::string tracker = "ssp-gnn";
  std::optional<int> stage2_max_epochs;
  std::optional<std::uint64_t> seed;
  bool force = false;
};
void cmd_train(const TrainOptions& opts);

struct TrackOptions {
  fs::path checkpoint;
  fs::path scenario;
  fs::path out;
  bool svg = false;
  bool dump_flow = false;
  bool force = false;
};
void cmd_track(const TrackOptions& opts);

struct EvalOptions {
  fs::path tracks;
  fs::path scenario;
  fs::path out;
  std::string run_id = "run";
  std::optional<double> siap_radius;
  double gospa_c = 10.0;
  double gospa_p = 2.0;
  bool force = false;
};
void cmd_eval(const EvalOptions& opts);

struct SweepOptions {
  fs::path config;
  fs::path out;
  int jobs = 1;
  std::optional<int> only_cell;  // worker mode: run one cell and stop
  fs::path self_exe;             // spawned per cell when jobs > 1
};
void cmd_sweep(const SweepOptions& opts);

struct DumpGraphOptions {
  fs::path scenario;
  std::optional<fs::path> config;  // training config supplying graph overrides
  fs::path out;
  bool force = false;
};
void cmd_dump_graph(const DumpGraphOptions& opts);

// Fixed-precision CSV field.
std::string csv_number(double v);

// SVG of detections (clutter grey, target-originated black) and predicted tracks.
std::string tracks_svg(const Scenario& scenario, const PathSet& tracks);

}  // namespace flowtrack::cli
