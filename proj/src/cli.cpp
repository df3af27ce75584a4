#include "flowtrack/cli.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "flowtrack/edge_belief.hpp"
#include "flowtrack/errors.hpp"
#include "flowtrack/metrics.hpp"

extern char** environ;

#ifndef FLOWTRACK_VERSION
#define FLOWTRACK_VERSION "0.0.0"
#endif

namespace flowtrack::cli {
namespace {

std::string pid_suffix() { return ".tmp-" + std::to_string(::getpid()); }

Json make_manifest(const std::string& command, const Json& config, std::uint64_t seed, const Json& inputs,
                   const std::map<std::string, std::string>& outputs, double seconds) {
  Json outs = Json::array();
  for (const auto& [name, digest] : outputs) outs.push_back({{"path", name}, {"sha256", digest}});
  return {{"command", command},
          {"tool_version", tool_version()},
          {"config", config},
          {"seed", seed},
          {"inputs", inputs},
          {"outputs", outs},
          {"wall_clock_seconds", seconds}};
}

Json input_entry(const fs::path& path) {
  return {{"path", fs::absolute(path).lexically_normal().string()}, {"sha256", sha256_file(path)}};
}

Scenario load_scenario(const fs::path& path) { return scenario_from_json(read_json(path)); }

void check_tracker(const std::string& tracker) {
  if (tracker != "ssp-gnn" && tracker != "edge-belief") {
    throw ConfigError("--tracker: expected ssp-gnn or edge-belief, got '" + tracker + "'");
  }
}

Checkpoint make_checkpoint(const std::string& tracker, const TrainingSetup& setup, int reid_dim,
                           const ParamStore& params) {
  Checkpoint c;
  c.tracker = tracker;
  c.setup = setup;
  c.reid_dim = reid_dim;
  c.params = params;
  c.config_hash = sha256_hex(dump_json(to_json(setup)));
  return c;
}

std::string checkpoint_name(int step) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoints/step_%04d.json", step);
  return buf;
}

MpnConfig readout_config(const MpnConfig& mpn, const std::string& tracker) {
  MpnConfig out = mpn;
  out.readout = tracker == "edge-belief" ? ReadoutMode::Belief : ReadoutMode::Cost;
  return out;
}

PathSet run_tracker(const std::string& tracker, const DetectionGraph& g, const ParamStore& params,
                    const TrainingSetup& setup) {
  if (tracker == "edge-belief") {
    return infer_edge_belief(g, params, setup.train.mpn, setup.min_track_length);
  }
  return track_with_model(g, params, setup.train.mpn, setup.train.c_en, setup.train.c_ex);
}

std::string value_text(const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ? c : '_');
  return out;
}

// Cartesian product of a {"key": [values...]} object, in key order.
std::vector<std::vector<std::pair<std::string, Json>>> expand_grid(const Json& grid, const std::string& where) {
  std::vector<std::vector<std::pair<std::string, Json>>> cells{{}};
  if (grid.is_null()) return cells;
  if (!grid.is_object()) throw ConfigError(where + ": expected an object of value lists");
  for (auto it = grid.begin(); it != grid.end(); ++it) {
    if (!it->is_array() || it->empty()) {
      throw ConfigError(where + "." + it.key() + ": expected a nonempty array of values");
    }
    std::vector<std::vector<std::pair<std::string, Json>>> next;
    for (const auto& cell : cells) {
      for (const auto& v : *it) {
        auto c = cell;
        c.emplace_back(it.key(), v);
        next.push_back(std::move(c));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

std::string arc_kind_name(TrackingGraph::ArcKind k) {
  switch (k) {
    case TrackingGraph::ArcKind::Twin: return "twin";
    case TrackingGraph::ArcKind::Entrance: return "entrance";
    case TrackingGraph::ArcKind::Exit: return "exit";
    case TrackingGraph::ArcKind::Transition: return "transition";
  }
  return "?";
}

std::string node_det(const TrackingGraph& g, int node) {
  const int d = TrackingGraph::det_index_of(node);
  return d < 0 ? std::string() : std::to_string(g.det_id(d));
}

// ---- sweep ---------------------------------------------------------------

struct SweepGrid {
  Json scenario = Json::object();
  Json train = Json::object();
  Json grid;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int train_scenarios = 1;
  int test_scenarios = 5;
  std::vector<std::string> trackers{"ssp-gnn"};
  std::vector<std::vector<std::pair<std::string, Json>>> cells;
};

SweepGrid parse_sweep(const Json& j) {
  check_keys(j, "sweep", {"scenario", "train", "grid", "seeds", "train_scenarios", "test_scenarios", "trackers"});
  SweepGrid s;
  if (j.contains("scenario")) s.scenario = j["scenario"];
  if (j.contains("train")) s.train = j["train"];
  if (j.contains("grid")) s.grid = j["grid"];
  if (j.contains("seeds")) {
    const Json& seeds = j["seeds"];
    if (!seeds.is_array() || seeds.empty()) throw ConfigError("sweep.seeds: expected a nonempty array");
    s.seeds.clear();
    for (const auto& v : seeds) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ConfigError("sweep.seeds: expected non-negative integers");
      }
      s.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  auto read_count = [&](const char* key, int& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer() || j[key].get<int>() < 1) {
      throw ConfigError(std::string("sweep.") + key + ": expected an integer >= 1");
    }
    out = j[key].get<int>();
  };
  read_count("train_scenarios", s.train_scenarios);
  read_count("test_scenarios", s.test_scenarios);
  if (j.contains("trackers")) {
    const Json& t = j["trackers"];
    if (!t.is_array() || t.empty()) throw ConfigError("sweep.trackers: expected a nonempty array");
    s.trackers.clear();
    for (const auto& v : t) {
      if (!v.is_string()) throw ConfigError("sweep.trackers: expected strings");
      check_tracker(v.get<std::string>());
      s.trackers.push_back(v.get<std::string>());
    }
  }
  s.cells = expand_grid(s.grid, "sweep.grid");
  for (const auto& cell : s.cells) {
    for (const auto& [key, value] : cell) {
      if (key.rfind("scenario.", 0) != 0 && key.rfind("train.", 0) != 0) {
        throw ConfigError("sweep.grid." + key + ": keys must start with scenario. or train.");
      }
    }
  }
  return s;
}

Json cell_config(const SweepGrid& s, std::size_t k) {
  Json cell{{"scenario", s.scenario}, {"train", s.train}, {"overrides", Json::object()}};
  for (const auto& [key, value] : s.cells[k]) {
    set_dotted(cell, key, value);
    cell["overrides"][key] = value;
  }
  cell["seeds"] = s.seeds;
  cell["train_scenarios"] = s.train_scenarios;
  cell["test_scenarios"] = s.test_scenarios;
  cell["trackers"] = s.trackers;
  return cell;
}

std::string cell_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cell_%04zu", k);
  return buf;
}

bool cell_complete(const fs::path& out, std::size_t k, const Json& config) {
  const fs::path manifest = out / cell_name(k) / "manifest.json";
  if (!fs::exists(manifest)) return false;
  if (read_json(manifest).value("config", Json()) != config) {
    throw ConfigError(cell_name(k) + " in " + out.string() + " was produced by a different grid");
  }
  return true;
}

void run_cell(const SweepGrid& s, std::size_t k, const fs::path& out) {
  const Json cell = cell_config(s, k);
  ScenarioConfig sc = scenario_config_from_json(cell["scenario"]);
  const TrainingSetup setup = training_setup_from_json(cell["train"]);
  OutputDir dir(out / cell_name(k), true);
  std::ostringstream csv;
  csv << metrics_csv_header() << "\n";
  for (std::uint64_t seed : s.seeds) {
    // Training and held-out scenarios are drawn from disjoint seed ranges.
    std::vector<TrainingExample> examples;
    for (int t = 0; t < s.train_scenarios; ++t) {
      sc.seed = seed * 1000 + static_cast<std::uint64_t>(t);
      const Scenario scen = make_scenario(sc);
      DetectionGraph g = build_graph_for(scen, setup.graph);
      PathSet gt = extract_gt_paths(scen, g);
      examples.push_back({std::move(g), std::move(gt)});
    }
    std::vector<Scenario> tests;
    for (int t = 0; t < s.test_scenarios; ++t) {
      sc.seed = seed * 1000 + 500 + static_cast<std::uint64_t>(t);
      tests.push_back(make_scenario(sc));
    }
    for (const auto& tracker : s.trackers) {
      TrainConfig tc = setup.train;
      tc.seed = seed;
      EdgeBeliefOptions eb;
      eb.reweight_positives = setup.reweight_positives;
      const ParamStore params =
          tracker == "edge-belief" ? train_edge_belief(examples, tc, eb).params : train(examples, tc).params;
      for (std::size_t t = 0; t < tests.size(); ++t) {
        const DetectionGraph g = build_graph_for(tests[t], setup.graph);
        const PathSet pred = run_tracker(tracker, g, params, setup);
        const MetricsKey key{cell_name(k), "seed" + std::to_string(seed) + "_test" + std::to_string(t), tracker,
                             seed};
        csv << metrics_csv_row(key, mota(pred, tests[t]), gospa(pred, tests[t].truth, tests[t]),
                               siap(pred, tests[t].truth, tests[t], default_siap_radius(tests[t].config)))
            << "\n";
      }
    }
  }
  dir.write("metrics.csv", csv.str());
  dir.write("cell.json", dump_json(cell));
  dir.commit("sweep-cell", cell, 0);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  return out;
}

struct Moments {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

// Test scenarios are averaged within a seed, then mean and std are taken over seeds.
std::string summarize(const SweepGrid& s, const fs::path& out) {
  static const std::vector<std::string> kMetrics{"mota", "fp_rate", "fn_rate", "ids_rate", "gospa",
                                                 "siap_completeness", "siap_spuriousness",
                                                 "siap_positional_error"};
  std::ostringstream os;
  os << "cell";
  std::vector<std::string> keys;
  if (!s.cells.empty()) {
    for (const auto& [key, value] : s.cells.front()) keys.push_back(key);
  }
  for (const auto& k : keys) os << "," << k;
  os << ",tracker,seeds";
  for (const auto& m : kMetrics) os << "," << m << "_mean," << m << "_std";
  os << ",mota_text\n";
  for (std::size_t k = 0; k < s.cells.size(); ++k) {
    std::istringstream in(read_text(out / cell_name(k) / "metrics.csv"));
    std::string line;
    std::getline(in, line);
    const auto header = split_csv(line);
    auto col = [&](const std::string& name) {
      for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == name) return c;
      }
      throw IncompatibleError(cell_name(k) + "/metrics.csv lacks column " + name);
    };
    // tracker -> seed -> metric -> values
    std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv(line);
      if (f.size() != header.size()) throw IncompatibleError(cell_name(k) + "/metrics.csv has a ragged row");
      for (const auto& m : kMetrics) rows[f[col("tracker")]][f[col("seed")]][m].push_back(std::stod(f[col(m)]));
    }
    for (const auto& tracker : s.trackers) {
      const auto& per_seed = rows[tracker];
      os << cell_name(k);
      for (const auto& [key, value] : s.cells[k]) os << "," << value_text(value);
      os << "," << tracker << "," << per_seed.size();
      std::map<std::string, Moments> ms;
      for (const auto& m : kMetrics) {
        std::vector<double> seed_means;
        for (const auto& [seed, metrics] : per_seed) seed_means.push_back(moments(metrics.at(m)).mean);
        ms[m] = moments(seed_means);
        os << "," << csv_number(ms[m].mean) << "," << csv_number(ms[m].std);
      }
      char text[64];
      std::snprintf(text, sizeof text, "%.3f ± %.3f", ms["mota"].mean, ms["mota"].std);
      os << "," << text << "\n";
    }
  }
  return os.str();
}

void spawn_cells(const SweepOptions& opts, const fs::path& config, const fs::path& out,
                 const std::vector<std::size_t>& pending) {
  std::map<pid_t, std::size_t> running;
  std::vector<std::pair<std::size_t, int>> failures;
  auto reap_one = [&]() {
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, 0);
    if (pid < 0) throw std::runtime_error("sweep: waitpid failed");
    auto it = running.find(pid);
    if (it == running.end()) return;
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 1;
    if (code != 0) failures.emplace_back(it->second, code);
    running.erase(it);
  };
  for (std::size_t k : pending) {
    while (static_cast<int>(running.size()) >= opts.jobs) reap_one();
    std::vector<std::string> args{opts.self_exe.string(), "sweep", "--config", config.string(),
                                  "--out", out.string(), "--cell", std::to_string(k), "--jobs", "1"};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    pid_t pid = 0;
    if (::posix_spawn(&pid, args[0].c_str(), nullptr, nullptr, argv.data(), environ) != 0) {
      throw std::runtime_error("sweep: cannot start worker " + args[0]);
    }
    running.emplace(pid, k);
  }
  while (!running.empty()) reap_one();
  if (!failures.empty()) {
    const auto [cell, code] = failures.front();
    const std::string what = "sweep: " + cell_name(cell) + " failed with exit code " + std::to_string(code);
    if (code == 2) throw ConfigError(what);
    if (code == 3) throw NumericError(what);
    if (code == 4) throw IncompatibleError(what);
    throw std::runtime_error(what);
  }
}

}  // namespace

const char* tool_version() { return FLOWTRACK_VERSION; }

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IncompatibleError*>(&e)) return 4;
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  return 1;
}

fs::path resolve_output(const fs::path& out) {
  if (out.empty()) throw ConfigError("--out: missing");
  if (out.is_absolute()) return out;
  if (const char* root = std::getenv("FLOWTRACK_RUN_ROOT"); root && *root) return fs::path(root) / out;
  return out;
}

std::string csv_number(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

// ---- OutputDir -----------------------------------------------------------

OutputDir::OutputDir(fs::path out, bool force)
    : out_(resolve_output(out)), force_(force), start_(std::chrono::steady_clock::now()) {
  if (fs::exists(out_) && !force_ && !(fs::is_directory(out_) && fs::is_empty(out_))) {
    throw ConfigError("output directory " + out_.string() + " already exists (pass --force to replace it)");
  }
  staging_ = out_;
  staging_ += pid_suffix();
  fs::remove_all(staging_);
  fs::create_directories(staging_);
}

OutputDir::~OutputDir() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
}

void OutputDir::write(const std::string& name, const std::string& contents) {
  if (name == "manifest.json") throw std::logic_error("manifest.json is written by commit()");
  write_atomic(staging_ / name, contents);
  outputs_[name] = sha256_hex(contents);
}

void OutputDir::add_input(const fs::path& path) { inputs_.push_back(input_entry(path)); }

void OutputDir::commit(const std::string& command, const Json& config, std::uint64_t seed) {
  if (committed_) throw std::logic_error("output directory committed twice");
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  write_atomic(staging_ / "manifest.json",
               dump_json(make_manifest(command, config, seed, inputs_, outputs_, seconds)));
  if (fs::exists(out_)) fs::remove_all(out_);
  if (out_.has_parent_path()) fs::create_directories(out_.parent_path());
  fs::rename(staging_, out_);
  committed_ = true;
}

Json read_manifest(const fs::path& dir) { return read_json(dir / "manifest.json"); }

// ---- generate ------------------------------------------------------------

std::vector<std::string> cmd_generate(const GenerateOptions& opts) {
  const Json cfg = read_json(opts.config);
  check_keys(cfg, "generate", {"scenario", "count", "grid"});
  const Json base = cfg.value("scenario", Json::object());
  int count = 1;
  if (cfg.contains("count")) {
    if (!cfg["count"].is_number_integer() || cfg["count"].get<int>() < 1) {
      throw ConfigError("generate.count: expected an integer >= 1");
    }
    count = cfg["count"].get<int>();
  }
  const ScenarioConfig base_config = scenario_config_from_json(base);
  const std::uint64_t base_seed = opts.seed.value_or(base_config.seed);
  const auto families = expand_grid(cfg.value("grid", Json()), "generate.grid");

  // Parse every family before writing anything.
  std::vector<std::pair<std::string, ScenarioConfig>> configs;
  for (const auto& family : families) {
    Json j = base;
    std::string label;
    for (const auto& [key, value] : family) {
      set_dotted(j, key, value);
      label += (label.empty() ? "" : "_") + sanitize(key + "-" + value_text(value));
    }
    configs.emplace_back(label.empty() ? "scenario" : label, scenario_config_from_json(j));
  }

  OutputDir dir(opts.out, opts.force);
  dir.add_input(opts.config);
  std::vector<std::string> files;
  Json family_list = Json::array();
  for (auto& [label, config] : configs) {
    Json names = Json::array();
    for (int i = 0; i < count; ++i) {
      config.seed = base_seed + static_cast<std::uint64_t>(i);
      char name[256];
      std::snprintf(name, sizeof name, "%s_%03d.json", label.c_str(), i);
      dir.write(name, dump_json(to_json(make_scenario(config))));
      files.push_back(name);
      names.push_back(name);
    }
    config.seed = base_seed;
    family_list.push_back({{"label", label}, {"config", to_json(config)}, {"files", names}});
  }
  dir.commit("generate", {{"count", count}, {"families", family_list}}, base_seed);
  return files;
}

// ---- train ---------------------------------------------------------------

void cmd_train(const TrainOptions& opts) {
  check_tracker(opts.tracker);
  if (opts.scenarios.empty()) throw ConfigError("--scenarios: at least one scenario file is required");
  TrainingSetup setup = opts.config ? training_setup_from_json(read_json(*opts.config)) : TrainingSetup{};
  if (opts.seed) setup.train.seed = *opts.seed;
  if (opts.stage2_max_epochs) setup.train.stage2_max_epochs = *opts.stage2_max_epochs;
  setup.train.validate();

  std::vector<TrainingExample> examples;
  int reid_dim = -1;
  for (const auto& path : opts.scenarios) {
    const Scenario s = load_scenario(path);
    DetectionGraph g = build_graph_for(s, setup.graph);
    const int dim = s.config.reid.total_dim();
    if (reid_dim >= 0 && dim != reid_dim) {
      throw IncompatibleError(path.string() + " has ReID width " + std::to_string(dim) + ", earlier scenarios " +
                              std::to_string(reid_dim));
    }
    reid_dim = dim;
    PathSet gt = extract_gt_paths(s, g);
    examples.push_back({std::move(g), std::move(gt)});
  }

  OutputDir dir(opts.out, opts.force);
  for (const auto& path : opts.scenarios) dir.add_input(path);
  if (opts.config) dir.add_input(*opts.config);
  const Json config{{"tracker", opts.tracker}, {"setup", to_json(setup)}};
  dir.write("config.json", dump_json(config));

  auto save = [&](const std::string& name, const ParamStore& params) {
    dir.write(name, dump_json(to_json(make_checkpoint(opts.tracker, setup, reid_dim, params))));
  };
  const int every = setup.checkpoint_every;

  if (opts.tracker == "edge-belief") {
    std::ostringstream bce;
    bce << "pass,loss\n";
    EdgeBeliefOptions eb;
    eb.reweight_positives = setup.reweight_positives;
    eb.on_step = [&](int step, double loss, const ParamStore& params) {
      bce << step << "," << csv_number(loss) << "\n";
      if (every > 0 && step % every == 0) save(checkpoint_name(step), params);
    };
    try {
      const EdgeBeliefResult r = train_edge_belief(examples, setup.train, eb);
      dir.write("loss_bce.csv", bce.str());
      save("checkpoint.json", r.params);
      dir.write("summary.json", dump_json({{"tracker", opts.tracker},
                                           {"passes", r.loss_history.size()},
                                           {"final_loss", r.loss_history.empty() ? 0.0 : r.loss_history.back()}}));
    } catch (const TrainingAborted& e) {
      dir.write("loss_bce.csv", bce.str());
      save("checkpoint_aborted.json", e.snapshot());
      dir.commit("train", config, setup.train.seed);
      throw;
    }
    dir.commit("train", config, setup.train.seed);
    return;
  }

  std::ostringstream s1, s2;
  s1 << "iteration,loss\n";
  s2 << "epoch,mean_loss,std_loss,mean_l1,mean_l2,updates\n";
  TrainHooks hooks;
  hooks.on_stage1 = [&](int it, double loss) { s1 << it << "," << csv_number(loss) << "\n"; };
  hooks.on_epoch = [&](const EpochRecord& r, const ParamStore& params) {
    s2 << r.epoch << "," << csv_number(r.mean_loss) << "," << csv_number(r.std_loss) << ","
       << csv_number(r.mean_l1) << "," << csv_number(r.mean_l2) << "," << r.updates << "\n";
    if (every > 0 && r.epoch % every == 0) save(checkpoint_name(r.epoch), params);
  };
  try {
    const TrainResult r = train(examples, setup.train, hooks);
    dir.write("loss_stage1.csv", s1.str());
    dir.write("loss_stage2.csv", s2.str());
    save("checkpoint.json", r.params);
    dir.write("summary.json",
              dump_json({{"tracker", opts.tracker},
                         {"converged", r.converged},
                         {"epochs", r.history.size()},
                         {"final_loss", r.history.empty() ? 0.0 : r.history.back().mean_loss},
                         {"solver_calls", r.solver_calls},
                         {"positive_cost_solutions", r.positive_cost_solutions}}));
  } catch (const TrainingAborted& e) {
    dir.write("loss_stage1.csv", s1.str());
    dir.write("loss_stage2.csv", s2.str());
    save("checkpoint_aborted.json", e.snapshot());
    dir.commit("train", config, setup.train.seed);
    throw;
  }
  dir.commit("train", config, setup.train.seed);
}

// ---- track ---------------------------------------------------------------

void cmd_track(const TrackOptions& opts) {
  const Checkpoint ck = checkpoint_from_json(read_json(opts.checkpoint));
  const std::string scenario_text = read_text(opts.scenario);
  Json scenario_json;
  try {
    scenario_json = Json::parse(scenario_text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(opts.scenario.string() + ": " + e.what());
  }
  const Scenario scenario = scenario_from_json(scenario_json);
  if (scenario.config.reid.total_dim() != ck.reid_dim) {
    throw IncompatibleError("checkpoint expects ReID width " + std::to_string(ck.reid_dim) + ", scenario has " +
                            std::to_string(scenario.config.reid.total_dim()));
  }
  if (opts.dump_flow && ck.tracker != "ssp-gnn") {
    throw ConfigError("--dump-flow needs an ssp-gnn checkpoint");
  }
  const DetectionGraph g = build_graph_for(scenario, ck.setup.graph);

  OutputDir dir(opts.out, opts.force);
  dir.add_input(opts.checkpoint);
  dir.add_input(opts.scenario);
  PathSet paths;
  if (ck.tracker == "ssp-gnn") {
    const MpnOutput out = mpn_forward(g, ck.params, readout_config(ck.setup.train.mpn, ck.tracker));
    const TrackingGraph trk =
        transfer_costs(out.scores, build_tracking_graph(g, ck.setup.train.c_en, ck.setup.train.c_ex));
    SolveStats stats;
    paths = track_by_ssp(trk, &stats, opts.dump_flow);
    if (opts.dump_flow) {
      std::ostringstream os;
      os << "arc,kind,from_det_id,to_det_id,cost,flow,reduced_cost\n";
      for (const auto& rec : stats.flow) {
        const auto& arc = trk.arcs()[rec.arc];
        os << rec.arc << "," << arc_kind_name(arc.kind) << "," << node_det(trk, arc.from) << ","
           << node_det(trk, arc.to) << "," << csv_number(arc.cost) << "," << rec.flow << ","
           << csv_number(rec.reduced_cost) << "\n";
      }
      dir.write("flow.csv", os.str());
    }
  } else {
    paths = run_tracker(ck.tracker, g, ck.params, ck.setup);
  }
  dir.write("tracks.json", dump_json(to_json(TracksDocument{ck.tracker, sha256_hex(scenario_text), paths})));
  if (opts.svg) dir.write("tracks.svg", tracks_svg(scenario, paths));
  dir.commit("track",
             {{"tracker", ck.tracker}, {"checkpoint_config_hash", ck.config_hash}, {"svg", opts.svg},
              {"dump_flow", opts.dump_flow}},
             scenario.config.seed);
}

// ---- eval ----------------------------------------------------------------

void cmd_eval(const EvalOptions& opts) {
  const TracksDocument doc = tracks_from_json(read_json(opts.tracks));
  const std::string scenario_text = read_text(opts.scenario);
  if (!doc.scenario_sha256.empty() && doc.scenario_sha256 != sha256_hex(scenario_text)) {
    throw IncompatibleError("tracks were computed on a different scenario file");
  }
  Json scenario_json;
  try {
    scenario_json = Json::parse(scenario_text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(opts.scenario.string() + ": " + e.what());
  }
  const Scenario scenario = scenario_from_json(scenario_json);
  const double radius = opts.siap_radius.value_or(default_siap_radius(scenario.config));
  if (!(radius > 0.0)) throw ConfigError("--siap-radius: must be > 0");
  if (!(opts.gospa_c > 0.0)) throw ConfigError("--gospa-c: must be > 0");
  if (!(opts.gospa_p >= 1.0)) throw ConfigError("--gospa-p: must be >= 1");

  std::string row;
  try {
    const MetricsKey key{opts.run_id, opts.scenario.stem().string(), doc.tracker, scenario.config.seed};
    row = metrics_csv_row(key, mota(doc.paths, scenario),
                          gospa(doc.paths, scenario.truth, scenario, opts.gospa_c, opts.gospa_p),
                          siap(doc.paths, scenario.truth, scenario, radius));
  } catch (const std::invalid_argument& e) {
    throw IncompatibleError(std::string("tracks do not fit the scenario: ") + e.what());
  }
  OutputDir dir(opts.out, opts.force);
  dir.add_input(opts.tracks);
  dir.add_input(opts.scenario);
  dir.write("metrics.csv", metrics_csv_header() + "\n" + row + "\n");
  dir.commit("eval",
             {{"run_id", opts.run_id}, {"siap_radius", radius}, {"gospa_c", opts.gospa_c},
              {"gospa_p", opts.gospa_p}},
             scenario.config.seed);
}

// ---- sweep ---------------------------------------------------------------

void cmd_sweep(const SweepOptions& opts) {
  if (opts.jobs < 1) throw ConfigError("--jobs: must be >= 1");
  const Json raw = read_json(opts.config);
  const SweepGrid grid = parse_sweep(raw);
  // Fail on a bad cell before any compute starts.
  for (std::size_t k = 0; k < grid.cells.size(); ++k) {
    const Json cell = cell_config(grid, k);
    scenario_config_from_json(cell["scenario"]);
    training_setup_from_json(cell["train"]);
  }
  const fs::path out = fs::absolute(resolve_output(opts.out));
  const fs::path config = fs::absolute(opts.config);
  fs::create_directories(out);

  if (opts.only_cell) {
    const int k = *opts.only_cell;
    if (k < 0 || static_cast<std::size_t>(k) >= grid.cells.size()) {
      throw ConfigError("--cell: out of range (grid has " + std::to_string(grid.cells.size()) + " cells)");
    }
    if (!cell_complete(out, k, cell_config(grid, k))) run_cell(grid, k, out);
    return;
  }

  const auto start = std::chrono::steady_clock::now();
  const fs::path grid_file = out / "grid.json";
  if (fs::exists(grid_file) && read_json(grid_file) != raw) {
    throw ConfigError(out.string() + " holds a sweep over a different grid");
  }
  write_atomic(grid_file, dump_json(raw));
  for (const auto& entry : fs::directory_iterator(out)) {
    if (entry.path().filename().string().find(".tmp-") != std::string::npos) fs::remove_all(entry.path());
  }

  std::vector<std::size_t> pending;
  for (std::size_t k = 0; k < grid.cells.size(); ++k) {
    if (!cell_complete(out, k, cell_config(grid, k))) pending.push_back(k);
  }
  if (opts.jobs > 1 && !opts.self_exe.empty() && pending.size() > 1) {
    spawn_cells(opts, config, out, pending);
  } else {
    for (std::size_t k : pending) run_cell(grid, k, out);
  }

  const std::string summary = summarize(grid, out);
  write_atomic(out / "summary.csv", summary);
  std::map<std::string, std::string> outputs{{"grid.json", sha256_file(grid_file)},
                                             {"summary.csv", sha256_hex(summary)}};
  for (std::size_t k = 0; k < grid.cells.size(); ++k) {
    const std::string name = cell_name(k) + "/metrics.csv";
    outputs[name] = sha256_file(out / name);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_atomic(out / "manifest.json",
               dump_json(make_manifest("sweep", raw, 0, Json::array({input_entry(opts.config)}), outputs, seconds)));
}

// ---- dump-graph ----------------------------------------------------------

void cmd_dump_graph(const DumpGraphOptions& opts) {
  const Scenario scenario = load_scenario(opts.scenario);
  const TrainingSetup setup = opts.config ? training_setup_from_json(read_json(*opts.config)) : TrainingSetup{};
  const DetectionGraph g = build_graph_for(scenario, setup.graph);
  std::ostringstream nodes, edges;
  nodes << "node,det_id,frame,x,y\n";
  for (std::size_t n = 0; n < g.num_nodes(); ++n) {
    const auto& node = g.nodes()[n];
    nodes << n << "," << node.det_id << "," << node.frame << "," << csv_number(node.position.x()) << ","
          << csv_number(node.position.y()) << "\n";
  }
  edges << "link,from_det_id,to_det_id,frame_gap,distance\n";
  for (std::size_t e = 0; e < g.num_links(); ++e) {
    const auto& a = g.nodes()[g.links()[e].from];
    const auto& b = g.nodes()[g.links()[e].to];
    edges << e << "," << a.det_id << "," << b.det_id << "," << (b.frame - a.frame) << ","
          << csv_number((b.position - a.position).norm()) << "\n";
  }
  OutputDir dir(opts.out, opts.force);
  dir.add_input(opts.scenario);
  if (opts.config) dir.add_input(*opts.config);
  dir.write("nodes.csv", nodes.str());
  dir.write("edges.csv", edges.str());
  dir.commit("dump-graph", {{"max_gap", g.max_gap()}, {"gate_speed", g.gate_speed()}}, scenario.config.seed);
}

// ---- svg -----------------------------------------------------------------

std::string tracks_svg(const Scenario& scenario, const PathSet& tracks) {
  Eigen::Vector2d lo = scenario.config.bounds.min;
  Eigen::Vector2d hi = scenario.config.bounds.max;
  for (const auto& d : scenario.detections) {
    lo = lo.cwiseMin(d.position);
    hi = hi.cwiseMax(d.position);
  }
  const double span = std::max(hi.x() - lo.x(), hi.y() - lo.y());
  const double size = 800.0, pad = 20.0;
  const double scale = (size - 2 * pad) / span;
  auto px = [&](const Eigen::Vector2d& p) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f,%.2f", pad + (p.x() - lo.x()) * scale, size - pad - (p.y() - lo.y()) * scale);
    return std::string(buf);
  };
  std::map<DetId, const Detection*> by_id;
  for (const auto& d : scenario.detections) by_id[d.det_id] = &d;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\">\n"
     << "<rect width=\"800\" height=\"800\" fill=\"white\"/>\n";
  for (const auto& d : scenario.detections) {
    const std::string c = px(d.position);
    const auto comma = c.find(',');
    os << "<circle cx=\"" << c.substr(0, comma) << "\" cy=\"" << c.substr(comma + 1) << "\" r=\""
       << (d.source.is_target() ? "2" : "1.5") << "\" fill=\"" << (d.source.is_target() ? "black" : "#bbbbbb")
       << "\"/>\n";
  }
  static const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"};
  for (std::size_t k = 0; k < tracks.paths.size(); ++k) {
    const char* color = kPalette[k % 10];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (DetId id : tracks.paths[k].det_ids) {
      auto it = by_id.find(id);
      if (it != by_id.end()) os << px(it->second->position) << " ";
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace flowtrack::cli
