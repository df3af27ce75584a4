#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include "flowtrack/cli.hpp"
#include "flowtrack/errors.hpp"
#include "flowtrack/metrics.hpp"

using namespace flowtrack;
using namespace flowtrack::cli;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("flowtrack_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const Json kScenario = {{"num_frames", 12},
                        {"num_targets", 2},
                        {"fa_rate", 2.0},
                        {"detect_prob", 0.95},
                        {"seed", 4}};

const Json kTrain = {{"stage1_max_iters", 3},
                     {"stage2_max_epochs", 4},
                     {"num_negatives", 4},
                     {"learning_rate", 0.01},
                     {"checkpoint_every", 2},
                     {"mpn", {{"num_layers", 1}, {"hidden_dim", 8}}}};

int run_tool(const std::string& args) {
  const std::string cmd = std::string(FLOWTRACK_TOOL_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string metrics_of(const fs::path& root, const std::string& tracker) {
  write_atomic(root / "gen.json", dump_json({{"scenario", kScenario}, {"count", 2}}));
  write_atomic(root / "train.json", dump_json(kTrain));
  const auto files = cmd_generate({root / "gen.json", root / "scen", std::nullopt, false});
  REQUIRE(files.size() == 2);
  cmd_train({{root / "scen" / files[0]}, root / "train.json", root / "model", tracker, std::nullopt, 1, false});
  cmd_track({root / "model" / "checkpoint.json", root / "scen" / files[1], root / "tracks", true, tracker == "ssp-gnn",
             false});
  cmd_eval({root / "tracks" / "tracks.json", root / "scen" / files[1], root / "eval", "r1", std::nullopt, 10.0, 2.0,
            false});
  return read_text(root / "eval" / "metrics.csv");
}

}  // namespace

TEST_CASE("exit codes by error category") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(NumericError("x")) == 3);
  CHECK(exit_code_for(IncompatibleError("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("output directories refuse to clobber without force and carry a manifest") {
  const fs::path root = fresh_dir("outdir");
  {
    OutputDir d(root / "a", false);
    d.write("x.txt", "hello");
    CHECK_FALSE(fs::exists(root / "a"));  // staged until commit
    CHECK_THROWS_AS(d.write("manifest.json", "{}"), std::logic_error);
    d.commit("test", {{"k", 1}}, 42);
  }
  CHECK(read_text(root / "a" / "x.txt") == "hello");
  const Json m = read_manifest(root / "a");
  CHECK(m["command"] == "test");
  CHECK(m["seed"] == 42);
  CHECK(m["config"]["k"] == 1);
  CHECK(m["tool_version"] == tool_version());
  CHECK(m["wall_clock_seconds"].get<double>() >= 0.0);
  REQUIRE(m["outputs"].size() == 1);
  CHECK(m["outputs"][0]["path"] == "x.txt");
  CHECK(m["outputs"][0]["sha256"] == sha256_hex("hello"));

  CHECK_THROWS_AS(OutputDir(root / "a", false), ConfigError);
  {
    OutputDir d(root / "a", true);
    d.write("y.txt", "replaced");
    d.commit("test", Json::object(), 0);
  }
  CHECK_FALSE(fs::exists(root / "a" / "x.txt"));
  CHECK(fs::exists(root / "a" / "y.txt"));

  // An abandoned directory leaves nothing behind.
  { OutputDir d(root / "b", false); d.write("z.txt", "z"); }
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(root)) names.insert(e.path().filename().string());
  CHECK(names == std::set<std::string>{"a"});

  setenv("FLOWTRACK_RUN_ROOT", root.c_str(), 1);
  CHECK(resolve_output("rel") == root / "rel");
  CHECK(resolve_output("/abs") == fs::path("/abs"));
  unsetenv("FLOWTRACK_RUN_ROOT");
  CHECK(resolve_output("rel") == fs::path("rel"));
  CHECK_THROWS_AS(resolve_output(""), ConfigError);
  fs::remove_all(root);
}

TEST_CASE("generate expands grids into scenario families") {
  const fs::path root = fresh_dir("grid");
  write_atomic(root / "gen.json",
               dump_json({{"scenario", kScenario}, {"count", 2}, {"grid", {{"fa_rate", {1.0, 3.0}}}}}));
  const auto files = cmd_generate({root / "gen.json", root / "out", 100, false});
  CHECK(files.size() == 4);
  std::set<std::uint64_t> seeds;
  std::set<double> rates;
  for (const auto& f : files) {
    const Scenario s = scenario_from_json(read_json(root / "out" / f));
    seeds.insert(s.config.seed);
    rates.insert(s.config.fa_rate);
  }
  CHECK(seeds == std::set<std::uint64_t>{100, 101});
  CHECK(rates == std::set<double>{1.0, 3.0});
  CHECK(read_manifest(root / "out")["outputs"].size() == 4);

  write_atomic(root / "bad.json", dump_json({{"scenario", {{"num_frames", -1}}}}));
  CHECK_THROWS_AS(cmd_generate({root / "bad.json", root / "bad", std::nullopt, false}), ConfigError);
  CHECK_FALSE(fs::exists(root / "bad"));
  fs::remove_all(root);
}

TEST_CASE("generate, train, track and eval are deterministic end to end") {
  for (const std::string tracker : {"ssp-gnn", "edge-belief"}) {
    CAPTURE(tracker);
    const fs::path a = fresh_dir("pipe_a"), b = fresh_dir("pipe_b");
    const std::string ma = metrics_of(a, tracker);
    const std::string mb = metrics_of(b, tracker);
    CHECK(ma == mb);
    CHECK(ma.rfind(metrics_csv_header(), 0) == 0);
    CHECK(read_text(a / "model" / "checkpoint.json") == read_text(b / "model" / "checkpoint.json"));
    CHECK(read_text(a / "tracks" / "tracks.json") == read_text(b / "tracks" / "tracks.json"));
    CHECK(fs::exists(a / "tracks" / "tracks.svg"));
    if (tracker == "ssp-gnn") {
      CHECK(fs::exists(a / "model" / "checkpoints" / "step_0002.json"));
      CHECK(fs::exists(a / "model" / "loss_stage2.csv"));
      CHECK(fs::exists(a / "tracks" / "flow.csv"));
    } else {
      CHECK(fs::exists(a / "model" / "loss_bce.csv"));
    }
    const Json m = read_manifest(a / "tracks");
    CHECK(m["inputs"].size() == 2);

    // Tracks scored against a different scenario are refused.
    const auto other = read_manifest(a / "scen")["outputs"][0]["path"].get<std::string>();
    CHECK_THROWS_AS(cmd_eval({a / "tracks" / "tracks.json", a / "scen" / other, a / "eval2", "r", std::nullopt, 10.0,
                              2.0, false}),
                    IncompatibleError);
    fs::remove_all(a);
    fs::remove_all(b);
  }
}

TEST_CASE("track rejects a checkpoint with a different ReID width") {
  const fs::path root = fresh_dir("reid");
  metrics_of(root, "ssp-gnn");
  Json wide = kScenario;
  wide["reid"] = {{"noisy_extra_dims", 2}};
  write_atomic(root / "gen_wide.json", dump_json({{"scenario", wide}}));
  const auto files = cmd_generate({root / "gen_wide.json", root / "wide", std::nullopt, false});
  CHECK_THROWS_AS(cmd_track({root / "model" / "checkpoint.json", root / "wide" / files[0], root / "t2", false, false,
                             false}),
                  IncompatibleError);
  fs::remove_all(root);
}

TEST_CASE("sweep runs every cell, summarizes and resumes") {
  const fs::path root = fresh_dir("sweep");
  const Json grid = {{"scenario", kScenario},
                     {"train", kTrain},
                     {"grid", {{"scenario.fa_rate", {1.0, 2.0}}}},
                     {"seeds", {1}},
                     {"train_scenarios", 1},
                     {"test_scenarios", 1},
                     {"trackers", {"ssp-gnn", "edge-belief"}}};
  write_atomic(root / "sweep.json", dump_json(grid));
  cmd_sweep({root / "sweep.json", root / "out", 1, std::nullopt, {}});
  const std::string summary = read_text(root / "out" / "summary.csv");
  int lines = 0;
  for (char c : summary) lines += c == '\n';
  CHECK(lines == 1 + 2 * 2);  // header, two cells by two trackers
  CHECK(fs::exists(root / "out" / "cell_0001" / "metrics.csv"));
  const auto stamp = fs::last_write_time(root / "out" / "cell_0000" / "metrics.csv");
  cmd_sweep({root / "sweep.json", root / "out", 1, std::nullopt, {}});
  CHECK(fs::last_write_time(root / "out" / "cell_0000" / "metrics.csv") == stamp);
  CHECK(read_text(root / "out" / "summary.csv") == summary);

  Json other = grid;
  other["seeds"] = {2};
  write_atomic(root / "other.json", dump_json(other));
  CHECK_THROWS_AS(cmd_sweep({root / "other.json", root / "out", 1, std::nullopt, {}}), ConfigError);
  fs::remove_all(root);
}

TEST_CASE("tool binary exit codes") {
  const fs::path root = fresh_dir("tool");
  CHECK(run_tool("--help") == 0);
  CHECK(run_tool("generate") == 2);
  CHECK(run_tool("generate --config " + (root / "missing.json").string() + " --out " + (root / "o").string()) == 2);
  write_atomic(root / "gen.json", dump_json({{"scenario", kScenario}}));
  const std::string gen = "generate --config " + (root / "gen.json").string() + " --out " + (root / "o").string();
  CHECK(run_tool(gen) == 0);
  CHECK(run_tool(gen) == 2);
  CHECK(run_tool(gen + " --force") == 0);
  write_atomic(root / "tracks.json", dump_json({{"format_version", 99}, {"tracker", "ssp-gnn"}, {"tracks", Json::array()}}));
  CHECK(run_tool("eval --tracks " + (root / "tracks.json").string() + " --scenario " +
                 (root / "o" / "scenario_000.json").string() + " --out " + (root / "e").string()) == 4);
  fs::remove_all(root);
}
