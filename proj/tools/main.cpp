#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowtrack/cli.hpp"

namespace fs = std::filesystem;
using namespace flowtrack::cli;

int main(int argc, char** argv) {
  CLI::App app{"Learned min-cost-flow multi-target tracker on synthetic scenarios.\n"
               "Relative --out paths resolve against $FLOWTRACK_RUN_ROOT when set.\n"
               "Exit codes: 0 success, 2 config error, 3 numeric failure, 4 incompatible artifacts."};
  app.set_version_flag("--version", std::string(tool_version()));
  app.require_subcommand(1);

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Simulate scenarios from a config (optionally a grid of families)");
  generate->add_option("--config", gen.config, "Generation config JSON")->required();
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--seed", gen.seed, "Base seed; scenario i uses seed + i");
  generate->add_flag("--force", gen.force, "Replace an existing output directory");

  TrainOptions tr;
  auto* train = app.add_subcommand("train", "Train a tracker on scenario files");
  train->add_option("--scenarios", tr.scenarios, "Training scenario files")->required()->expected(1, -1);
  train->add_option("--config", tr.config, "Training config JSON");
  train->add_option("--out", tr.out, "Output directory")->required();
  train->add_option("--tracker", tr.tracker, "ssp-gnn or edge-belief")
      ->check(CLI::IsMember({"ssp-gnn", "edge-belief"}));
  train->add_option("--stage2-max-epochs", tr.stage2_max_epochs, "Override the stage II epoch bound");
  train->add_option("--seed", tr.seed, "Parameter initialization and sampling seed");
  train->add_flag("--force", tr.force, "Replace an existing output directory");

  TrackOptions tk;
  auto* track = app.add_subcommand("track", "Predict tracks for a scenario with a trained checkpoint");
  track->add_option("--checkpoint", tk.checkpoint, "Checkpoint JSON")->required();
  track->add_option("--scenario", tk.scenario, "Scenario file")->required();
  track->add_option("--out", tk.out, "Output directory")->required();
  track->add_flag("--svg", tk.svg, "Also write tracks.svg");
  track->add_flag("--dump-flow", tk.dump_flow, "Also write flow.csv (arc, flow, reduced cost)");
  track->add_flag("--force", tk.force, "Replace an existing output directory");

  EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "Score predicted tracks (MOTA, GOSPA, SIAP)");
  eval->add_option("--tracks", ev.tracks, "tracks.json from the track command")->required();
  eval->add_option("--scenario", ev.scenario, "Scenario file the tracks were computed on")->required();
  eval->add_option("--out", ev.out, "Output directory")->required();
  eval->add_option("--run-id", ev.run_id, "Run identifier written to the CSV row");
  eval->add_option("--siap-radius", ev.siap_radius, "SIAP association radius (default 5 * meas_sigma)");
  eval->add_option("--gospa-c", ev.gospa_c, "GOSPA cutoff");
  eval->add_option("--gospa-p", ev.gospa_p, "GOSPA order");
  eval->add_flag("--force", ev.force, "Replace an existing output directory");

  SweepOptions sw;
  int cell = -1;
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate every cell of a grid across seeds");
  sweep->add_option("--config", sw.config, "Sweep grid JSON")->required();
  sweep->add_option("--out", sw.out, "Sweep directory; completed cells are skipped on rerun")->required();
  sweep->add_option("--jobs", sw.jobs, "Cells run in parallel worker processes");
  sweep->add_option("--cell", cell, "Run a single cell (worker mode)");

  DumpGraphOptions dg;
  auto* dump = app.add_subcommand("dump-graph", "Write the detection graph of a scenario as CSV");
  dump->add_option("--scenario", dg.scenario, "Scenario file")->required();
  dump->add_option("--config", dg.config, "Training config supplying graph overrides");
  dump->add_option("--out", dg.out, "Output directory")->required();
  dump->add_flag("--force", dg.force, "Replace an existing output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*generate) {
      const auto files = cmd_generate(gen);
      std::cout << "wrote " << files.size() << " scenario(s) to " << resolve_output(gen.out).string() << "\n";
    } else if (*train) {
      cmd_train(tr);
      std::cout << "wrote " << resolve_output(tr.out).string() << "\n";
    } else if (*track) {
      cmd_track(tk);
      std::cout << "wrote " << resolve_output(tk.out).string() << "\n";
    } else if (*eval) {
      cmd_eval(ev);
      std::cout << "wrote " << resolve_output(ev.out).string() << "\n";
    } else if (*sweep) {
      if (cell >= 0) sw.only_cell = cell;
      std::error_code ec;
      sw.self_exe = fs::read_symlink("/proc/self/exe", ec);
      cmd_sweep(sw);
      if (!sw.only_cell) std::cout << "wrote " << resolve_output(sw.out).string() << "/summary.csv\n";
    } else if (*dump) {
      cmd_dump_graph(dg);
      std::cout << "wrote " << resolve_output(dg.out).string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
