#include <CLI11.hpp>

#include <iostream>
#include <map>

#include "uwvo/cli.hpp"
#include "uwvo/config.hpp"

namespace {

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace uwvo;
  CLI::App app{"Monocular visual odometry: run, evaluate, generate synthetic fixtures"};
  app.require_subcommand(1);

  // run
  cli::RunOptions run;
  std::string config_file, report, scene;
  std::map<std::string, std::string> values;
  bool ba_async = false;
  CLI::App* run_cmd = app.add_subcommand("run", "Run the pipeline on a dataset");
  run_cmd->add_option("--dataset", run.dataset, "Image directory (optional times.txt)");
  run_cmd->add_option("--calib", run.calibration, "Calibration file");
  run_cmd->add_option("--config", config_file, "key=value config file");
  run_cmd->add_option("--out", run.output, "Trajectory output path")->required();
  run_cmd->add_option("--report", report, "Run report path (default: <out>.report.txt)");
  run_cmd->add_option("--scene", scene, "Scene dump with observations (feature injection)");
  for (const auto& [key, def] : config_entries(VoConfig{})) {
    if (key == "ba_async") {
      run_cmd->add_flag("--ba-async", ba_async, "Run bundle adjustment concurrently");
    } else {
      run_cmd->add_option(dashed(key), values[key], key + " (default " + def + ")");
    }
  }

  // eval
  cli::EvalOptions eval;
  std::string eval_out, per_frame;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Compare an estimated trajectory with ground truth");
  eval_cmd->add_option("estimate", eval.estimate, "Estimated trajectory")->required();
  eval_cmd->add_option("groundtruth", eval.ground_truth, "Ground-truth trajectory")->required();
  eval_cmd->add_option("--out", eval_out, "Metrics CSV path");
  eval_cmd->add_option("--per-frame", per_frame, "Per-pair aligned error CSV path");
  eval_cmd->add_option("--max-dt", eval.max_dt, "Association tolerance in seconds");

  // synth
  cli::SynthOptions synth;
  std::string kind = "loop";
  CLI::App* synth_cmd = app.add_subcommand("synth", "Write a synthetic fixture");
  synth_cmd->add_option("--kind", kind, "planar, volumetric or loop");
  synth_cmd->add_option("--seed", synth.seed, "Scene seed");
  synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();
  synth_cmd->add_option("--landmarks", synth.landmarks, "Number of landmarks");
  synth_cmd->add_option("--frames", synth.frames, "Number of frames");
  synth_cmd->add_option("--noise", synth.noise_px, "Observation noise sigma (px)");
  synth_cmd->add_option("--dropout", synth.dropout, "Per-observation dropout probability");
  synth_cmd->add_option("--occlusions", synth.occlusions, "Number of scripted occlusions");
  synth_cmd->add_flag("--render", synth.render, "Render the image sequence (planar only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : cli::kExitInput;
  }

  if (*run_cmd) {
    if (!config_file.empty()) run.config_file = config_file;
    if (!report.empty()) run.report = report;
    if (!scene.empty()) run.scene = scene;
    for (const auto& [key, def] : config_entries(VoConfig{})) {
      if (key == "ba_async") {
        if (ba_async) run.overrides.emplace_back(key, "true");
      } else if (run_cmd->count(dashed(key)) > 0) {
        run.overrides.emplace_back(key, values[key]);
      }
    }
    return cli::cmd_run(run, std::cout).exit_code;
  }
  if (*eval_cmd) {
    if (!eval_out.empty()) eval.output = eval_out;
    if (!per_frame.empty()) eval.per_frame = per_frame;
    return cli::cmd_eval(eval, std::cout, std::cerr);
  }
  try {
    synth.kind = parse_scene_kind(kind);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitInput;
  }
  return cli::cmd_synth(synth, std::cout, std::cerr);
}
