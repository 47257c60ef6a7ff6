#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "test_support.hpp"
#include "uwvo/cli.hpp"
#include "uwvo/error.hpp"
#include "uwvo/evaluation.hpp"

using namespace uwvo;
using namespace uwvo::cli;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

int data_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) n += !line.empty() && line[0] != '#';
  return n;
}

SynthOptions small_synth(SceneKind kind, const fs::path& dir, std::uint64_t seed = 1) {
  SynthOptions o;
  o.kind = kind;
  o.seed = seed;
  o.out_dir = dir;
  o.landmarks = 600;
  o.frames = 120;
  return o;
}

}  // namespace

TEST(CliExitCodes, MapErrors) {
  EXPECT_EQ(exit_code_for(Error(ErrorCode::kValidation, "")), kExitInput);
  EXPECT_EQ(exit_code_for(Error(ErrorCode::kIo, "")), kExitInput);
  EXPECT_EQ(exit_code_for(Error(ErrorCode::kAssociation, "")), kExitInput);
  EXPECT_EQ(exit_code_for(Error(ErrorCode::kNumeric, "")), kExitInternal);
  EXPECT_EQ(exit_code_for(std::runtime_error("boom")), kExitInternal);
}

TEST(CliConfig, Precedence) {
  const fs::path dir = test::temp_dir("cli_config");
  write_file(dir / "vo.cfg", "# test\nmax_features = 200\nfb_threshold_px = 1.5\n");
  const EffectiveConfig eff =
      resolve_config(dir / "vo.cfg", {{"max_features", "150"}, {"retrack_window", "3"}});
  EXPECT_EQ(eff.config.max_features, 150);
  EXPECT_EQ(eff.config.fb_threshold_px, 1.5);
  EXPECT_EQ(eff.config.retrack_window, 3);
  EXPECT_EQ(eff.config.parallax_kf_px, 30.0);
  auto source = [&](const std::string& key) {
    for (const auto& [k, s] : eff.sources) {
      if (k == key) return s;
    }
    ADD_FAILURE() << "missing key " << key;
    return ConfigSource::kDefault;
  };
  EXPECT_EQ(source("max_features"), ConfigSource::kFlag);
  EXPECT_EQ(source("fb_threshold_px"), ConfigSource::kFile);
  EXPECT_EQ(source("retrack_window"), ConfigSource::kFlag);
  EXPECT_EQ(source("parallax_kf_px"), ConfigSource::kDefault);
}

TEST(CliConfig, UnknownKeyRejected) {
  try {
    resolve_config(std::nullopt, {{"no_such_key", "1"}});
    FAIL() << "expected an exception";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kValidation);
  }
}

TEST(CliRun, NonPositiveFocalLengthIsInputError) {
  const fs::path dir = test::temp_dir("cli_bad_calib");
  ASSERT_EQ(cmd_synth(small_synth(SceneKind::kLoop, dir), std::cout, std::cerr), 0);
  write_file(dir / "bad_calib.txt", "pinhole_radtan 0 500 319.5 239.5 0 0 0 0 640 480\n");
  RunOptions o;
  o.scene = dir / "scene.txt";
  o.calibration = dir / "bad_calib.txt";
  o.output = dir / "traj.txt";
  std::ostringstream log;
  const RunSummary s = cmd_run(o, log);
  EXPECT_EQ(s.exit_code, kExitInput);
  EXPECT_NE(s.error.find("fx"), std::string::npos) << s.error;
  EXPECT_FALSE(fs::exists(dir / "traj.txt"));
}

TEST(CliRun, MissingImagesIsInputError) {
  const fs::path dir = test::temp_dir("cli_no_images");
  write_file(dir / "calib.txt", "pinhole_radtan 500 500 319.5 239.5 0 0 0 0 640 480\n");
  RunOptions o;
  o.dataset = dir;
  o.calibration = dir / "calib.txt";
  o.output = dir / "traj.txt";
  std::ostringstream log;
  EXPECT_EQ(cmd_run(o, log).exit_code, kExitInput);
}

TEST(CliRun, SceneRunReportsDefaultsAndCloses) {
  const fs::path dir = test::temp_dir("cli_loop");
  SynthOptions so = small_synth(SceneKind::kLoop, dir, 3);
  so.landmarks = 1000;
  so.frames = 400;
  so.occlusions = 100;
  ASSERT_EQ(cmd_synth(so, std::cout, std::cerr), 0);
  const Trajectory gt = read_trajectory(dir / "groundtruth.txt");
  EXPECT_LT((gt.samples.front().position - gt.samples.back().position).norm(), 1e-9);

  RunOptions o;
  o.scene = dir / "scene.txt";
  o.output = dir / "traj.txt";
  std::ostringstream log;
  const RunSummary s = cmd_run(o, log);
  ASSERT_EQ(s.exit_code, kExitOk) << s.error;
  EXPECT_EQ(s.frames, 400);
  EXPECT_EQ(data_lines(o.output), s.poses);

  const std::string report = slurp(dir / "traj.txt.report.txt");
  EXPECT_NE(report.find("config.max_features=250 [default]"), std::string::npos) << report;
  EXPECT_NE(report.find("frames=400"), std::string::npos);
  EXPECT_NE(report.find("mean_ms_per_frame="), std::string::npos);
  EXPECT_NE(report.find("lost_episodes=0"), std::string::npos);

  EvalOptions e;
  e.estimate = o.output;
  e.ground_truth = dir / "groundtruth.txt";
  e.per_frame = dir / "per_frame.csv";
  const EvalMetrics m = evaluate(e);
  EXPECT_LT(m.ate_pct, 1.0);
  EXPECT_LT(m.drift_pct, 1.0);
  std::ostringstream out, err;
  EXPECT_EQ(cmd_eval(e, out, err), 0);
  EXPECT_EQ(out.str().rfind("ate_rmse,ate_pct,drift_pct,pairs\n", 0), 0u);
  EXPECT_EQ(data_lines(dir / "per_frame.csv"), static_cast<int>(m.pairs) + 1);
}

TEST(CliRun, FlagOverridesEchoed) {
  const fs::path dir = test::temp_dir("cli_flags");
  ASSERT_EQ(cmd_synth(small_synth(SceneKind::kVolumetric, dir), std::cout, std::cerr), 0);
  write_file(dir / "vo.cfg", "max_features = 220\nretrack_window = 4\n");
  RunOptions o;
  o.scene = dir / "scene.txt";
  o.output = dir / "traj.txt";
  o.config_file = dir / "vo.cfg";
  o.report = dir / "report.txt";
  o.overrides = {{"max_features", "240"}};
  std::ostringstream log;
  ASSERT_EQ(cmd_run(o, log).exit_code, kExitOk);
  const std::string report = slurp(dir / "report.txt");
  EXPECT_NE(report.find("config.max_features=240 [flag]"), std::string::npos) << report;
  EXPECT_NE(report.find("config.retrack_window=4 [file]"), std::string::npos);
  EXPECT_NE(report.find("config.ba_window=5 [default]"), std::string::npos);
}

TEST(CliEval, IdenticalFilesGiveZero) {
  const fs::path dir = test::temp_dir("cli_eval");
  ASSERT_EQ(cmd_synth(small_synth(SceneKind::kLoop, dir), std::cout, std::cerr), 0);
  EvalOptions e;
  e.estimate = e.ground_truth = dir / "groundtruth.txt";
  e.output = dir / "metrics.csv";
  std::ostringstream out, err;
  ASSERT_EQ(cmd_eval(e, out, err), 0);
  EXPECT_EQ(out.str(), "ate_rmse,ate_pct,drift_pct,pairs\n0.000000000,0.000000000,0.000000000,120\n");
  EXPECT_EQ(slurp(dir / "metrics.csv"), out.str());
}

TEST(CliEval, AssociationFailure) {
  const fs::path dir = test::temp_dir("cli_eval_bad");
  write_file(dir / "a.txt", "0 0 0 0 0 0 0 1\n1 1 0 0 0 0 0 1\n");
  write_file(dir / "b.txt", "50 0 0 0 0 0 0 1\n51 1 0 0 0 0 0 1\n");
  EvalOptions e;
  e.estimate = dir / "a.txt";
  e.ground_truth = dir / "b.txt";
  std::ostringstream out, err;
  EXPECT_EQ(cmd_eval(e, out, err), kExitInput);
  EXPECT_FALSE(err.str().empty());
}

TEST(CliSynth, SameSeedByteIdentical) {
  const fs::path a = test::temp_dir("cli_synth_a"), b = test::temp_dir("cli_synth_b");
  SynthOptions oa = small_synth(SceneKind::kPlanar, a, 9);
  oa.frames = 20;
  oa.landmarks = 300;
  oa.render = true;
  oa.occlusions = 5;
  SynthOptions ob = oa;
  ob.out_dir = b;
  std::ostringstream log;
  ASSERT_EQ(cmd_synth(oa, log, std::cerr), 0);
  ASSERT_EQ(cmd_synth(ob, log, std::cerr), 0);
  for (const char* f : {"scene.txt", "groundtruth.txt", "times.txt", "calib.txt",
                        "images/000000.png", "images/000019.png"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST(CliSynth, RenderNeedsPlanarScene) {
  SynthOptions o = small_synth(SceneKind::kLoop, test::temp_dir("cli_synth_loop_render"));
  o.render = true;
  std::ostringstream log, err;
  EXPECT_EQ(cmd_synth(o, log, err), kExitInput);
}

TEST(CliSynth, ScriptedOcclusionsAreShort) {
  const SyntheticScene s = generate_scene(SceneKind::kLoop, 300, 100, 4);
  const auto occ = scripted_occlusions(s, 50, 4);
  ASSERT_EQ(occ.size(), 50u);
  for (const auto& o : occ) {
    EXPECT_GE(o.last_frame, o.first_frame);
    EXPECT_LE(o.last_frame - o.first_frame + 1, 3);
    EXPECT_LT(o.last_frame, 100);
  }
}

TEST(CliRun, RenderedPlanarDatasetInitializes) {
  const fs::path dir = test::temp_dir("cli_planar_images");
  SynthOptions so = small_synth(SceneKind::kPlanar, dir, 5);
  so.landmarks = 300;
  so.frames = 60;
  so.render = true;
  ASSERT_EQ(cmd_synth(so, std::cout, std::cerr), 0);
  RunOptions o;
  o.dataset = dir;
  o.calibration = dir / "calib.txt";
  o.output = dir / "traj.txt";
  std::ostringstream log;
  const RunSummary s = cmd_run(o, log);
  ASSERT_EQ(s.exit_code, kExitOk) << s.error << "\n" << log.str();
  EXPECT_EQ(s.frames, 60);
  EXPECT_GE(s.keyframes, 2);
  EXPECT_EQ(data_lines(o.output), s.poses);
  EXPECT_GE(s.poses, 57);
  EvalOptions e;
  e.estimate = o.output;
  e.ground_truth = dir / "groundtruth.txt";
  EXPECT_LT(evaluate(e).ate_pct, 2.0);
}

TEST(CliDataset, TimestampsFromFileOrRate) {
  const fs::path dir = test::temp_dir("cli_times");
  const auto synth = dataset_timestamps(dir, 3, 16.0);
  ASSERT_EQ(synth.size(), 3u);
  EXPECT_DOUBLE_EQ(synth[1], 1.0 / 16.0);
  write_file(dir / "times.txt", "0.5\n0.75\n1.0\n");
  EXPECT_EQ(dataset_timestamps(dir, 3, 16.0), (std::vector<double>{0.5, 0.75, 1.0}));
  try {
    dataset_timestamps(dir, 4, 16.0);
    FAIL() << "expected an exception";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kValidation);
  }
}

TEST(CliDataset, ListsImagesInOrder) {
  const fs::path dir = test::temp_dir("cli_list");
  fs::create_directories(dir / "images");
  for (const char* n : {"b.png", "a.pgm", "c.txt", "0.png"}) write_file(dir / "images" / n, "");
  const auto files = list_images(dir);
  ASSERT_EQ(files.size(), 3u);
  EXPECT_EQ(files[0].filename(), "0.png");
  EXPECT_EQ(files[1].filename(), "a.pgm");
  EXPECT_EQ(files[2].filename(), "b.png");
}
