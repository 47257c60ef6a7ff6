#include "uwvo/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "uwvo/error.hpp"
#include "uwvo/evaluation.hpp"
#include "uwvo/pipeline.hpp"
#include "uwvo/rng.hpp"

namespace uwvo::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::kIo, "write failed: " + path.string());
}

std::string format_report(const RunOptions& o, const EffectiveConfig& eff, const RunSummary& s) {
  std::ostringstream r;
  r << "# uwvo run report\n";
  r << "dataset=" << (o.scene ? o.scene->string() : o.dataset.string()) << "\n";
  r << "frames=" << s.frames << "\n";
  r << "poses=" << s.poses << "\n";
  r << "keyframes=" << s.keyframes << "\n";
  r << "landmarks=" << s.landmarks << "\n";
  r << "mean_ms_per_frame=" << fmt("%.3f", s.ms_per_frame) << "\n";
  r << "lost_episodes=" << s.lost_episodes << "\n";
  if (s.lost_at >= 0) r << "lost_at_frame=" << s.lost_at << "\n";
  r << "exit_code=" << s.exit_code << "\n";
  if (!s.error.empty()) r << "error=" << s.error << "\n";
  r << "# effective configuration (source in brackets)\n";
  const auto entries = config_entries(eff.config);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    r << "config." << entries[i].first << "=" << entries[i].second << " ["
      << to_string(eff.sources[i].second) << "]\n";
  }
  return r.str();
}

}  // namespace

int exit_code_for(const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  if (!err) return kExitInternal;
  switch (err->code()) {
    case ErrorCode::kNumeric:
    case ErrorCode::kRefinementFailure:
    case ErrorCode::kEstimationFailure:
      return kExitInternal;
    default:
      return kExitInput;
  }
}

const char* to_string(ConfigSource source) {
  switch (source) {
    case ConfigSource::kDefault: return "default";
    case ConfigSource::kFile: return "file";
    case ConfigSource::kFlag: return "flag";
  }
  return "unknown";
}

EffectiveConfig resolve_config(const std::optional<fs::path>& file,
                               const std::vector<std::pair<std::string, std::string>>& overrides) {
  EffectiveConfig eff;
  std::map<std::string, ConfigSource> source;
  if (file) {
    for (const auto& [k, v] : read_config_entries(*file)) {
      set_config_value(eff.config, k, v);
      source[k] = ConfigSource::kFile;
    }
  }
  for (const auto& [k, v] : overrides) {
    set_config_value(eff.config, k, v);
    source[k] = ConfigSource::kFlag;
  }
  eff.config.validate();
  for (const auto& [k, v] : config_entries(eff.config)) {
    const auto it = source.find(k);
    eff.sources.emplace_back(k, it == source.end() ? ConfigSource::kDefault : it->second);
  }
  return eff;
}

std::vector<fs::path> list_images(const fs::path& dataset) {
  fs::path dir = dataset;
  if (fs::is_directory(dataset / "images")) dir = dataset / "images";
  if (!fs::is_directory(dir)) fail(ErrorCode::kIo, "not a directory: " + dataset.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".pgm") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) fail(ErrorCode::kIo, "no .png or .pgm images in " + dir.string());
  return out;
}

std::vector<double> dataset_timestamps(const fs::path& dataset, std::size_t n, double rate_hz) {
  std::vector<double> out;
  const fs::path times = dataset / "times.txt";
  if (!fs::exists(times)) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<double>(i) / rate_hz);
    return out;
  }
  std::ifstream in(times);
  if (!in) fail(ErrorCode::kIo, "cannot open " + times.string());
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    try {
      out.push_back(std::stod(line.substr(b)));
    } catch (const std::exception&) {
      fail(ErrorCode::kValidation, "bad timestamp in times.txt: " + line);
    }
  }
  if (out.size() != n) {
    fail(ErrorCode::kValidation, "times.txt has " + std::to_string(out.size()) +
                                     " stamps for " + std::to_string(n) + " images");
  }
  return out;
}

RunSummary cmd_run(const RunOptions& o, std::ostream& log) {
  RunSummary s;
  EffectiveConfig eff;
  try {
    eff = resolve_config(o.config_file, o.overrides);

    std::optional<SceneFile> scene;
    std::vector<fs::path> images;
    std::vector<double> stamps;
    CameraModel cam;
    if (o.scene) {
      scene = load_scene(*o.scene);
      cam = o.calibration.empty() ? scene->scene.cam : read_calibration(o.calibration);
      stamps = scene->scene.timestamps;
      if (scene->observations.size() != stamps.size()) {
        fail(ErrorCode::kValidation, "scene has no observations for every frame");
      }
    } else {
      if (o.calibration.empty()) fail(ErrorCode::kValidation, "a calibration file is required");
      cam = read_calibration(o.calibration);
      images = list_images(o.dataset);
      stamps = dataset_timestamps(o.dataset, images.size(), eff.config.frame_rate_hz);
    }

    Odometry vo(cam, eff.config);
    const std::size_t n = stamps.size();
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < n; ++i) {
      const FrameResult r = o.scene ? vo.process_observations(scene->observations[i], stamps[i])
                                    : vo.process_frame(load_image(images[i]), stamps[i]);
      ++s.frames;
      if (vo.mode() == VoMode::kLost) {
        s.lost_at = static_cast<std::int64_t>(i);
        log << "frame " << i << ": " << r.message << "\n";
        break;
      }
    }
    vo.finish();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    s.ms_per_frame = s.frames > 0 ? 1000.0 * secs / s.frames : 0.0;
    s.keyframes = static_cast<int>(vo.keyframes().size());
    s.landmarks = vo.active_landmarks();
    s.lost_episodes = vo.stats().lost_episodes;
    for (const std::string& w : vo.stats().warnings) log << "warning: " << w << "\n";

    const Trajectory traj = vo.trajectory();
    s.poses = static_cast<int>(traj.samples.size());
    if (!traj.samples.empty()) write_trajectory(traj, o.output);
    if (s.lost_at >= 0 && static_cast<std::size_t>(s.lost_at) < n / 2) {
      s.exit_code = kExitLost;
      s.error = "tracking lost at frame " + std::to_string(s.lost_at) + " of " + std::to_string(n);
    } else if (traj.samples.empty()) {
      s.exit_code = kExitLost;
      s.error = "the pipeline never initialized";
    }
  } catch (const std::exception& e) {
    s.exit_code = exit_code_for(e);
    s.error = e.what();
  }
  if (!s.error.empty()) log << "error: " << s.error << "\n";

  // the report is written even on failure, except when the config is unusable
  if (!eff.sources.empty()) {
    const fs::path report = o.report ? *o.report : fs::path(o.output.string() + ".report.txt");
    const std::string text = format_report(o, eff, s);
    try {
      write_text(report, text);
    } catch (const std::exception& e) {
      log << "error: " << e.what() << "\n";
      if (s.exit_code == kExitOk) s.exit_code = kExitInput;
    }
    log << text;
  }
  return s;
}

// ---------------------------------------------------------------------------

EvalMetrics evaluate(const EvalOptions& o) {
  const Trajectory est = read_trajectory(o.estimate);
  const Trajectory gt = read_trajectory(o.ground_truth);
  const AteResult ate = ate_rmse(est, gt, o.max_dt);
  EvalMetrics m;
  m.ate_rmse = ate.rmse;
  m.ate_pct = ate.rmse_pct;
  m.drift_pct = final_drift_pct(est, gt, o.max_dt);
  m.pairs = ate.pairs.size();
  if (o.per_frame) {
    std::ostringstream pf;
    pf << "timestamp,error\n";
    for (std::size_t i = 0; i < ate.pairs.size(); ++i) {
      pf << fmt("%.6f", ate.pairs[i].t_est) << "," << fmt("%.9f", ate.errors[i]) << "\n";
    }
    write_text(*o.per_frame, pf.str());
  }
  return m;
}

int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  try {
    const EvalMetrics m = evaluate(o);
    std::ostringstream csv;
    csv << "ate_rmse,ate_pct,drift_pct,pairs\n"
        << fmt("%.9f", m.ate_rmse) << "," << fmt("%.9f", m.ate_pct) << ","
        << fmt("%.9f", m.drift_pct) << "," << m.pairs << "\n";
    out << csv.str();
    if (o.output) write_text(*o.output, csv.str());
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

// ---------------------------------------------------------------------------

std::vector<Occlusion> scripted_occlusions(const SyntheticScene& scene, int count,
                                           std::uint64_t seed) {
  std::vector<Occlusion> out;
  Rng rng(seed ^ 0x6f63636c75646564ULL);
  const int n_frames = scene.num_frames();
  const auto n_landmarks = static_cast<std::uint64_t>(scene.landmarks.size());
  for (int i = 0; i < count; ++i) {
    Occlusion o;
    o.track_id = static_cast<std::int64_t>(rng.index(n_landmarks));
    o.first_frame = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(n_frames - 4)));
    o.last_frame = o.first_frame + static_cast<int>(rng.index(3));
    out.push_back(o);
  }
  return out;
}

int cmd_synth(const SynthOptions& o, std::ostream& log, std::ostream& err) {
  try {
    const SyntheticScene scene = generate_scene(o.kind, o.landmarks, o.frames, o.seed);
    ObserveOptions obs;
    obs.pixel_noise_sigma = o.noise_px;
    obs.dropout = o.dropout;
    obs.seed = o.seed + 1;
    obs.occlusions = scripted_occlusions(scene, o.occlusions, o.seed);
    std::vector<std::vector<FeatureObservation>> observations;
    for (int f = 0; f < scene.num_frames(); ++f) observations.push_back(observe(scene, f, obs));

    std::error_code ec;
    fs::create_directories(o.out_dir, ec);
    if (ec || !fs::is_directory(o.out_dir)) {
      fail(ErrorCode::kIo, "cannot create output directory " + o.out_dir.string());
    }
    save_scene(o.out_dir / "scene.txt", scene, observations);
    write_trajectory(scene.ground_truth(), o.out_dir / "groundtruth.txt");
    std::ostringstream times;
    for (double t : scene.timestamps) times << fmt("%.6f", t) << "\n";
    write_text(o.out_dir / "times.txt", times.str());
    const CameraModel& c = scene.cam;
    std::ostringstream calib;
    calib << "# fx fy cx cy k1 k2 p1 p2 width height\n"
          << "pinhole_radtan " << fmt("%.17g", c.fx) << " " << fmt("%.17g", c.fy) << " "
          << fmt("%.17g", c.cx) << " " << fmt("%.17g", c.cy) << " " << fmt("%.17g", c.k1) << " "
          << fmt("%.17g", c.k2) << " " << fmt("%.17g", c.p1) << " " << fmt("%.17g", c.p2) << " "
          << c.width << " " << c.height << "\n";
    write_text(o.out_dir / "calib.txt", calib.str());

    if (o.render) {
      if (!(scene.plane_z > 0.0)) {
        fail(ErrorCode::kPrecondition, "image rendering needs a planar scene");
      }
      fs::create_directories(o.out_dir / "images", ec);
      const std::vector<GrayImage> frames = render_plane_sequence(scene, o.seed + 2);
      for (std::size_t i = 0; i < frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu.png", i);
        save_png(frames[i], o.out_dir / "images" / name);
      }
    }
    log << "wrote " << to_string(o.kind) << " scene (" << scene.num_frames() << " frames, "
        << scene.landmarks.size() << " landmarks) to " << o.out_dir.string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace uwvo::cli
