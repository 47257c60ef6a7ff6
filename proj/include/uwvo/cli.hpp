#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uwvo/config.hpp"
#include "uwvo/synthetic.hpp"

namespace uwvo::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitInput = 2,     // input or validation error
  kExitLost = 3,      // tracking lost for good before half of the frames
  kExitInternal = 4,  // numeric or other internal failure
};

/// Maps a library error to the exit code the tool reports.
int exit_code_for(const std::exception& e);

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  /// Image directory (an `images/` subdirectory is used when present) with an
  /// optional `times.txt`.
  std::filesystem::path dataset;
  std::filesystem::path calibration;  // optional when `scene` is given
  std::optional<std::filesystem::path> config_file;
  std::filesystem::path output;
  /// Defaults to the output path with `.report.txt` appended.
  std::optional<std::filesystem::path> report;
  /// Scene dump with observations: runs the feature-injection front end
  /// instead of reading images.
  std::optional<std::filesystem::path> scene;
  /// Command-line config values; these win over the config file.
  std::vector<std::pair<std::string, std::string>> overrides;
};

enum class ConfigSource { kDefault, kFile, kFlag };
const char* to_string(ConfigSource source);

struct EffectiveConfig {
  VoConfig config;
  std::vector<std::pair<std::string, ConfigSource>> sources;  // config_entries order
};

/// Defaults, then the file, then the flags.
EffectiveConfig resolve_config(const std::optional<std::filesystem::path>& file,
                               const std::vector<std::pair<std::string, std::string>>& overrides);

struct RunSummary {
  int exit_code = kExitOk;
  int frames = 0;
  int poses = 0;
  int keyframes = 0;
  int landmarks = 0;
  int lost_episodes = 0;
  std::int64_t lost_at = -1;
  double ms_per_frame = 0.0;
  std::string error;
};

/// Sorted image paths of a dataset directory (.png, .pgm).
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dataset);

/// One timestamp per line from `times.txt`, or `n` stamps at `rate_hz`.
std::vector<double> dataset_timestamps(const std::filesystem::path& dataset, std::size_t n,
                                       double rate_hz);

/// Runs the pipeline over a dataset, writes the trajectory and the report.
/// Never throws; failures come back as an exit code with a message.
RunSummary cmd_run(const RunOptions& options, std::ostream& log);

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::filesystem::path estimate;
  std::filesystem::path ground_truth;
  std::optional<std::filesystem::path> output;     // metrics CSV
  std::optional<std::filesystem::path> per_frame;  // timestamp,error CSV
  double max_dt = 0.02;
};

struct EvalMetrics {
  double ate_rmse = 0.0;
  double ate_pct = 0.0;
  double drift_pct = 0.0;
  std::size_t pairs = 0;
};

/// Throws on parse or association failure.
EvalMetrics evaluate(const EvalOptions& options);

/// Prints `ate_rmse,ate_pct,drift_pct,pairs` and writes the requested files.
int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  SceneKind kind = SceneKind::kLoop;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  int landmarks = 1000;
  int frames = 400;
  double noise_px = 0.3;
  double dropout = 0.05;
  /// Random occlusions of up to 3 frames each.
  int occlusions = 0;
  /// Writes images/NNNNNN.png rendered from a textured plane (planar only).
  bool render = false;
};

/// Writes scene.txt (with observations), groundtruth.txt, times.txt,
/// calib.txt and, when rendering, the image sequence.
int cmd_synth(const SynthOptions& options, std::ostream& log, std::ostream& err);

/// The scripted occlusions cmd_synth plants for `count` > 0.
std::vector<Occlusion> scripted_occlusions(const SyntheticScene& scene, int count,
                                           std::uint64_t seed);

}  // namespace uwvo::cli
