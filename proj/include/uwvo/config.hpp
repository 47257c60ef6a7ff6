#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uwvo/geometry.hpp"

namespace uwvo {

/// Tunables of the odometry pipeline. Names match the config-file keys.
struct VoConfig {
  // front end
  int max_features = 250;
  int grid_cells = 500;
  double detect_quality = 0.01;
  int pyramid_levels = 4;
  int lk_window = 10;
  int lk_max_iters = 30;
  double fb_threshold_px = 2.0;
  int retrack_window = 5;  // frames; 0 disables retracking

  // keyframes and initialization
  double init_parallax_px = 30.0;
  double parallax_kf_px = 30.0;
  double kf_survival_ratio = 0.5;
  int min_new_points = 10;

  // estimation
  double ransac_confidence = 0.99;
  int ransac_max_iters = 1000;
  double essential_threshold_rad = 1.5e-3;
  double p3p_threshold_rad = 1.5e-3;
  int min_tracked = 12;

  // bundle adjustment
  int ba_window = 5;
  int ba_mutable = 3;
  int ba_max_iters = 20;
  double huber_delta_px = 2.0;
  double cull_threshold_px = 3.0;
  double obs_sigma_px = 1.0;
  bool ba_async = false;

  // runtime
  double frame_rate_hz = 16.0;
  std::uint64_t seed = 0;

  /// Throws kValidation for out-of-range values.
  void validate() const;
};

/// Sets one key from its text value; throws kValidation for an unknown key
/// or an unparsable value.
void set_config_value(VoConfig& config, const std::string& key, const std::string& value);

/// Raw `key = value` pairs of a config file, in file order.
std::vector<std::pair<std::string, std::string>> read_config_entries(
    const std::filesystem::path& path);

/// Reads a flat `key = value` file (`#` comments) on top of `config`.
void apply_config_file(VoConfig& config, const std::filesystem::path& path);

/// All keys as `key=value` lines, in a fixed order.
std::vector<std::pair<std::string, std::string>> config_entries(const VoConfig& config);
std::string format_config(const VoConfig& config);

/// Calibration file: `pinhole_radtan fx fy cx cy k1 k2 p1 p2 width height` on
/// one line, `#` comments. The camera is validated (kValidation).
CameraModel read_calibration(const std::filesystem::path& path);
CameraModel parse_calibration(const std::string& text);

}  // namespace uwvo
