#include "uwvo/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "uwvo/error.hpp"

namespace uwvo {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    fail(ErrorCode::kValidation, "config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  fail(ErrorCode::kValidation, "config key '" + key + "': expected a boolean, got '" + value + "'");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

struct Field {
  std::function<void(VoConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const VoConfig&)> get;
};

template <typename T>
Field field(T VoConfig::*member) {
  Field f;
  f.set = [member](VoConfig& c, const std::string& key, const std::string& value) {
    if constexpr (std::is_same_v<T, bool>) {
      c.*member = parse_bool(key, value);
    } else {
      c.*member = parse_number<T>(key, value);
    }
  };
  f.get = [member](const VoConfig& c) -> std::string {
    if constexpr (std::is_same_v<T, bool>) {
      return c.*member ? "true" : "false";
    } else if constexpr (std::is_floating_point_v<T>) {
      return format_double(c.*member);
    } else {
      return std::to_string(c.*member);
    }
  };
  return f;
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"max_features", field(&VoConfig::max_features)},
      {"grid_cells", field(&VoConfig::grid_cells)},
      {"detect_quality", field(&VoConfig::detect_quality)},
      {"pyramid_levels", field(&VoConfig::pyramid_levels)},
      {"lk_window", field(&VoConfig::lk_window)},
      {"lk_max_iters", field(&VoConfig::lk_max_iters)},
      {"fb_threshold_px", field(&VoConfig::fb_threshold_px)},
      {"retrack_window", field(&VoConfig::retrack_window)},
      {"init_parallax_px", field(&VoConfig::init_parallax_px)},
      {"parallax_kf_px", field(&VoConfig::parallax_kf_px)},
      {"kf_survival_ratio", field(&VoConfig::kf_survival_ratio)},
      {"min_new_points", field(&VoConfig::min_new_points)},
      {"ransac_confidence", field(&VoConfig::ransac_confidence)},
      {"ransac_max_iters", field(&VoConfig::ransac_max_iters)},
      {"essential_threshold_rad", field(&VoConfig::essential_threshold_rad)},
      {"p3p_threshold_rad", field(&VoConfig::p3p_threshold_rad)},
      {"min_tracked", field(&VoConfig::min_tracked)},
      {"ba_window", field(&VoConfig::ba_window)},
      {"ba_mutable", field(&VoConfig::ba_mutable)},
      {"ba_max_iters", field(&VoConfig::ba_max_iters)},
      {"huber_delta_px", field(&VoConfig::huber_delta_px)},
      {"cull_threshold_px", field(&VoConfig::cull_threshold_px)},
      {"obs_sigma_px", field(&VoConfig::obs_sigma_px)},
      {"ba_async", field(&VoConfig::ba_async)},
      {"frame_rate_hz", field(&VoConfig::frame_rate_hz)},
      {"seed", field(&VoConfig::seed)},
  };
  return table;
}

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::kValidation, "invalid config: " + what);
}

}  // namespace

void VoConfig::validate() const {
  require(max_features > 0, "max_features must be positive");
  require(grid_cells >= 1, "grid_cells must be >= 1");
  require(detect_quality > 0.0 && detect_quality < 1.0, "detect_quality must be in (0, 1)");
  require(pyramid_levels >= 1, "pyramid_levels must be >= 1");
  require(lk_window >= 1, "lk_window must be >= 1");
  require(lk_max_iters >= 1, "lk_max_iters must be >= 1");
  require(fb_threshold_px > 0.0, "fb_threshold_px must be positive");
  require(retrack_window >= 0, "retrack_window must be >= 0");
  require(init_parallax_px > 0.0, "init_parallax_px must be positive");
  require(parallax_kf_px > 0.0, "parallax_kf_px must be positive");
  require(kf_survival_ratio >= 0.0 && kf_survival_ratio <= 1.0,
          "kf_survival_ratio must be in [0, 1]");
  require(min_new_points >= 0, "min_new_points must be >= 0");
  require(ransac_confidence > 0.0 && ransac_confidence < 1.0,
          "ransac_confidence must be in (0, 1)");
  require(ransac_max_iters >= 1, "ransac_max_iters must be >= 1");
  require(essential_threshold_rad > 0.0, "essential_threshold_rad must be positive");
  require(p3p_threshold_rad > 0.0, "p3p_threshold_rad must be positive");
  require(min_tracked >= 4, "min_tracked must be >= 4");
  require(ba_mutable >= 1, "ba_mutable must be >= 1");
  require(ba_window >= ba_mutable, "ba_window must be >= ba_mutable");
  require(ba_max_iters >= 0, "ba_max_iters must be >= 0");
  require(huber_delta_px > 0.0, "huber_delta_px must be positive");
  require(cull_threshold_px > 0.0, "cull_threshold_px must be positive");
  require(obs_sigma_px > 0.0, "obs_sigma_px must be positive");
  require(frame_rate_hz > 0.0, "frame_rate_hz must be positive");
}

void set_config_value(VoConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [name, f] : fields()) {
    if (name == key) {
      f.set(config, key, trim(value));
      return;
    }
  }
  fail(ErrorCode::kValidation, "unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> read_config_entries(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kValidation,
           path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

void apply_config_file(VoConfig& config, const std::filesystem::path& path) {
  for (const auto& [key, value] : read_config_entries(path)) set_config_value(config, key, value);
}

std::vector<std::pair<std::string, std::string>> config_entries(const VoConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, f] : fields()) out.emplace_back(name, f.get(config));
  return out;
}

std::string format_config(const VoConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_entries(config)) out += k + "=" + v + "\n";
  return out;
}

CameraModel parse_calibration(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    std::istringstream ss(line);
    std::string model;
    CameraModel cam;
    ss >> model;
    if (model != "pinhole_radtan") {
      fail(ErrorCode::kValidation, "unsupported camera model '" + model + "'");
    }
    if (!(ss >> cam.fx >> cam.fy >> cam.cx >> cam.cy >> cam.k1 >> cam.k2 >> cam.p1 >> cam.p2 >>
          cam.width >> cam.height)) {
      fail(ErrorCode::kValidation, "calibration needs fx fy cx cy k1 k2 p1 p2 width height");
    }
    std::string extra;
    if (ss >> extra) fail(ErrorCode::kValidation, "trailing text in calibration: " + extra);
    cam.validate();
    return cam;
  }
  fail(ErrorCode::kValidation, "calibration file has no camera line");
}

CameraModel read_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open calibration " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_calibration(buf.str());
}

}  // namespace uwvo
