#include "uwvo/synthetic.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "uwvo/error.hpp"
#include "uwvo/rng.hpp"

namespace uwvo {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double floor_height(double x, double y) {
  return 6.0 + 0.6 * std::sin(0.7 * x + 0.3) * std::cos(0.5 * y) + 0.3 * std::sin(1.3 * y);
}

bool visible(const Pose& pose, const CameraModel& cam, const Vec3& p, Vec2* pixel = nullptr) {
  const Vec3 pc = pose.transform(p);
  if (pc.z() < 0.1) return false;
  const Vec2 px(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
  if (!cam.in_bounds(px)) return false;
  if (pixel) *pixel = px;
  return true;
}

void planar_trajectory(SyntheticScene& s, int n) {
  for (int k = 0; k < n; ++k) {
    const double u = static_cast<double>(k) / (n - 1);
    const Vec3 c(-1.5 + 3.0 * u, 0.3 * std::sin(kTwoPi * u), 0.2 * std::sin(std::numbers::pi * u));
    const Vec3 w(0.05 * std::sin(kTwoPi * u), 0.04 * std::cos(std::numbers::pi * u),
                 0.1 * std::sin(std::numbers::pi * u));
    s.trajectory.push_back(Pose::from_camera_in_world(exp_so3(w), c));
  }
}

void orbit_trajectory(SyntheticScene& s, int n) {
  const Vec3 center(0.0, 0.0, 6.0);
  for (int k = 0; k < n; ++k) {
    const double u = static_cast<double>(k) / (n - 1);
    const double theta = -0.4 + 0.8 * u;
    const Vec3 c = center + Vec3(6.0 * std::sin(theta), 0.3 * std::sin(kTwoPi * u),
                                 -6.0 * std::cos(theta));
    // optical axis towards the cloud center
    const Quat q = exp_so3(Vec3(0.03 * std::sin(kTwoPi * u), -theta, 0.05 * std::sin(kTwoPi * u)));
    s.trajectory.push_back(Pose::from_camera_in_world(q, c));
  }
}

void loop_trajectory(SyntheticScene& s, int n) {
  const std::array<Vec2, 3> v = {Vec2(-4.0, -3.0), Vec2(4.0, -3.0), Vec2(0.0, 3.5)};
  const std::array<double, 3> len = {(v[1] - v[0]).norm(), (v[2] - v[1]).norm(),
                                     (v[0] - v[2]).norm()};
  const double lap = len[0] + len[1] + len[2];
  for (int k = 0; k < n; ++k) {
    const double u = 2.0 * static_cast<double>(k) / (n - 1);  // laps
    const double frac = u - std::floor(u);
    double d = frac * lap;
    int side = 0;
    while (side < 2 && d > len[side]) d -= len[side++];
    Vec2 xy = v[side] + (v[(side + 1) % 3] - v[side]) * (d / len[side]);
    if (k == n - 1) xy = v[0];
    const double phase = kTwoPi * frac;
    const Vec3 c(xy.x(), xy.y(), 0.1 * std::sin(phase));
    const Vec3 w(0.03 * std::sin(phase), 0.03 * std::cos(2.0 * phase) - 0.03,
                 0.25 * std::sin(phase));
    s.trajectory.push_back(Pose::from_camera_in_world(exp_so3(w), c));
  }
}

Vec3 sample_landmark(SceneKind kind, Rng& rng) {
  switch (kind) {
    case SceneKind::kPlanar:
      return {rng.uniform(-6.0, 6.0), rng.uniform(-4.5, 4.5), 6.0};
    case SceneKind::kVolumetric: {
      const double z = rng.uniform(2.0, 10.0);
      const double half_x = 0.8 * z + 2.5;
      const double half_y = 0.6 * z + 0.5;
      return {rng.uniform(-half_x, half_x), rng.uniform(-half_y, half_y), z};
    }
    case SceneKind::kLoop: {
      const double x = rng.uniform(-8.5, 8.5);
      const double y = rng.uniform(-6.5, 7.0);
      return {x, y, floor_height(x, y)};
    }
  }
  return Vec3::Zero();
}

}  // namespace

const char* to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::kPlanar: return "planar";
    case SceneKind::kVolumetric: return "volumetric";
    case SceneKind::kLoop: return "loop";
  }
  return "unknown";
}

SceneKind parse_scene_kind(const std::string& name) {
  if (name == "planar") return SceneKind::kPlanar;
  if (name == "volumetric") return SceneKind::kVolumetric;
  if (name == "loop") return SceneKind::kLoop;
  fail(ErrorCode::kValidation, "unknown scene kind '" + name + "'");
}

CameraModel SceneOptions::default_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 500.0;
  cam.cx = 319.5;
  cam.cy = 239.5;
  cam.width = 640;
  cam.height = 480;
  return cam;
}

Trajectory SyntheticScene::ground_truth() const {
  Trajectory t;
  for (std::size_t k = 0; k < trajectory.size(); ++k) {
    t.samples.push_back(TrajectorySample::from_pose(timestamps[k], trajectory[k]));
  }
  return t;
}

SyntheticScene generate_scene(SceneKind kind, int n_landmarks, int n_frames, std::uint64_t seed,
                              const SceneOptions& options) {
  if (n_landmarks < 50) fail(ErrorCode::kPrecondition, "a scene needs at least 50 landmarks");
  if (n_frames < 10) fail(ErrorCode::kPrecondition, "a scene needs at least 10 frames");
  options.cam.validate();

  SyntheticScene s;
  s.kind = kind;
  s.cam = options.cam;
  s.seed = seed;
  s.plane_z = kind == SceneKind::kPlanar ? 6.0 : 0.0;
  switch (kind) {
    case SceneKind::kPlanar: planar_trajectory(s, n_frames); break;
    case SceneKind::kVolumetric: orbit_trajectory(s, n_frames); break;
    case SceneKind::kLoop: loop_trajectory(s, n_frames); break;
  }
  for (int k = 0; k < n_frames; ++k) s.timestamps.push_back(k / options.frame_rate_hz);

  Rng rng(seed);
  s.landmarks.reserve(n_landmarks);
  for (int i = 0; i < n_landmarks; ++i) s.landmarks.push_back(sample_landmark(kind, rng));

  for (int k = 0; k < n_frames; ++k) {
    int count = 0;
    for (const Vec3& p : s.landmarks) count += visible(s.trajectory[k], s.cam, p) ? 1 : 0;
    if (count < options.min_visible) {
      fail(ErrorCode::kValidation, "frame " + std::to_string(k) + " sees only " +
                                       std::to_string(count) + " landmarks");
    }
  }
  return s;
}

std::vector<FeatureObservation> observe(const SyntheticScene& scene, int frame,
                                        const ObserveOptions& options) {
  if (frame < 0 || frame >= scene.num_frames()) {
    fail(ErrorCode::kPrecondition, "frame index out of range");
  }
  Rng rng(mix_seed(options.seed, static_cast<std::uint64_t>(frame)));
  const Pose& pose = scene.trajectory[frame];
  std::vector<FeatureObservation> out;
  for (std::size_t i = 0; i < scene.landmarks.size(); ++i) {
    Vec2 px;
    if (!visible(pose, scene.cam, scene.landmarks[i], &px)) continue;
    // draw every random number for a visible point so that changing one
    // option does not reshuffle the others
    const double drop = rng.uniform();
    const double nx = rng.normal();
    const double ny = rng.normal();
    if (drop < options.dropout) continue;
    const auto id = static_cast<std::int64_t>(i);
    const bool occluded = std::any_of(
        options.occlusions.begin(), options.occlusions.end(), [&](const Occlusion& o) {
          return o.track_id == id && frame >= o.first_frame && frame <= o.last_frame;
        });
    if (occluded) continue;
    px += options.pixel_noise_sigma * Vec2(nx, ny);
    px.x() = std::clamp(px.x(), 0.0, scene.cam.width - 1.0);
    px.y() = std::clamp(px.y(), 0.0, scene.cam.height - 1.0);
    out.push_back({id, px});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

Warp Warp::translation(double dx, double dy) {
  Warp w;
  w.t = Vec2(dx, dy);
  return w;
}

Warp Warp::affine(const Eigen::Matrix2d& a, const Vec2& t) {
  Warp w;
  w.a = a;
  w.t = t;
  return w;
}

namespace {

FloatImage gaussian_blur(const FloatImage& in, double sigma) {
  const int width = in.width;
  const int height = in.height;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += kernel[i + radius];
  }
  for (double& k : kernel) k /= ksum;

  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  FloatImage tmp(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * in(clampi(x + i, width), y);
      tmp(x, y) = static_cast<float>(acc);
    }
  }
  FloatImage out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp(x, clampi(y + i, height));
      out(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

constexpr int kTextureOctaves = 6;
// octave weight 2^(k * slope): near 1 the coarse scales dominate (wide LK
// basin), lower values keep more fine detail (fewer look-alike patches)
constexpr double kOctaveSlope = 0.9;

}  // namespace

FloatImage random_texture(std::uint64_t seed, int width, int height, double blur) {
  Rng rng(seed);
  FloatImage out(width, height);
  // octave k: noise on a grid 2^k times coarser, blurred there and upsampled
  for (int k = 0; k < kTextureOctaves; ++k) {
    const double step = std::ldexp(1.0, k);
    const int gw = static_cast<int>(std::ceil(width / step)) + 2;
    const int gh = static_cast<int>(std::ceil(height / step)) + 2;
    FloatImage noise(gw, gh);
    for (float& v : noise.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const FloatImage layer = gaussian_blur(noise, blur);
    const auto weight = static_cast<float>(std::pow(step, kOctaveSlope));
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        out(x, y) += weight * sample_bilinear(layer, x / step, y / step);
      }
    }
  }
  const auto [lo, hi] = std::minmax_element(out.data.begin(), out.data.end());
  const float lo_v = *lo;
  const float span = std::max(*hi - lo_v, 1e-6f);
  for (float& v : out.data) v = 20.0f + 215.0f * (v - lo_v) / span;
  return out;
}

RenderedPair render_textured_pair(std::uint64_t texture_seed, const Warp& warp, int width,
                                  int height) {
  if (width < 16 || height < 16) fail(ErrorCode::kPrecondition, "render size too small");
  const Eigen::Matrix2d a_inv = warp.a.inverse();
  if (!a_inv.allFinite()) fail(ErrorCode::kPrecondition, "warp is not invertible");
  auto unwarp = [&](const Vec2& p) -> Vec2 { return a_inv * (p - warp.t); };

  int inside = 0, total = 0;
  for (int gy = 0; gy <= 20; ++gy) {
    for (int gx = 0; gx <= 20; ++gx) {
      const Vec2 p((width - 1) * gx / 20.0, (height - 1) * gy / 20.0);
      const Vec2 q = warp.apply(p);
      inside += (q.x() >= 0 && q.y() >= 0 && q.x() <= width - 1 && q.y() <= height - 1) ? 1 : 0;
      ++total;
    }
  }
  if (2 * inside < total) fail(ErrorCode::kPrecondition, "warp keeps less than half the image");

  // texture domain covering both images
  Vec2 lo(0.0, 0.0), hi(width - 1.0, height - 1.0);
  for (const Vec2& c : {Vec2(0, 0), Vec2(width - 1.0, 0), Vec2(0, height - 1.0),
                        Vec2(width - 1.0, height - 1.0)}) {
    const Vec2 u = unwarp(c);
    lo = lo.cwiseMin(u);
    hi = hi.cwiseMax(u);
  }
  const Vec2 origin = lo - Vec2(4.0, 4.0);
  const int tw = static_cast<int>(std::ceil(hi.x() - origin.x())) + 5;
  const int th = static_cast<int>(std::ceil(hi.y() - origin.y())) + 5;
  const FloatImage tex = random_texture(texture_seed, tw, th);

  RenderedPair out;
  out.warp = warp;
  FloatImage first(width, height), second(width, height);
  out.flow_x = FloatImage(width, height);
  out.flow_y = FloatImage(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Vec2 p(x, y);
      first(x, y) = sample_bilinear(tex, x - origin.x(), y - origin.y());
      const Vec2 src = unwarp(p) - origin;
      second(x, y) = sample_bilinear(tex, src.x(), src.y());
      const Vec2 f = warp.flow(p);
      out.flow_x(x, y) = static_cast<float>(f.x());
      out.flow_y(x, y) = static_cast<float>(f.y());
    }
  }
  out.first = to_gray(first);
  out.second = to_gray(second);
  return out;
}

std::vector<GrayImage> render_plane_sequence(const SyntheticScene& scene,
                                             std::uint64_t texture_seed, double texel) {
  const CameraModel& cam = scene.cam;
  const double z0 = scene.plane_z;
  auto hit = [&](const Pose& pose, double u, double v, Vec3& out) {
    const Mat3 rt = pose.rotation_matrix().transpose();
    const Vec3 c = pose.center();
    const Vec3 d = rt * Vec3((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
    if (std::abs(d.z()) < 1e-12) return false;
    const double lambda = (z0 - c.z()) / d.z();
    if (lambda <= 0.0) return false;
    out = c + lambda * d;
    return true;
  };

  Vec2 lo(1e300, 1e300), hi(-1e300, -1e300);
  for (const Pose& pose : scene.trajectory) {
    for (const Vec2& corner : {Vec2(0, 0), Vec2(cam.width - 1.0, 0), Vec2(0, cam.height - 1.0),
                               Vec2(cam.width - 1.0, cam.height - 1.0)}) {
      Vec3 p;
      if (!hit(pose, corner.x(), corner.y(), p)) {
        fail(ErrorCode::kPrecondition, "image corner ray misses the textured plane");
      }
      lo = lo.cwiseMin(p.head<2>());
      hi = hi.cwiseMax(p.head<2>());
    }
  }
  const Vec2 origin = lo - Vec2::Constant(8.0 * texel);
  const int tw = static_cast<int>(std::ceil((hi.x() - origin.x()) / texel)) + 8;
  const int th = static_cast<int>(std::ceil((hi.y() - origin.y()) / texel)) + 8;
  const FloatImage tex = random_texture(texture_seed, tw, th, 2.0);

  std::vector<GrayImage> frames;
  frames.reserve(scene.trajectory.size());
  FloatImage img(cam.width, cam.height);
  for (const Pose& pose : scene.trajectory) {
    for (int y = 0; y < cam.height; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        Vec3 p;
        hit(pose, x, y, p);
        img(x, y) = sample_bilinear(tex, (p.x() - origin.x()) / texel, (p.y() - origin.y()) / texel);
      }
    }
    frames.push_back(to_gray(img));
  }
  return frames;
}

void paint_noise_patch(GrayImage& img, const Vec2& center, int half, std::uint64_t seed) {
  Rng rng(seed);
  const int cx = static_cast<int>(std::lround(center.x()));
  const int cy = static_cast<int>(std::lround(center.y()));
  for (int y = cy - half; y <= cy + half; ++y) {
    for (int x = cx - half; x <= cx + half; ++x) {
      const auto v = static_cast<std::uint8_t>(rng.index(256));
      if (x >= 0 && y >= 0 && x < img.width && y < img.height) img(x, y) = v;
    }
  }
}

// ---------------------------------------------------------------------------
// Scene files

void save_scene(const std::filesystem::path& path, const SyntheticScene& scene,
                const std::vector<std::vector<FeatureObservation>>& observations) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write scene " + path.string());
  char buf[512];
  out << "# uwvo synthetic scene\n";
  out << "kind " << to_string(scene.kind) << "\n";
  out << "seed " << scene.seed << "\n";
  std::snprintf(buf, sizeof(buf), "plane_z %.17g\n", scene.plane_z);
  out << buf;
  const CameraModel& c = scene.cam;
  std::snprintf(buf, sizeof(buf), "camera %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %d %d\n",
                c.fx, c.fy, c.cx, c.cy, c.k1, c.k2, c.p1, c.p2, c.width, c.height);
  out << buf;
  out << "landmarks " << scene.landmarks.size() << "\n";
  for (const Vec3& p : scene.landmarks) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
    out << buf;
  }
  out << "frames " << scene.trajectory.size() << "\n";
  for (std::size_t k = 0; k < scene.trajectory.size(); ++k) {
    const TrajectorySample s = TrajectorySample::from_pose(scene.timestamps[k], scene.trajectory[k]);
    const Quat& q = s.orientation;
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  s.timestamp, s.position.x(), s.position.y(), s.position.z(), q.x(), q.y(),
                  q.z(), q.w());
    out << buf;
  }
  std::size_t count = 0;
  for (const auto& f : observations) count += f.size();
  if (count > 0) {
    out << "observations " << count << "\n";
    for (std::size_t k = 0; k < observations.size(); ++k) {
      for (const FeatureObservation& o : observations[k]) {
        std::snprintf(buf, sizeof(buf), "%zu %lld %.17g %.17g\n", k,
                      static_cast<long long>(o.track_id), o.pixel.x(), o.pixel.y());
        out << buf;
      }
    }
  }
  if (!out) fail(ErrorCode::kIo, "failed writing scene " + path.string());
}

SceneFile load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open scene " + path.string());
  SceneFile file;
  SyntheticScene& s = file.scene;
  std::string line;
  auto next = [&](std::istringstream& ss) {
    while (std::getline(in, line)) {
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      ss = std::istringstream(line);
      return true;
    }
    return false;
  };
  auto bad = [&](const std::string& what) {
    fail(ErrorCode::kValidation, "scene file " + path.string() + ": " + what);
  };
  std::istringstream ss;
  while (next(ss)) {
    std::string key;
    ss >> key;
    if (key == "kind") {
      std::string k;
      ss >> k;
      s.kind = parse_scene_kind(k);
    } else if (key == "seed") {
      ss >> s.seed;
    } else if (key == "plane_z") {
      ss >> s.plane_z;
    } else if (key == "camera") {
      CameraModel& c = s.cam;
      if (!(ss >> c.fx >> c.fy >> c.cx >> c.cy >> c.k1 >> c.k2 >> c.p1 >> c.p2 >> c.width >>
            c.height)) {
        bad("malformed camera line");
      }
    } else if (key == "landmarks") {
      std::size_t n = 0;
      ss >> n;
      for (std::size_t i = 0; i < n; ++i) {
        Vec3 p;
        if (!next(ss) || !(ss >> p.x() >> p.y() >> p.z())) bad("truncated landmark list");
        s.landmarks.push_back(p);
      }
    } else if (key == "frames") {
      std::size_t n = 0;
      ss >> n;
      for (std::size_t i = 0; i < n; ++i) {
        double t, x, y, z, qx, qy, qz, qw;
        if (!next(ss) || !(ss >> t >> x >> y >> z >> qx >> qy >> qz >> qw)) {
          bad("truncated frame list");
        }
        s.timestamps.push_back(t);
        s.trajectory.push_back(
            Pose::from_camera_in_world(Quat(qw, qx, qy, qz).normalized(), Vec3(x, y, z)));
      }
    } else if (key == "observations") {
      std::size_t n = 0;
      ss >> n;
      file.observations.assign(s.trajectory.size(), {});
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t k;
        long long id;
        Vec2 px;
        if (!next(ss) || !(ss >> k >> id >> px.x() >> px.y())) bad("truncated observation list");
        if (k >= file.observations.size()) bad("observation frame out of range");
        file.observations[k].push_back({id, px});
      }
    } else {
      bad("unknown section '" + key + "'");
    }
  }
  s.cam.validate();
  return file;
}

}  // namespace uwvo
