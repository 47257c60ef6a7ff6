#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "uwvo/evaluation.hpp"
#include "uwvo/geometry.hpp"
#include "uwvo/image.hpp"

namespace uwvo {

enum class SceneKind { kPlanar, kVolumetric, kLoop };

const char* to_string(SceneKind kind);
/// Parses "planar", "volumetric" or "loop"; throws kValidation otherwise.
SceneKind parse_scene_kind(const std::string& name);

struct SyntheticScene {
  SceneKind kind = SceneKind::kVolumetric;
  std::vector<Vec3> landmarks;
  std::vector<Pose> trajectory;  // world-to-camera, one per frame
  std::vector<double> timestamps;
  CameraModel cam;
  std::uint64_t seed = 0;
  /// Height of the textured plane for kinds rendered as images (z = const).
  double plane_z = 0.0;

  Trajectory ground_truth() const;
  int num_frames() const { return static_cast<int>(trajectory.size()); }
};

struct SceneOptions {
  int min_visible = 30;
  double frame_rate_hz = 16.0;
  /// 640x480 pinhole, f = 500, no distortion.
  CameraModel cam = default_camera();

  static CameraModel default_camera();
};

/// planar: points on the plane z = 6 seen by a camera sliding sideways.
/// volumetric: points in the depth band [2, 10] seen along an arc.
/// loop: a downward-looking camera over an uneven floor, following a
/// triangle twice; first and last poses coincide.
///
/// Throws kPrecondition for n_landmarks < 50 or n_frames < 10 and kValidation
/// when some frame sees fewer than options.min_visible landmarks.
SyntheticScene generate_scene(SceneKind kind, int n_landmarks, int n_frames, std::uint64_t seed,
                              const SceneOptions& options = {});

/// Track `track_id` is invisible in frames [first_frame, last_frame].
struct Occlusion {
  std::int64_t track_id = -1;
  int first_frame = 0;
  int last_frame = 0;
};

struct ObserveOptions {
  double pixel_noise_sigma = 0.0;
  double dropout = 0.0;
  std::vector<Occlusion> occlusions;
  std::uint64_t seed = 0;
};

/// One feature-level observation; the track id is the landmark index.
struct FeatureObservation {
  std::int64_t track_id = -1;
  Vec2 pixel = Vec2::Zero();
};

/// Projects the landmarks visible in `frame` (positive depth, exact
/// projection inside the image), then applies dropout, occlusions and
/// Gaussian pixel noise. Each frame draws from its own stream derived from
/// (options.seed, frame), so frames can be generated in any order.
std::vector<FeatureObservation> observe(const SyntheticScene& scene, int frame,
                                        const ObserveOptions& options = {});

/// Image warp mapping a pixel of the first image to its position in the
/// second: p' = a p + t.
struct Warp {
  Eigen::Matrix2d a = Eigen::Matrix2d::Identity();
  Vec2 t = Vec2::Zero();

  static Warp translation(double dx, double dy);
  static Warp affine(const Eigen::Matrix2d& a, const Vec2& t);
  Vec2 apply(const Vec2& p) const { return a * p + t; }
  Vec2 flow(const Vec2& p) const { return apply(p) - p; }
};

struct RenderedPair {
  GrayImage first;
  GrayImage second;
  Warp warp;
  FloatImage flow_x;  // dense ground-truth flow over the first image
  FloatImage flow_y;
};

/// Band-limited random texture (Gaussian-filtered noise) sampled bilinearly
/// into both images; the second image is the first warped by `warp`.
/// Throws kPrecondition when the warp keeps less than half of the image.
RenderedPair render_textured_pair(std::uint64_t texture_seed, const Warp& warp, int width,
                                  int height);

/// Random multi-scale texture: six octaves of uniform noise, octave k drawn
/// on a grid 2^k times coarser, blurred by `blur` grid cells and weighted by
/// 2^(0.9k), summed and stretched to the range [20, 235].
FloatImage random_texture(std::uint64_t seed, int width, int height, double blur = 1.5);

/// Renders every frame of a planar scene by ray casting onto a textured
/// plane at z = scene.plane_z (1 texel = `texel` world units).
std::vector<GrayImage> render_plane_sequence(const SyntheticScene& scene,
                                             std::uint64_t texture_seed, double texel = 0.01);

/// Overwrites a (2 half + 1)^2 patch with uniform noise.
void paint_noise_patch(GrayImage& img, const Vec2& center, int half, std::uint64_t seed);

/// Scene dump format (plain text, `#` comments):
///   kind <planar|volumetric|loop>
///   seed <n>
///   plane_z <z>
///   camera fx fy cx cy k1 k2 p1 p2 width height
///   landmarks <N>       followed by N lines `x y z`
///   frames <M>          followed by M lines `t tx ty tz qx qy qz qw`
///                       (camera-in-world, as in trajectory files)
///   observations <K>    optional, K lines `frame track_id u v`
struct SceneFile {
  SyntheticScene scene;
  std::vector<std::vector<FeatureObservation>> observations;  // per frame, may be empty
};

void save_scene(const std::filesystem::path& path, const SyntheticScene& scene,
                const std::vector<std::vector<FeatureObservation>>& observations = {});
SceneFile load_scene(const std::filesystem::path& path);

}  // namespace uwvo
