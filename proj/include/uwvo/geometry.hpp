#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <map>

namespace uwvo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Rigid transform mapping world coordinates into the camera frame
/// (x_cam = R * x_world + t).
///
/// The rotation is a unit quaternion. Eigen stores quaternion coefficients
/// as (x, y, z, w), i.e. scalar-last, and that is the order used whenever a
/// pose is serialized. Every constructor and composition renormalizes.
class Pose {
 public:
  Pose() = default;
  Pose(const Quat& rotation, const Vec3& translation);
  Pose(const Mat3& rotation, const Vec3& translation);

  static Pose identity() { return {}; }

  /// Pose whose camera sits at `center` (world frame) with camera-to-world
  /// rotation `orientation`.
  static Pose from_camera_in_world(const Quat& orientation, const Vec3& center);

  const Quat& rotation() const { return q_; }
  const Vec3& translation() const { return t_; }
  Mat3 rotation_matrix() const { return q_.toRotationMatrix(); }

  /// Camera center in world coordinates, -R^T t.
  Vec3 center() const { return -(q_.conjugate() * t_); }

  Vec3 transform(const Vec3& p) const { return q_ * p + t_; }

  Eigen::Matrix4d matrix() const;

 private:
  Quat q_ = Quat::Identity();
  Vec3 t_ = Vec3::Zero();
};

/// (a * b)(x) = a(b(x)).
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& a);
Vec3 rotate_bearing(const Quat& q, const Vec3& v);

/// Rotation vector <-> quaternion (SO(3) exponential / logarithm).
Quat exp_so3(const Vec3& omega);
Vec3 log_so3(const Quat& q);
Mat3 skew(const Vec3& v);

/// Angle of the relative rotation between two quaternions, in radians.
double rotation_angle(const Quat& a, const Quat& b);

/// Pinhole camera with radial-tangential (k1, k2, p1, p2) distortion.
struct CameraModel {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;
  int width = 1;
  int height = 1;

  /// Throws kValidation when intrinsics are out of range.
  void validate() const;

  bool in_bounds(const Vec2& px, double margin = 0.0) const {
    return px.x() >= margin && px.y() >= margin &&
           px.x() <= width - 1 - margin && px.y() <= height - 1 - margin;
  }

  Vec2 normalize(const Vec2& px) const {
    return {(px.x() - cx) / fx, (px.y() - cy) / fy};
  }
  Vec2 denormalize(const Vec2& xy) const {
    return {fx * xy.x() + cx, fy * xy.y() + cy};
  }
  /// Unit bearing of an undistorted pixel.
  Vec3 bearing(const Vec2& px) const {
    const Vec2 n = normalize(px);
    return Vec3(n.x(), n.y(), 1.0).normalized();
  }

  /// Applies the lens distortion to an undistorted pixel.
  Vec2 distort(const Vec2& px) const;

  bool has_distortion() const {
    return k1 != 0.0 || k2 != 0.0 || p1 != 0.0 || p2 != 0.0;
  }
};

/// Pixel whose distortion reproduces `raw`. Fixed-point iteration on the
/// normalized coordinates; throws kNumeric when 20 iterations do not reach
/// 1e-8 px.
Vec2 undistort_pixel(const CameraModel& cam, const Vec2& raw);

/// Pinhole projection of a world point, no distortion. Throws kBehindCamera
/// for non-positive camera-frame depth.
Vec2 project(const Pose& pose, const CameraModel& cam, const Vec3& point);

/// Two-view linear (DLT) triangulation from undistorted pixels.
Vec3 triangulate(const Pose& pose_a, const Pose& pose_b, const CameraModel& cam,
                 const Vec2& obs_a, const Vec2& obs_b);

/// Same, with unit bearings in each camera frame.
Vec3 triangulate_bearings(const Pose& pose_a, const Pose& pose_b,
                          const Vec3& bearing_a, const Vec3& bearing_b);

inline constexpr double kMinTriangulationAngle = 1e-3;

enum class LandmarkStatus { kActive, kCulled };

struct Landmark {
  std::int64_t id = -1;
  Vec3 position = Vec3::Zero();
  /// keyframe id -> undistorted pixel observation.
  std::map<std::int64_t, Vec2> observations;
  LandmarkStatus status = LandmarkStatus::kActive;

  bool active() const { return status == LandmarkStatus::kActive; }
};

}  // namespace uwvo
