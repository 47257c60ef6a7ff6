#include "uwvo/geometry.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <sstream>

#include "uwvo/error.hpp"

namespace uwvo {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBehindCamera: return "behind-camera";
    case ErrorCode::kLowParallax: return "low-parallax";
    case ErrorCode::kCheirality: return "cheirality";
    case ErrorCode::kDegenerateConfiguration: return "degenerate-configuration";
    case ErrorCode::kAmbiguousDecomposition: return "ambiguous-decomposition";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kEstimationFailure: return "estimation-failure";
    case ErrorCode::kRefinementFailure: return "refinement-failure";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kPrecondition: return "precondition";
    case ErrorCode::kImageTooSmall: return "image-too-small";
    case ErrorCode::kAssociation: return "association";
    case ErrorCode::kInvalidWindow: return "invalid-window";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

Pose::Pose(const Quat& rotation, const Vec3& translation)
    : q_(rotation.normalized()), t_(translation) {}

Pose::Pose(const Mat3& rotation, const Vec3& translation)
    : q_(Quat(rotation).normalized()), t_(translation) {}

Pose Pose::from_camera_in_world(const Quat& orientation, const Vec3& center) {
  const Quat r = orientation.conjugate().normalized();
  return Pose(r, -(r * center));
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = t_;
  return m;
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose(a.rotation() * b.rotation(),
              a.rotation() * b.translation() + a.translation());
}

Pose inverse(const Pose& a) {
  const Quat qi = a.rotation().conjugate();
  return Pose(qi, -(qi * a.translation()));
}

Vec3 rotate_bearing(const Quat& q, const Vec3& v) { return q * v; }

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

Quat exp_so3(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-10) {
    // second-order Taylor expansion keeps the map smooth at zero
    Quat q(1.0 - theta * theta / 8.0, 0.5 * omega.x(), 0.5 * omega.y(),
           0.5 * omega.z());
    return q.normalized();
  }
  const Vec3 axis = omega / theta;
  return Quat(Eigen::AngleAxisd(theta, axis));
}

Vec3 log_so3(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  const double theta = 2.0 * std::atan2(s, q.w());
  return v * (theta / s);
}

double rotation_angle(const Quat& a, const Quat& b) {
  return log_so3(a.conjugate() * b).norm();
}

void CameraModel::validate() const {
  std::ostringstream msg;
  if (!(fx > 0.0) || !(fy > 0.0)) {
    msg << "focal lengths must be positive (fx=" << fx << ", fy=" << fy << ")";
    fail(ErrorCode::kValidation, msg.str());
  }
  if (width <= 0 || height <= 0) {
    msg << "image size must be positive (" << width << "x" << height << ")";
    fail(ErrorCode::kValidation, msg.str());
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    msg << "principal point (" << cx << ", " << cy << ") outside image";
    fail(ErrorCode::kValidation, msg.str());
  }
  for (double d : {k1, k2, p1, p2}) {
    if (!std::isfinite(d)) fail(ErrorCode::kValidation, "non-finite distortion");
  }
}

namespace {

Vec2 distort_normalized(const CameraModel& cam, const Vec2& n) {
  const double x = n.x();
  const double y = n.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + cam.k1 * r2 + cam.k2 * r2 * r2;
  const double dx = 2.0 * cam.p1 * x * y + cam.p2 * (r2 + 2.0 * x * x);
  const double dy = cam.p1 * (r2 + 2.0 * y * y) + 2.0 * cam.p2 * x * y;
  return {x * radial + dx, y * radial + dy};
}

}  // namespace

Vec2 CameraModel::distort(const Vec2& px) const {
  return denormalize(distort_normalized(*this, normalize(px)));
}

Vec2 undistort_pixel(const CameraModel& cam, const Vec2& raw) {
  if (!cam.has_distortion()) return raw;
  const Vec2 target = cam.normalize(raw);
  Vec2 n = target;
  double residual_px = 0.0;
  for (int it = 0; it < 20; ++it) {
    const double x = n.x();
    const double y = n.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + cam.k1 * r2 + cam.k2 * r2 * r2;
    const double dx = 2.0 * cam.p1 * x * y + cam.p2 * (r2 + 2.0 * x * x);
    const double dy = cam.p1 * (r2 + 2.0 * y * y) + 2.0 * cam.p2 * x * y;
    n = Vec2((target.x() - dx) / radial, (target.y() - dy) / radial);
    const Vec2 err = distort_normalized(cam, n) - target;
    residual_px = std::hypot(err.x() * cam.fx, err.y() * cam.fy);
    if (residual_px < 1e-8) return cam.denormalize(n);
  }
  std::ostringstream msg;
  msg << "undistortion did not converge at (" << raw.x() << ", " << raw.y()
      << "), residual " << residual_px << " px";
  fail(ErrorCode::kNumeric, msg.str());
}

Vec2 project(const Pose& pose, const CameraModel& cam, const Vec3& point) {
  const Vec3 pc = pose.transform(point);
  if (!(pc.z() > 0.0)) {
    fail(ErrorCode::kBehindCamera, "point has non-positive depth in camera");
  }
  return {cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy};
}

namespace {

// Two rows spanning the orthogonal complement of a unit vector.
Eigen::Matrix<double, 2, 3> complement_basis(const Vec3& b) {
  Vec3 helper = std::abs(b.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 u1 = b.cross(helper).normalized();
  const Vec3 u2 = b.cross(u1).normalized();
  Eigen::Matrix<double, 2, 3> m;
  m.row(0) = u1.transpose();
  m.row(1) = u2.transpose();
  return m;
}

}  // namespace

Vec3 triangulate_bearings(const Pose& pose_a, const Pose& pose_b,
                          const Vec3& bearing_a, const Vec3& bearing_b) {
  const Vec3 ba = bearing_a.normalized();
  const Vec3 bb = bearing_b.normalized();

  const Vec3 ray_a = pose_a.rotation().conjugate() * ba;
  const Vec3 ray_b = pose_b.rotation().conjugate() * bb;
  const double angle = std::atan2(ray_a.cross(ray_b).norm(), ray_a.dot(ray_b));
  const double baseline = (pose_a.center() - pose_b.center()).norm();
  if (baseline < 1e-12 || angle < kMinTriangulationAngle) {
    fail(ErrorCode::kLowParallax, "triangulation parallax angle below 1e-3 rad");
  }

  Eigen::Matrix<double, 3, 4> pa;
  pa << pose_a.rotation_matrix(), pose_a.translation();
  Eigen::Matrix<double, 3, 4> pb;
  pb << pose_b.rotation_matrix(), pose_b.translation();

  Eigen::Matrix4d a;
  a.topRows<2>() = complement_basis(ba) * pa;
  a.bottomRows<2>() = complement_basis(bb) * pb;

  Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-14 * h.head<3>().norm()) {
    fail(ErrorCode::kLowParallax, "triangulated point at infinity");
  }
  const Vec3 x = h.head<3>() / h(3);

  if (!(pose_a.transform(x).dot(ba) > 0.0) ||
      !(pose_b.transform(x).dot(bb) > 0.0)) {
    fail(ErrorCode::kCheirality, "triangulated point behind a camera");
  }
  return x;
}

Vec3 triangulate(const Pose& pose_a, const Pose& pose_b, const CameraModel& cam,
                 const Vec2& obs_a, const Vec2& obs_b) {
  const Vec2 na = cam.normalize(obs_a);
  const Vec2 nb = cam.normalize(obs_b);
  return triangulate_bearings(pose_a, pose_b, Vec3(na.x(), na.y(), 1.0),
                              Vec3(nb.x(), nb.y(), 1.0));
}

}  // namespace uwvo
