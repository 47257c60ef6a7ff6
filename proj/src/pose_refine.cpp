#include "uwvo/pose_refine.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "uwvo/error.hpp"
#include "uwvo/p3p.hpp"

namespace uwvo {

Pose retract_pose(const Pose& pose, const Eigen::Matrix<double, 6, 1>& delta) {
  const Quat dq = exp_so3(delta.head<3>());
  return Pose(dq * pose.rotation(), dq * pose.translation() + delta.tail<3>());
}

Eigen::Matrix<double, 2, 6> projection_pose_jacobian(const CameraModel& cam, const Vec3& pc) {
  const double iz = 1.0 / pc.z();
  const double iz2 = iz * iz;
  Eigen::Matrix<double, 2, 3> dproj;
  dproj << cam.fx * iz, 0.0, -cam.fx * pc.x() * iz2,
           0.0, cam.fy * iz, -cam.fy * pc.y() * iz2;
  Eigen::Matrix<double, 3, 6> dpc;
  dpc.leftCols<3>() = -skew(pc);
  dpc.rightCols<3>() = Mat3::Identity();
  return dproj * dpc;
}

namespace {

Eigen::VectorXd pack(const Pose& p) {
  Eigen::VectorXd x(7);
  x << p.rotation().coeffs(), p.translation();
  return x;
}

Pose unpack(const Eigen::VectorXd& x) {
  return Pose(Quat(x(3), x(0), x(1), x(2)), Vec3(x.tail<3>()));
}

}  // namespace

PoseRefinement refine_pose(const Pose& initial, const CameraModel& cam,
                           std::span<const Vec3> landmarks,
                           std::span<const Vec2> observations) {
  if (landmarks.size() != observations.size()) {
    fail(ErrorCode::kPrecondition, "landmarks and observations differ in length");
  }
  if (landmarks.size() < 4) {
    fail(ErrorCode::kPrecondition, "pose refinement needs at least 4 correspondences");
  }
  const std::size_t n = landmarks.size();

  LmProblem problem;
  problem.residual = [&](const Eigen::VectorXd& x) {
    const Pose pose = unpack(x);
    Eigen::VectorXd r(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 pc = pose.transform(landmarks[i]);
      if (!(pc.z() > 0.0)) {
        r.segment<2>(2 * i).setConstant(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      const Vec2 proj(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
      r.segment<2>(2 * i) = observations[i] - proj;
    }
    return r;
  };
  problem.jacobian = [&](const Eigen::VectorXd& x) {
    const Pose pose = unpack(x);
    Eigen::MatrixXd j(2 * n, 6);
    for (std::size_t i = 0; i < n; ++i) {
      j.block<2, 6>(2 * i, 0) = -projection_pose_jacobian(cam, pose.transform(landmarks[i]));
    }
    return j;
  };
  problem.retract = [](const Eigen::VectorXd& x, const Eigen::VectorXd& dx) {
    return pack(retract_pose(unpack(x), dx.head<6>()));
  };

  LmOptions options;
  options.max_iters = 20;
  options.gradient_tol = 1e-8;
  options.step_tol = 1e-10;
  options.relative_cost_tol = 0.0;

  PoseRefinement out;
  out.pose = initial;
  LmResult lm;
  try {
    lm = levenberg_marquardt(problem, pack(initial), options);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNumeric) throw;
    out.failed = true;
    out.initial_cost = out.final_cost = std::numeric_limits<double>::infinity();
    return out;
  }
  out.summary = lm.summary;
  out.initial_cost = lm.summary.initial_cost;
  out.final_cost = lm.summary.final_cost;
  out.iterations = lm.summary.iterations;
  if (lm.summary.accepted_steps == 0 && lm.summary.stop != LmStop::kGradient) {
    out.failed = true;
    return out;
  }
  out.pose = unpack(lm.x);
  return out;
}

// ---------------------------------------------------------------------------

RansacKernel<EssentialMatrix> make_essential_kernel(std::span<const BearingPair> matches) {
  RansacKernel<EssentialMatrix> k;
  k.sample_size = 5;
  k.minimal_size = 5;
  k.solve = [matches](std::span<const std::size_t> idx) {
    std::array<Vec3, 5> a, b;
    for (int i = 0; i < 5; ++i) {
      a[i] = matches[idx[i]].a;
      b[i] = matches[idx[i]].b;
    }
    return essential_5pt(a, b);
  };
  k.residual = [matches](const EssentialMatrix& e, std::size_t i) {
    return symmetric_angular_distance(e, matches[i]);
  };
  return k;
}

RansacKernel<Pose> make_p3p_kernel(const CameraModel& cam, std::span<const Vec3> points,
                                   std::span<const Vec2> pixels) {
  auto bearings = std::make_shared<std::vector<Vec3>>();
  bearings->reserve(pixels.size());
  for (const Vec2& px : pixels) bearings->push_back(cam.bearing(px));

  RansacKernel<Pose> k;
  k.sample_size = 4;
  k.minimal_size = 3;
  k.solve = [bearings, points](std::span<const std::size_t> idx) {
    const std::array<Vec3, 3> f = {(*bearings)[idx[0]], (*bearings)[idx[1]],
                                   (*bearings)[idx[2]]};
    const std::array<Vec3, 3> p = {points[idx[0]], points[idx[1]], points[idx[2]]};
    const std::vector<Pose> candidates = p3p(f, p);
    std::vector<Pose> best;
    double best_err = std::numeric_limits<double>::infinity();
    for (const Pose& c : candidates) {
      const double err = angular_residual(c, (*bearings)[idx[3]], points[idx[3]]);
      if (err < best_err) {
        best_err = err;
        best = {c};
      }
    }
    return best;
  };
  k.residual = [bearings, points](const Pose& pose, std::size_t i) {
    return angular_residual(pose, (*bearings)[i], points[i]);
  };
  k.refit = [cam, points, pixels](const Pose& model,
                                  std::span<const std::size_t> inliers) -> std::optional<Pose> {
    if (inliers.size() < 4) return std::nullopt;
    std::vector<Vec3> pts;
    std::vector<Vec2> obs;
    for (std::size_t i : inliers) {
      pts.push_back(points[i]);
      obs.push_back(pixels[i]);
    }
    const PoseRefinement ref = refine_pose(model, cam, pts, obs);
    if (ref.failed) return std::nullopt;
    return ref.pose;
  };
  return k;
}

}  // namespace uwvo
