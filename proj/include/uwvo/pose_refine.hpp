#pragma once

#include <span>
#include <vector>

#include "uwvo/essential.hpp"
#include "uwvo/geometry.hpp"
#include "uwvo/lm.hpp"
#include "uwvo/ransac.hpp"

namespace uwvo {

struct PoseRefinement {
  Pose pose;
  double initial_cost = 0.0;  // sum of squared pixel residuals
  double final_cost = 0.0;
  int iterations = 0;
  bool failed = false;        // initial pose returned unchanged
  LmSummary summary;
};

/// Minimizes sum_i |x_i - proj(T, X_i)|^2 over the six pose degrees of
/// freedom with Levenberg-Marquardt. Increments are applied on the left,
/// T <- (exp(w), v) * T. Stops on gradient < 1e-8, step < 1e-10 or 20
/// iterations. Needs at least 4 correspondences (kPrecondition otherwise).
PoseRefinement refine_pose(const Pose& initial, const CameraModel& cam,
                           std::span<const Vec3> landmarks,
                           std::span<const Vec2> observations);

/// Applies a left increment (w, v) to a pose.
Pose retract_pose(const Pose& pose, const Eigen::Matrix<double, 6, 1>& delta);

/// 2x6 Jacobian of the pixel projection of camera-frame point `pc` with
/// respect to a left pose increment.
Eigen::Matrix<double, 2, 6> projection_pose_jacobian(const CameraModel& cam, const Vec3& pc);

// ---------------------------------------------------------------------------
// RANSAC kernels

/// Five-point kernel over bearing pairs; residual is the symmetric angular
/// epipolar distance.
RansacKernel<EssentialMatrix> make_essential_kernel(std::span<const BearingPair> matches);

/// P3P kernel: draws four correspondences, solves on three, keeps the
/// candidate that best explains the fourth. Residual is the angular error
/// in radians. Refit runs refine_pose on the pixels of the inlier set.
RansacKernel<Pose> make_p3p_kernel(const CameraModel& cam, std::span<const Vec3> points,
                                   std::span<const Vec2> pixels);

}  // namespace uwvo
