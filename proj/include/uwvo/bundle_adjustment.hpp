#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "uwvo/geometry.hpp"

namespace uwvo {

struct WindowKeyframe {
  std::int64_t id = -1;
  Pose pose;
  /// Keeps the distance from the camera center to `scale_anchor` constant
  /// (bootstrap gauge: fixes the monocular scale).
  bool freeze_scale = false;
  Vec3 scale_anchor = Vec3::Zero();
};

struct WindowLandmark {
  std::int64_t id = -1;
  Vec3 position = Vec3::Zero();
};

struct WindowObservation {
  std::int64_t keyframe_id = -1;
  std::int64_t landmark_id = -1;
  Vec2 pixel = Vec2::Zero();
  double sigma = 1.0;  // isotropic pixel std-dev, Sigma = sigma^2 I
};

/// Local BA problem: mutable keyframes and landmarks are optimized, fixed
/// keyframes are constants that anchor the gauge.
struct OptimizationWindow {
  std::vector<WindowKeyframe> mutable_keyframes;
  std::vector<WindowKeyframe> fixed_keyframes;
  std::vector<WindowLandmark> landmarks;
  std::vector<WindowObservation> observations;

  /// Throws kInvalidWindow on dangling references, duplicate ids, no
  /// mutable keyframe or non-positive sigma.
  void validate() const;
};

struct RobustKernel {
  enum class Kind { kNone, kHuber };
  Kind kind = Kind::kHuber;
  double delta = 2.0;

  static RobustKernel huber(double delta) { return {Kind::kHuber, delta}; }
  static RobustKernel none() { return {Kind::kNone, 1.0}; }

  /// rho(s) on the squared whitened residual s.
  double rho(double s) const;
  /// d rho / ds.
  double weight(double s) const;
};

enum class BaLinearSolver { kSchur, kDense };

struct BaOptions {
  int max_iters = 30;
  double gradient_tol = 1e-10;
  double relative_cost_tol = 1e-12;
  double initial_lambda_scale = 1e-4;
  BaLinearSolver solver = BaLinearSolver::kSchur;
  std::ostream* diagnostics = nullptr;
};

struct BaStatistics {
  double pre_rmse = 0.0;   // pixel reprojection RMSE before
  double post_rmse = 0.0;  // and after
  double initial_cost = 0.0;  // sum of rho over observations
  double final_cost = 0.0;
  int iterations = 0;
  int accepted_steps = 0;
  std::vector<double> cost_history;  // after each accepted step
};

struct BaResult {
  OptimizationWindow window;
  BaStatistics stats;
};

/// Robust windowed bundle adjustment: minimizes sum rho(e^T Sigma^-1 e) with
/// e = x - proj(T, X) over mutable poses and all window landmarks.
BaResult local_bundle_adjust(const OptimizationWindow& window, const CameraModel& cam,
                             const RobustKernel& kernel, const BaOptions& options = {});

/// Removes landmarks with any reprojection error above `threshold_px` (or
/// behind a camera) and landmarks left with fewer than two observations.
/// Returns the removed ids in ascending order.
std::vector<std::int64_t> cull_outliers(OptimizationWindow& window, const CameraModel& cam,
                                        double threshold_px);

double reprojection_rmse(const OptimizationWindow& window, const CameraModel& cam);

namespace ba_detail {

/// Stacked whitened residuals, one 2-block per observation, in order.
Eigen::VectorXd residuals(const OptimizationWindow& window, const CameraModel& cam);

/// Dense Jacobian of `residuals` with respect to the tangent parameters:
/// mutable poses first (6 dof, 5 when freeze_scale), then landmarks (3 dof).
Eigen::MatrixXd jacobian(const OptimizationWindow& window, const CameraModel& cam);

int tangent_dim(const OptimizationWindow& window);

OptimizationWindow retract(const OptimizationWindow& window, const Eigen::VectorXd& delta);

/// One damped, IRLS-weighted Gauss-Newton step (H + lambda I) dx = -g.
Eigen::VectorXd solve_step(const OptimizationWindow& window, const CameraModel& cam,
                           const RobustKernel& kernel, double lambda, BaLinearSolver solver);

}  // namespace ba_detail

}  // namespace uwvo
