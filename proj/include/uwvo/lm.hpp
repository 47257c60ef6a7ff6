#pragma once

#include <Eigen/Core>

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace uwvo {

struct LmOptions {
  int max_iters = 100;
  double gradient_tol = 1e-8;        // infinity norm of J^T r
  double relative_cost_tol = 1e-10;  // on accepted steps
  double step_tol = 0.0;             // step norm; 0 disables
  double initial_lambda_scale = 1e-5;
  double lambda_up = 2.0;
  double lambda_down = 1.0 / 3.0;
  /// Optional per-iteration dump: iteration, cost, damping, step norm.
  std::ostream* diagnostics = nullptr;
};

enum class LmStop {
  kGradient,
  kRelativeCost,
  kStepSize,
  kMaxIterations,
  kDampingOverflow,
};

std::string to_string(LmStop stop);

struct LmSummary {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  int accepted_steps = 0;
  LmStop stop = LmStop::kMaxIterations;
  /// Cost after every accepted step, starting with the initial cost.
  std::vector<double> cost_history;
};

/// Dense least-squares problem. The parameter vector may live on a manifold:
/// `jacobian` is taken with respect to a tangent increment of size
/// `tangent_dim` and `retract` applies such an increment. Without `retract`
/// the increment is added and tangent_dim equals the parameter size.
struct LmProblem {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> residual;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> retract;
};

struct LmResult {
  Eigen::VectorXd x;
  LmSummary summary;
};

/// Levenberg-Marquardt on cost = ||r||^2 with (J^T J + lambda I) damping.
/// Lambda starts at initial_lambda_scale * trace(J^T J) / n and is multiplied
/// by lambda_up on rejection and lambda_down on acceptance. Only steps that
/// lower the cost are accepted.
///
/// Throws kDimensionMismatch when J and r disagree and kNumeric for a
/// non-finite residual at x0.
LmResult levenberg_marquardt(const LmProblem& problem, const Eigen::VectorXd& x0,
                             const LmOptions& options = {});

}  // namespace uwvo
