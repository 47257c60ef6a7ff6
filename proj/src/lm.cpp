#include "uwvo/lm.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "uwvo/error.hpp"

namespace uwvo {

std::string to_string(LmStop stop) {
  switch (stop) {
    case LmStop::kGradient: return "gradient";
    case LmStop::kRelativeCost: return "relative-cost";
    case LmStop::kStepSize: return "step-size";
    case LmStop::kMaxIterations: return "max-iterations";
    case LmStop::kDampingOverflow: return "damping-overflow";
  }
  return "unknown";
}

LmResult levenberg_marquardt(const LmProblem& problem, const Eigen::VectorXd& x0,
                             const LmOptions& options) {
  auto retract = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& dx) -> Eigen::VectorXd {
    if (problem.retract) return problem.retract(x, dx);
    return x + dx;
  };

  LmResult result;
  result.x = x0;
  Eigen::VectorXd r = problem.residual(result.x);
  if (!r.allFinite()) fail(ErrorCode::kNumeric, "non-finite residual at initial point");
  double cost = r.squaredNorm();
  result.summary.initial_cost = cost;
  result.summary.final_cost = cost;
  result.summary.cost_history.push_back(cost);

  Eigen::MatrixXd jac = problem.jacobian(result.x);
  if (jac.rows() != r.rows() || (!problem.retract && jac.cols() != x0.size())) {
    std::ostringstream msg;
    msg << "jacobian is " << jac.rows() << "x" << jac.cols() << " for " << r.rows()
        << " residuals and " << x0.size() << " parameters";
    fail(ErrorCode::kDimensionMismatch, msg.str());
  }

  Eigen::MatrixXd hessian = jac.transpose() * jac;
  Eigen::VectorXd gradient = jac.transpose() * r;
  const double n = static_cast<double>(std::max<Eigen::Index>(hessian.rows(), 1));
  double lambda = options.initial_lambda_scale * hessian.trace() / n;
  if (!(lambda > 0.0)) lambda = options.initial_lambda_scale;

  bool done = false;
  while (!done) {
    if (gradient.lpNorm<Eigen::Infinity>() < options.gradient_tol) {
      result.summary.stop = LmStop::kGradient;
      break;
    }
    if (result.summary.iterations >= options.max_iters) {
      result.summary.stop = LmStop::kMaxIterations;
      break;
    }
    ++result.summary.iterations;

    Eigen::MatrixXd damped = hessian;
    damped.diagonal().array() += lambda;
    const Eigen::VectorXd step = damped.ldlt().solve(-gradient);
    const double step_norm = step.norm();
    const Eigen::VectorXd candidate = retract(result.x, step);
    const Eigen::VectorXd r_new = problem.residual(candidate);
    const double new_cost = r_new.allFinite() ? r_new.squaredNorm()
                                              : std::numeric_limits<double>::infinity();

    if (options.diagnostics) {
      *options.diagnostics << result.summary.iterations << " " << cost << " " << lambda << " "
                           << step_norm << (new_cost < cost ? " accept" : " reject") << "\n";
    }

    if (step.allFinite() && new_cost < cost) {
      const double rel = (cost - new_cost) / std::max(cost, 1e-300);
      result.x = candidate;
      r = r_new;
      cost = new_cost;
      ++result.summary.accepted_steps;
      result.summary.cost_history.push_back(cost);
      lambda *= options.lambda_down;
      jac = problem.jacobian(result.x);
      hessian = jac.transpose() * jac;
      gradient = jac.transpose() * r;
      if (rel < options.relative_cost_tol) {
        result.summary.stop = LmStop::kRelativeCost;
        done = true;
      } else if (options.step_tol > 0.0 && step_norm < options.step_tol) {
        result.summary.stop = LmStop::kStepSize;
        done = true;
      }
    } else {
      lambda *= options.lambda_up;
      if (options.step_tol > 0.0 && step_norm < options.step_tol) {
        result.summary.stop = LmStop::kStepSize;
        done = true;
      } else if (lambda > 1e32) {
        result.summary.stop = LmStop::kDampingOverflow;
        done = true;
      }
    }
  }
  result.summary.final_cost = cost;
  return result;
}

}  // namespace uwvo
