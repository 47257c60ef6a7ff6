#include "uwvo/bundle_adjustment.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <set>
#include <unordered_map>

#include "uwvo/error.hpp"

namespace uwvo {

namespace {

using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat32 = Eigen::Matrix<double, 3, 2>;

// Orthonormal basis of the plane orthogonal to u, a deterministic function of u.
Mat32 tangent_basis(const Vec3& u) {
  const Vec3 n = u.normalized();
  Eigen::Index k = 0;
  n.cwiseAbs().minCoeff(&k);
  const Vec3 b1 = n.cross(Vec3::Unit(k)).normalized();
  const Vec3 b2 = n.cross(b1);
  Mat32 b;
  b << b1, b2;
  return b;
}

int pose_dof(const WindowKeyframe& kf) { return kf.freeze_scale ? 5 : 6; }

Pose retract_keyframe(const WindowKeyframe& kf, const Eigen::VectorXd& d) {
  const Quat dq = exp_so3(d.head<3>());
  const Quat r = dq * kf.pose.rotation();
  if (!kf.freeze_scale) return Pose(r, dq * kf.pose.translation() + d.segment<3>(3));
  // anchor in the camera frame keeps its length
  const Vec3 u = kf.pose.transform(kf.scale_anchor);
  const Vec3 moved = dq * (u + tangent_basis(u) * d.segment<2>(3));
  const Vec3 u_new = u.norm() * moved.normalized();
  return Pose(r, u_new - (r * kf.scale_anchor));
}

struct Layout {
  std::unordered_map<std::int64_t, int> mutable_index;
  std::unordered_map<std::int64_t, int> fixed_index;
  std::unordered_map<std::int64_t, int> landmark_index;
  std::vector<int> pose_offset;  // per mutable keyframe
  int pose_block = 0;            // total pose tangent size
  int size = 0;

  explicit Layout(const OptimizationWindow& w) {
    for (std::size_t i = 0; i < w.mutable_keyframes.size(); ++i) {
      mutable_index[w.mutable_keyframes[i].id] = static_cast<int>(i);
      pose_offset.push_back(pose_block);
      pose_block += pose_dof(w.mutable_keyframes[i]);
    }
    for (std::size_t i = 0; i < w.fixed_keyframes.size(); ++i) {
      fixed_index[w.fixed_keyframes[i].id] = static_cast<int>(i);
    }
    for (std::size_t i = 0; i < w.landmarks.size(); ++i) {
      landmark_index[w.landmarks[i].id] = static_cast<int>(i);
    }
    size = pose_block + 3 * static_cast<int>(w.landmarks.size());
  }

  int landmark_offset(int l) const { return pose_block + 3 * l; }
};

// Per-observation linearization: whitened residual and its blocks.
struct ObsTerm {
  Vec2 e = Vec2::Zero();
  bool valid = false;
  int pose = -1;  // mutable index, -1 when fixed
  int landmark = -1;
  Eigen::Matrix<double, 2, 6> jp;  // only first pose_dof columns used
  Mat23 jl;
};

const Pose& keyframe_pose(const OptimizationWindow& w, const Layout& lay, std::int64_t id,
                          int& mutable_idx) {
  if (auto it = lay.mutable_index.find(id); it != lay.mutable_index.end()) {
    mutable_idx = it->second;
    return w.mutable_keyframes[it->second].pose;
  }
  mutable_idx = -1;
  return w.fixed_keyframes[lay.fixed_index.at(id)].pose;
}

ObsTerm linearize(const OptimizationWindow& w, const Layout& lay, const CameraModel& cam,
                  const WindowObservation& o, bool with_jacobian) {
  ObsTerm t;
  const Pose& pose = keyframe_pose(w, lay, o.keyframe_id, t.pose);
  t.landmark = lay.landmark_index.at(o.landmark_id);
  const Vec3 pc = pose.transform(w.landmarks[t.landmark].position);
  if (!(pc.z() > 0.0)) {
    t.e.setConstant(std::numeric_limits<double>::quiet_NaN());
    return t;
  }
  t.valid = true;
  const double iz = 1.0 / pc.z();
  const Vec2 proj(cam.fx * pc.x() * iz + cam.cx, cam.fy * pc.y() * iz + cam.cy);
  const double inv_sigma = 1.0 / o.sigma;
  t.e = (o.pixel - proj) * inv_sigma;
  if (!with_jacobian) return t;

  Mat23 dproj;
  dproj << cam.fx * iz, 0.0, -cam.fx * pc.x() * iz * iz,
           0.0, cam.fy * iz, -cam.fy * pc.y() * iz * iz;
  const Mat23 de_dpc = -inv_sigma * dproj;
  t.jl = de_dpc * pose.rotation_matrix();
  t.jp.setZero();
  if (t.pose >= 0) {
    const WindowKeyframe& kf = w.mutable_keyframes[t.pose];
    t.jp.leftCols<3>() = -de_dpc * skew(pc);
    if (kf.freeze_scale) {
      t.jp.block<2, 2>(0, 3) = de_dpc * tangent_basis(kf.pose.transform(kf.scale_anchor));
    } else {
      t.jp.block<2, 3>(0, 3) = de_dpc;
    }
  }
  return t;
}

double robust_cost(const OptimizationWindow& w, const Layout& lay, const CameraModel& cam,
                   const RobustKernel& kernel) {
  double cost = 0.0;
  for (const WindowObservation& o : w.observations) {
    const ObsTerm t = linearize(w, lay, cam, o, false);
    if (!t.valid) return std::numeric_limits<double>::infinity();
    cost += kernel.rho(t.e.squaredNorm());
  }
  return cost;
}

struct NormalEquations {
  Eigen::MatrixXd u;                 // pose block
  Eigen::MatrixXd w;                 // pose x landmark
  std::vector<Eigen::Matrix3d> v;    // landmark diagonal blocks
  Eigen::VectorXd g;                 // full gradient J^T W e
};

NormalEquations build_normal_equations(const OptimizationWindow& win, const Layout& lay,
                                       const CameraModel& cam, const RobustKernel& kernel) {
  NormalEquations ne;
  const int p = lay.pose_block;
  const int nl = static_cast<int>(win.landmarks.size());
  ne.u = Eigen::MatrixXd::Zero(p, p);
  ne.w = Eigen::MatrixXd::Zero(p, 3 * nl);
  ne.v.assign(nl, Eigen::Matrix3d::Zero());
  ne.g = Eigen::VectorXd::Zero(lay.size);
  for (const WindowObservation& o : win.observations) {
    const ObsTerm t = linearize(win, lay, cam, o, true);
    if (!t.valid) fail(ErrorCode::kNumeric, "bundle adjustment: point behind a camera");
    const double wt = kernel.weight(t.e.squaredNorm());
    const int lo = lay.landmark_offset(t.landmark);
    ne.v[t.landmark] += wt * t.jl.transpose() * t.jl;
    ne.g.segment<3>(lo) += wt * t.jl.transpose() * t.e;
    if (t.pose >= 0) {
      const int d = pose_dof(win.mutable_keyframes[t.pose]);
      const int po = lay.pose_offset[t.pose];
      const Eigen::MatrixXd jp = t.jp.leftCols(d);
      ne.u.block(po, po, d, d) += wt * jp.transpose() * jp;
      ne.w.block(po, 3 * t.landmark, d, 3) += wt * jp.transpose() * t.jl;
      ne.g.segment(po, d) += wt * jp.transpose() * t.e;
    }
  }
  return ne;
}

// (H + lambda I) x with H kept in block form
Eigen::VectorXd apply_damped(const NormalEquations& ne, int p, double lambda,
                             const Eigen::VectorXd& x) {
  const int nl = static_cast<int>(ne.v.size());
  Eigen::VectorXd y = lambda * x;
  y.head(p).noalias() += ne.u * x.head(p) + ne.w * x.tail(3 * nl);
  y.tail(3 * nl).noalias() += ne.w.transpose() * x.head(p);
  for (int l = 0; l < nl; ++l) y.segment<3>(p + 3 * l) += ne.v[l] * x.segment<3>(p + 3 * l);
  return y;
}

Eigen::VectorXd solve_normal_equations(const NormalEquations& ne, const Layout& lay,
                                       double lambda, BaLinearSolver solver) {
  const int p = lay.pose_block;
  const int nl = static_cast<int>(ne.v.size());
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> solve;

  Eigen::LDLT<Eigen::MatrixXd> dense_ldlt;
  Eigen::LDLT<Eigen::MatrixXd> s_ldlt;
  std::vector<Eigen::Matrix3d> v_inv(nl);
  if (solver == BaLinearSolver::kDense) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(lay.size, lay.size);
    h.topLeftCorner(p, p) = ne.u;
    h.topRightCorner(p, 3 * nl) = ne.w;
    h.bottomLeftCorner(3 * nl, p) = ne.w.transpose();
    for (int l = 0; l < nl; ++l) h.block<3, 3>(p + 3 * l, p + 3 * l) = ne.v[l];
    h.diagonal().array() += lambda;
    dense_ldlt.compute(h);
    solve = [&](const Eigen::VectorXd& b) -> Eigen::VectorXd { return dense_ldlt.solve(b); };
  } else {
    // Schur complement on the landmark blocks
    for (int l = 0; l < nl; ++l) {
      Eigen::Matrix3d vl = ne.v[l];
      vl.diagonal().array() += lambda;
      v_inv[l] = vl.inverse();
    }
    Eigen::MatrixXd s = ne.u;
    s.diagonal().array() += lambda;
    for (int l = 0; l < nl; ++l) {
      const Eigen::MatrixXd wl = ne.w.middleCols(3 * l, 3);
      s.noalias() -= (wl * v_inv[l]) * wl.transpose();
    }
    if (p > 0) s_ldlt.compute(s);
    solve = [&](const Eigen::VectorXd& b) -> Eigen::VectorXd {
      Eigen::VectorXd x(lay.size);
      Eigen::VectorXd rhs = b.head(p);
      for (int l = 0; l < nl; ++l) {
        rhs.noalias() -= ne.w.middleCols(3 * l, 3) * (v_inv[l] * b.segment<3>(p + 3 * l));
      }
      if (p > 0) x.head(p) = s_ldlt.solve(rhs);
      for (int l = 0; l < nl; ++l) {
        const Eigen::Vector3d bl =
            b.segment<3>(p + 3 * l) - ne.w.middleCols(3 * l, 3).transpose() * x.head(p);
        x.segment<3>(p + 3 * l) = v_inv[l] * bl;
      }
      return x;
    };
  }

  // one step of iterative refinement; damped windows with a free gauge are poorly conditioned
  Eigen::VectorXd dx = solve(-ne.g);
  dx += solve(-ne.g - apply_damped(ne, p, lambda, dx));
  return dx;
}

OptimizationWindow apply_delta(const OptimizationWindow& w, const Layout& lay,
                               const Eigen::VectorXd& delta) {
  OptimizationWindow out = w;
  for (std::size_t i = 0; i < w.mutable_keyframes.size(); ++i) {
    const int d = pose_dof(w.mutable_keyframes[i]);
    Eigen::VectorXd di = Eigen::VectorXd::Zero(6);
    di.head(d) = delta.segment(lay.pose_offset[i], d);
    out.mutable_keyframes[i].pose = retract_keyframe(w.mutable_keyframes[i], di);
  }
  for (std::size_t l = 0; l < w.landmarks.size(); ++l) {
    out.landmarks[l].position += delta.segment<3>(lay.landmark_offset(static_cast<int>(l)));
  }
  return out;
}

}  // namespace

void OptimizationWindow::validate() const {
  if (mutable_keyframes.empty()) fail(ErrorCode::kInvalidWindow, "window has no mutable keyframe");
  std::set<std::int64_t> kf_ids;
  for (const auto* list : {&mutable_keyframes, &fixed_keyframes}) {
    for (const WindowKeyframe& kf : *list) {
      if (!kf_ids.insert(kf.id).second) {
        fail(ErrorCode::kInvalidWindow, "duplicate keyframe id " + std::to_string(kf.id));
      }
      if (!kf.pose.translation().allFinite() || !kf.pose.rotation().coeffs().allFinite()) {
        fail(ErrorCode::kInvalidWindow, "non-finite keyframe pose");
      }
      if (kf.freeze_scale && kf.pose.transform(kf.scale_anchor).norm() <= 0.0) {
        fail(ErrorCode::kInvalidWindow, "scale-frozen keyframe sits on its anchor");
      }
    }
  }
  std::set<std::int64_t> lm_ids;
  for (const WindowLandmark& l : landmarks) {
    if (!lm_ids.insert(l.id).second) {
      fail(ErrorCode::kInvalidWindow, "duplicate landmark id " + std::to_string(l.id));
    }
    if (!l.position.allFinite()) fail(ErrorCode::kInvalidWindow, "non-finite landmark");
  }
  for (const WindowObservation& o : observations) {
    if (!kf_ids.count(o.keyframe_id)) {
      fail(ErrorCode::kInvalidWindow,
           "observation references keyframe " + std::to_string(o.keyframe_id) + " outside window");
    }
    if (!lm_ids.count(o.landmark_id)) {
      fail(ErrorCode::kInvalidWindow,
           "observation references landmark " + std::to_string(o.landmark_id) + " outside window");
    }
    if (!(o.sigma > 0.0)) fail(ErrorCode::kInvalidWindow, "observation sigma must be positive");
  }
}

double RobustKernel::rho(double s) const {
  if (kind == Kind::kNone || s <= delta * delta) return s;
  return 2.0 * delta * std::sqrt(s) - delta * delta;
}

double RobustKernel::weight(double s) const {
  if (kind == Kind::kNone || s <= delta * delta) return 1.0;
  return delta / std::sqrt(s);
}

double reprojection_rmse(const OptimizationWindow& window, const CameraModel& cam) {
  if (window.observations.empty()) return 0.0;
  const Layout lay(window);
  double sum = 0.0;
  for (const WindowObservation& o : window.observations) {
    const ObsTerm t = linearize(window, lay, cam, o, false);
    if (!t.valid) return std::numeric_limits<double>::infinity();
    sum += (t.e * o.sigma).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(window.observations.size()));
}

BaResult local_bundle_adjust(const OptimizationWindow& window, const CameraModel& cam,
                             const RobustKernel& kernel, const BaOptions& options) {
  window.validate();
  if (kernel.kind == RobustKernel::Kind::kHuber && !(kernel.delta > 0.0)) {
    fail(ErrorCode::kPrecondition, "Huber delta must be positive");
  }
  const Layout lay(window);
  BaResult result;
  result.window = window;
  BaStatistics& st = result.stats;
  st.pre_rmse = reprojection_rmse(window, cam);
  double cost = robust_cost(window, lay, cam, kernel);
  if (!std::isfinite(cost)) fail(ErrorCode::kNumeric, "bundle adjustment: non-finite initial cost");
  st.initial_cost = cost;
  st.cost_history.push_back(cost);

  NormalEquations ne = build_normal_equations(window, lay, cam, kernel);
  double diag_sum = ne.u.trace();
  for (const auto& v : ne.v) diag_sum += v.trace();
  double lambda = options.initial_lambda_scale * diag_sum / std::max(1, lay.size);
  if (!(lambda > 0.0)) lambda = options.initial_lambda_scale;

  while (st.iterations < options.max_iters) {
    if (ne.g.lpNorm<Eigen::Infinity>() < options.gradient_tol) break;
    ++st.iterations;
    const Eigen::VectorXd dx = solve_normal_equations(ne, lay, lambda, options.solver);
    double new_cost = std::numeric_limits<double>::infinity();
    OptimizationWindow candidate;
    if (dx.allFinite()) {
      candidate = apply_delta(result.window, lay, dx);
      new_cost = robust_cost(candidate, lay, cam, kernel);
    }
    const bool accept = new_cost < cost;
    if (options.diagnostics) {
      *options.diagnostics << st.iterations << " " << cost << " " << lambda << " " << dx.norm()
                           << (accept ? " accept" : " reject") << "\n";
    }
    if (!accept) {
      lambda *= 2.0;
      if (lambda > 1e32) break;
      continue;
    }
    const double rel = (cost - new_cost) / std::max(cost, 1e-300);
    result.window = std::move(candidate);
    cost = new_cost;
    ++st.accepted_steps;
    st.cost_history.push_back(cost);
    lambda /= 3.0;
    if (rel < options.relative_cost_tol) break;
    ne = build_normal_equations(result.window, lay, cam, kernel);
  }
  st.final_cost = cost;
  st.post_rmse = reprojection_rmse(result.window, cam);
  return result;
}

std::vector<std::int64_t> cull_outliers(OptimizationWindow& window, const CameraModel& cam,
                                        double threshold_px) {
  const Layout lay(window);
  std::vector<int> count(window.landmarks.size(), 0);
  std::vector<bool> bad(window.landmarks.size(), false);
  for (const WindowObservation& o : window.observations) {
    const ObsTerm t = linearize(window, lay, cam, o, false);
    ++count[t.landmark];
    if (!t.valid || (t.e * o.sigma).norm() > threshold_px) bad[t.landmark] = true;
  }
  std::vector<std::int64_t> culled;
  std::set<std::int64_t> culled_set;
  for (std::size_t l = 0; l < window.landmarks.size(); ++l) {
    if (bad[l] || count[l] < 2) {
      culled.push_back(window.landmarks[l].id);
      culled_set.insert(window.landmarks[l].id);
    }
  }
  std::erase_if(window.landmarks,
                [&](const WindowLandmark& l) { return culled_set.count(l.id) > 0; });
  std::erase_if(window.observations,
                [&](const WindowObservation& o) { return culled_set.count(o.landmark_id) > 0; });
  std::sort(culled.begin(), culled.end());
  return culled;
}

namespace ba_detail {

Eigen::VectorXd residuals(const OptimizationWindow& window, const CameraModel& cam) {
  const Layout lay(window);
  Eigen::VectorXd r(2 * window.observations.size());
  for (std::size_t i = 0; i < window.observations.size(); ++i) {
    r.segment<2>(2 * i) = linearize(window, lay, cam, window.observations[i], false).e;
  }
  return r;
}

Eigen::MatrixXd jacobian(const OptimizationWindow& window, const CameraModel& cam) {
  const Layout lay(window);
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * window.observations.size(), lay.size);
  for (std::size_t i = 0; i < window.observations.size(); ++i) {
    const ObsTerm t = linearize(window, lay, cam, window.observations[i], true);
    j.block<2, 3>(2 * i, lay.landmark_offset(t.landmark)) = t.jl;
    if (t.pose >= 0) {
      const int d = pose_dof(window.mutable_keyframes[t.pose]);
      j.block(2 * i, lay.pose_offset[t.pose], 2, d) = t.jp.leftCols(d);
    }
  }
  return j;
}

int tangent_dim(const OptimizationWindow& window) { return Layout(window).size; }

OptimizationWindow retract(const OptimizationWindow& window, const Eigen::VectorXd& delta) {
  const Layout lay(window);
  if (delta.size() != lay.size) fail(ErrorCode::kDimensionMismatch, "retract: wrong delta size");
  return apply_delta(window, lay, delta);
}

Eigen::VectorXd solve_step(const OptimizationWindow& window, const CameraModel& cam,
                           const RobustKernel& kernel, double lambda, BaLinearSolver solver) {
  const Layout lay(window);
  return solve_normal_equations(build_normal_equations(window, lay, cam, kernel), lay, lambda,
                                solver);
}

}  // namespace ba_detail

}  // namespace uwvo
