#include <gtest/gtest.h>

#include <limits>

#include "test_support.hpp"
#include "uwvo/bundle_adjustment.hpp"
#include "uwvo/error.hpp"
#include "uwvo/lm.hpp"

using namespace uwvo;

namespace {

template <typename F>
ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an exception";
  return ErrorCode::kIo;
}

struct WindowSpec {
  int keyframes = 5;
  int fixed = 2;
  int landmarks = 40;
  bool freeze_first_mutable = false;
  double pixel_noise = 0.0;
};

// Keyframes strung along x looking down +z at a box of points; every point is
// seen by every keyframe. Returns the ground-truth window.
OptimizationWindow make_window(Rng& rng, const WindowSpec& spec) {
  const CameraModel cam = test::test_camera();
  std::vector<Pose> poses;
  for (int k = 0; k < spec.keyframes; ++k) {
    const Vec3 c(0.3 * k, rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05));
    poses.push_back(Pose::from_camera_in_world(test::random_rotation(rng, 0.05), c));
  }
  OptimizationWindow w;
  for (int k = 0; k < spec.keyframes; ++k) {
    WindowKeyframe kf{k, poses[k], false, Vec3::Zero()};
    if (k < spec.fixed) {
      w.fixed_keyframes.push_back(kf);
    } else {
      if (spec.freeze_first_mutable && k == spec.fixed) {
        kf.freeze_scale = true;
        kf.scale_anchor = poses[0].center();
      }
      w.mutable_keyframes.push_back(kf);
    }
  }
  std::int64_t next_id = 100;
  while (static_cast<int>(w.landmarks.size()) < spec.landmarks) {
    const Vec3 x(rng.uniform(-1.5, 2.5), rng.uniform(-1.5, 1.5), rng.uniform(4.0, 8.0));
    bool visible = true;
    for (const Pose& p : poses) visible = visible && cam.in_bounds(project(p, cam, x));
    if (!visible) continue;
    const std::int64_t id = next_id++;
    w.landmarks.push_back({id, x});
    for (int k = 0; k < spec.keyframes; ++k) {
      Vec2 px = project(poses[k], cam, x);
      if (spec.pixel_noise > 0) px += Vec2(rng.normal(), rng.normal()) * spec.pixel_noise;
      w.observations.push_back({k, id, px, 1.0});
    }
  }
  return w;
}

void perturb(Rng& rng, OptimizationWindow& w, double rot, double trans, double point) {
  for (WindowKeyframe& kf : w.mutable_keyframes) {
    Eigen::Matrix<double, 6, 1> d;
    d << test::random_vec(rng, -rot, rot), test::random_vec(rng, -trans, trans);
    kf.pose = Pose(exp_so3(d.head<3>()) * kf.pose.rotation(),
                   exp_so3(d.head<3>()) * kf.pose.translation() + d.tail<3>());
  }
  for (WindowLandmark& l : w.landmarks) l.position += test::random_vec(rng, -point, point);
}

// Root-sum-square parameter distance between two windows with the same layout.
double parameter_error(const OptimizationWindow& a, const OptimizationWindow& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.mutable_keyframes.size(); ++i) {
    const Pose& pa = a.mutable_keyframes[i].pose;
    const Pose& pb = b.mutable_keyframes[i].pose;
    s += std::pow(rotation_angle(pa.rotation(), pb.rotation()), 2);
    s += (pa.center() - pb.center()).squaredNorm();
  }
  for (std::size_t l = 0; l < a.landmarks.size(); ++l) {
    s += (a.landmarks[l].position - b.landmarks[l].position).squaredNorm();
  }
  return std::sqrt(s);
}

double max_landmark_error(const OptimizationWindow& a, const OptimizationWindow& b) {
  double m = 0.0;
  for (std::size_t l = 0; l < a.landmarks.size(); ++l) {
    m = std::max(m, (a.landmarks[l].position - b.landmarks[l].position).norm());
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Levenberg-Marquardt

TEST(Lm, LinearProblemConvergesImmediately) {
  const Eigen::Vector3d c(1.5, -2.0, 7.25);
  LmProblem p;
  p.residual = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x - c; };
  p.jacobian = [](const Eigen::VectorXd&) -> Eigen::MatrixXd { return Eigen::Matrix3d::Identity(); };
  const LmResult r = levenberg_marquardt(p, Eigen::Vector3d::Zero());
  EXPECT_LT((r.x - c).norm(), 1e-8);
  EXPECT_LE(r.summary.iterations, 2);
}

TEST(Lm, Rosenbrock) {
  LmProblem p;
  p.residual = [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return Eigen::Vector2d(10.0 * (x(1) - x(0) * x(0)), 1.0 - x(0));
  };
  p.jacobian = [](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
    Eigen::Matrix2d j;
    j << -20.0 * x(0), 10.0, -1.0, 0.0;
    return j;
  };
  const LmResult r = levenberg_marquardt(p, Eigen::Vector2d(-1.2, 1.0));
  EXPECT_LT((r.x - Eigen::Vector2d(1, 1)).norm(), 1e-8);
  const auto& h = r.summary.cost_history;
  for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LE(h[i], h[i - 1]);
}

TEST(Lm, DimensionMismatch) {
  LmProblem p;
  p.residual = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x; };
  p.jacobian = [](const Eigen::VectorXd&) -> Eigen::MatrixXd { return Eigen::MatrixXd::Identity(3, 2); };
  EXPECT_EQ(error_code_of([&] { levenberg_marquardt(p, Eigen::Vector2d(1, 1)); }),
            ErrorCode::kDimensionMismatch);
}

TEST(Lm, NonFiniteStart) {
  LmProblem p;
  p.residual = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.array().log(); };
  p.jacobian = [](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
    return x.array().inverse().matrix().asDiagonal();
  };
  EXPECT_EQ(error_code_of([&] { levenberg_marquardt(p, Eigen::Vector2d(-1, 1)); }),
            ErrorCode::kNumeric);
}

// ---------------------------------------------------------------------------
// Robust kernel

TEST(Huber, PiecewiseDefinition) {
  const RobustKernel k = RobustKernel::huber(2.0);
  EXPECT_EQ(k.rho(0.0), 0.0);
  EXPECT_EQ(k.rho(3.0), 3.0);
  EXPECT_EQ(k.rho(4.0), 4.0);
  EXPECT_DOUBLE_EQ(k.rho(16.0), 2.0 * 2.0 * 4.0 - 4.0);
  EXPECT_EQ(RobustKernel::none().rho(100.0), 100.0);
}

TEST(Huber, ContinuousAndSmoothAtKnee) {
  for (double delta : {0.5, 1.0, 2.0, 3.7}) {
    const RobustKernel k = RobustKernel::huber(delta);
    const double knee = delta * delta, eps = 1e-7;
    EXPECT_NEAR(k.rho(knee - eps), k.rho(knee + eps), 3e-7);
    const double left = (k.rho(knee) - k.rho(knee - eps)) / eps;
    const double right = (k.rho(knee + eps) - k.rho(knee)) / eps;
    EXPECT_NEAR(left, 1.0, 1e-6);
    EXPECT_NEAR(right, 1.0, 1e-6);
    EXPECT_NEAR(k.weight(knee + eps), 1.0, 1e-6);
  }
}

// ---------------------------------------------------------------------------
// Window validation

TEST(Window, RejectsInvalid) {
  Rng rng(1);
  const OptimizationWindow good = make_window(rng, {3, 1, 5});
  EXPECT_NO_THROW(good.validate());

  OptimizationWindow w = good;
  w.observations[0].keyframe_id = 99;
  EXPECT_EQ(error_code_of([&] { w.validate(); }), ErrorCode::kInvalidWindow);
  w = good;
  w.observations[0].landmark_id = 99;
  EXPECT_EQ(error_code_of([&] { w.validate(); }), ErrorCode::kInvalidWindow);
  w = good;
  w.mutable_keyframes.clear();
  EXPECT_EQ(error_code_of([&] { w.validate(); }), ErrorCode::kInvalidWindow);
  w = good;
  w.observations[0].sigma = 0.0;
  EXPECT_EQ(error_code_of([&] { w.validate(); }), ErrorCode::kInvalidWindow);
  w = good;
  w.landmarks.push_back(w.landmarks[0]);
  EXPECT_EQ(error_code_of([&] { w.validate(); }), ErrorCode::kInvalidWindow);
  EXPECT_EQ(error_code_of([&] {
              local_bundle_adjust(good, test::test_camera(), RobustKernel::huber(0.0));
            }),
            ErrorCode::kPrecondition);
}

// ---------------------------------------------------------------------------
// Bundle adjustment

TEST(BundleAdjust, JacobianMatchesFiniteDifferences) {
  Rng rng(2);
  const CameraModel cam = test::test_camera();
  for (int trial = 0; trial < 100; ++trial) {
    WindowSpec spec{2 + trial % 4, 1, 3 + trial % 5, trial % 2 == 0, 0.5};
    OptimizationWindow w = make_window(rng, spec);
    perturb(rng, w, 0.01, 0.03, 0.1);
    for (auto& o : w.observations) o.sigma = rng.uniform(0.5, 2.0);
    const Eigen::MatrixXd j = ba_detail::jacobian(w, cam);
    const int n = ba_detail::tangent_dim(w);
    ASSERT_EQ(j.cols(), n);
    const double h = 1e-6;
    double worst = 0.0;
    for (int k = 0; k < n; ++k) {
      Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
      d(k) = h;
      const Eigen::VectorXd fd = (ba_detail::residuals(ba_detail::retract(w, d), cam) -
                                  ba_detail::residuals(ba_detail::retract(w, -d), cam)) /
                                 (2 * h);
      worst = std::max(worst, (fd - j.col(k)).norm() / std::max(1.0, j.col(k).norm()));
    }
    EXPECT_LT(worst, 1e-5) << "trial " << trial;
  }
}

TEST(BundleAdjust, SchurMatchesDense) {
  Rng rng(3);
  const CameraModel cam = test::test_camera();
  for (int trial = 0; trial < 30; ++trial) {
    WindowSpec spec{2 + trial % 4, 1, 10 + trial, trial % 3 == 0, 0.5};
    OptimizationWindow w = make_window(rng, spec);
    perturb(rng, w, 0.01, 0.05, 0.1);
    w.observations[trial % w.observations.size()].pixel += Vec2(30, -20);  // exercise IRLS
    const bool gauge_fixed = spec.freeze_first_mutable;
    for (double lambda : {0.0, 1e-3, 10.0}) {
      // without a frozen scale the undamped system is singular along the
      // scale direction and the two solvers may pick different solutions
      if (lambda == 0.0 && !gauge_fixed) continue;
      const auto kernel = RobustKernel::huber(2.0);
      const Eigen::VectorXd a = ba_detail::solve_step(w, cam, kernel, lambda, BaLinearSolver::kSchur);
      const Eigen::VectorXd b = ba_detail::solve_step(w, cam, kernel, lambda, BaLinearSolver::kDense);
      EXPECT_LT((a - b).norm(), 1e-9 * std::max(1.0, b.norm())) << "trial " << trial;
    }
  }
}

TEST(BundleAdjust, NoiselessAtTruthIsUnchanged) {
  Rng rng(4);
  const OptimizationWindow truth = make_window(rng, {5, 2, 50});
  const BaResult r = local_bundle_adjust(truth, test::test_camera(), RobustKernel::huber(2.0));
  EXPECT_LT(parameter_error(r.window, truth), 1e-10);
  EXPECT_LT(r.stats.post_rmse, 1e-9);
}

TEST(BundleAdjust, PerturbedLandmarksRecovered) {
  Rng rng(5);
  const OptimizationWindow truth = make_window(rng, {5, 4, 50});
  OptimizationWindow w = truth;
  for (WindowLandmark& l : w.landmarks) {
    l.position += Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.05;
  }
  const BaResult r = local_bundle_adjust(w, test::test_camera(), RobustKernel::huber(2.0));
  EXPECT_LT(max_landmark_error(r.window, truth), 1e-6);
  EXPECT_LT(r.stats.post_rmse, 1e-8);
  EXPECT_GT(r.stats.pre_rmse, 1.0);
}

TEST(BundleAdjust, CostMonotoneAndRmseDrops) {
  Rng rng(6);
  const CameraModel cam = test::test_camera();
  for (int trial = 0; trial < 20; ++trial) {
    const OptimizationWindow truth = make_window(rng, {5, 2, 40, trial % 2 == 1, 0.5});
    OptimizationWindow w = truth;
    perturb(rng, w, 0.01, 0.05, 0.1);
    const BaResult r = local_bundle_adjust(w, cam, RobustKernel::huber(2.0));
    const auto& h = r.stats.cost_history;
    for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LE(h[i], h[i - 1]);
    EXPECT_LE(r.stats.final_cost, r.stats.initial_cost);
    EXPECT_LE(r.stats.post_rmse, r.stats.pre_rmse);
    // the optimum fits the noisy pixels at least as well as the true geometry
    EXPECT_LE(r.stats.post_rmse, reprojection_rmse(truth, cam) * (1.0 + 1e-9));
  }
}

TEST(BundleAdjust, FixedKeyframesUntouched) {
  Rng rng(7);
  OptimizationWindow w = make_window(rng, {5, 2, 30, false, 0.5});
  perturb(rng, w, 0.01, 0.05, 0.1);
  const BaResult r = local_bundle_adjust(w, test::test_camera(), RobustKernel::huber(2.0));
  for (std::size_t i = 0; i < w.fixed_keyframes.size(); ++i) {
    EXPECT_EQ(r.window.fixed_keyframes[i].pose.translation(), w.fixed_keyframes[i].pose.translation());
    EXPECT_EQ(r.window.fixed_keyframes[i].pose.rotation().coeffs(),
              w.fixed_keyframes[i].pose.rotation().coeffs());
  }
}

TEST(BundleAdjust, FrozenScaleKeepsAnchorDistance) {
  Rng rng(8);
  OptimizationWindow w = make_window(rng, {4, 1, 30, true, 0.5});
  perturb(rng, w, 0.01, 0.05, 0.1);
  const WindowKeyframe& before = w.mutable_keyframes[0];
  ASSERT_TRUE(before.freeze_scale);
  const double d0 = (before.pose.center() - before.scale_anchor).norm();
  const BaResult r = local_bundle_adjust(w, test::test_camera(), RobustKernel::huber(2.0));
  const WindowKeyframe& after = r.window.mutable_keyframes[0];
  EXPECT_NEAR((after.pose.center() - after.scale_anchor).norm(), d0, 1e-9);
  EXPECT_GT(r.stats.accepted_steps, 0);
}

TEST(BundleAdjust, HuberBoundsOutlierInfluence) {
  // Paired runs on the same noisy window, with and without one observation
  // pushed 50 px away.
  Rng rng(9);
  const CameraModel cam = test::test_camera();
  const OptimizationWindow truth = make_window(rng, {5, 2, 40});
  OptimizationWindow clean = truth;
  for (auto& o : clean.observations) o.pixel += Vec2(rng.normal(), rng.normal()) * 0.5;
  OptimizationWindow dirty = clean;
  const std::size_t victim = 4 * 5 + 3;  // a mutable-keyframe observation
  ASSERT_EQ(dirty.observations[victim].keyframe_id, 3);
  dirty.observations[victim].pixel += Vec2(30, 40);

  const double base = parameter_error(local_bundle_adjust(clean, cam, RobustKernel::huber(2.0)).window, truth);
  const double huber = parameter_error(local_bundle_adjust(dirty, cam, RobustKernel::huber(2.0)).window, truth);
  const double base_l2 = parameter_error(local_bundle_adjust(clean, cam, RobustKernel::none()).window, truth);
  const double l2 = parameter_error(local_bundle_adjust(dirty, cam, RobustKernel::none()).window, truth);
  EXPECT_LE(huber, 3.0 * base);
  EXPECT_GT(l2, 3.0 * base_l2);

  // the squared loss keeps growing with the outlier, the Huber one levels off
  OptimizationWindow far = clean;
  far.observations[victim].pixel += Vec2(300, 400);
  const double huber_far = parameter_error(local_bundle_adjust(far, cam, RobustKernel::huber(2.0)).window, truth);
  const double l2_far = parameter_error(local_bundle_adjust(far, cam, RobustKernel::none()).window, truth);
  EXPECT_LE(huber_far, 3.0 * base);
  EXPECT_GT(l2_far, 5.0 * l2);
}

TEST(BundleAdjust, RigidChangeOfWorldIsEquivariant) {
  Rng rng(10);
  const CameraModel cam = test::test_camera();
  for (int trial = 0; trial < 5; ++trial) {
    OptimizationWindow w = make_window(rng, {5, 2, 40, trial % 2 == 0, 0.5});
    perturb(rng, w, 0.01, 0.05, 0.1);
    const Pose g = test::random_pose(rng, M_PI, 3.0);  // world -> world'
    const Pose g_inv = inverse(g);
    OptimizationWindow moved = w;
    for (auto* list : {&moved.mutable_keyframes, &moved.fixed_keyframes}) {
      for (WindowKeyframe& kf : *list) {
        kf.pose = compose(kf.pose, g_inv);
        kf.scale_anchor = g.transform(kf.scale_anchor);
      }
    }
    for (WindowLandmark& l : moved.landmarks) l.position = g.transform(l.position);

    BaOptions opts;
    opts.max_iters = 50;
    const BaResult a = local_bundle_adjust(w, cam, RobustKernel::huber(2.0), opts);
    const BaResult b = local_bundle_adjust(moved, cam, RobustKernel::huber(2.0), opts);
    for (std::size_t i = 0; i < a.window.mutable_keyframes.size(); ++i) {
      const Pose expect = compose(a.window.mutable_keyframes[i].pose, g_inv);
      const Pose& got = b.window.mutable_keyframes[i].pose;
      EXPECT_LT(rotation_angle(expect.rotation(), got.rotation()), 1e-8);
      EXPECT_LT((expect.translation() - got.translation()).norm(), 1e-8);
    }
    for (std::size_t l = 0; l < a.window.landmarks.size(); ++l) {
      EXPECT_LT((g.transform(a.window.landmarks[l].position) - b.window.landmarks[l].position).norm(),
                1e-8);
    }
  }
}

TEST(BundleAdjust, DeterministicPerCall) {
  Rng rng(11);
  OptimizationWindow w = make_window(rng, {5, 2, 30, false, 0.5});
  perturb(rng, w, 0.01, 0.05, 0.1);
  const BaResult a = local_bundle_adjust(w, test::test_camera(), RobustKernel::huber(2.0));
  const BaResult b = local_bundle_adjust(w, test::test_camera(), RobustKernel::huber(2.0));
  EXPECT_EQ(a.stats.cost_history, b.stats.cost_history);
  for (std::size_t l = 0; l < a.window.landmarks.size(); ++l) {
    EXPECT_EQ(a.window.landmarks[l].position, b.window.landmarks[l].position);
  }
}

// ---------------------------------------------------------------------------
// Culling

TEST(Cull, ExactWindowCullsNothing) {
  Rng rng(12);
  OptimizationWindow w = make_window(rng, {3, 1, 20});
  EXPECT_TRUE(cull_outliers(w, test::test_camera(), 3.0).empty());
  EXPECT_EQ(w.landmarks.size(), 20u);
}

TEST(Cull, PlantedOutlierIsTheOnlyOneCulled) {
  Rng rng(13);
  OptimizationWindow w = make_window(rng, {3, 1, 20, false, 0.3});
  const std::int64_t planted = w.landmarks[7].id;
  for (auto& o : w.observations) {
    if (o.landmark_id == planted && o.keyframe_id == 2) o.pixel += Vec2(6, 8);  // 10 px
  }
  const std::size_t obs_before = w.observations.size();
  const auto culled = cull_outliers(w, test::test_camera(), 3.0);
  ASSERT_EQ(culled, std::vector<std::int64_t>{planted});
  EXPECT_EQ(w.landmarks.size(), 19u);
  EXPECT_EQ(w.observations.size(), obs_before - 3);
  for (const auto& o : w.observations) EXPECT_NE(o.landmark_id, planted);
}

TEST(Cull, InfiniteThresholdCullsNothing) {
  Rng rng(14);
  OptimizationWindow w = make_window(rng, {3, 1, 20, false, 5.0});
  w.observations[0].pixel += Vec2(100, 0);
  EXPECT_TRUE(cull_outliers(w, test::test_camera(), std::numeric_limits<double>::infinity()).empty());
}

TEST(Cull, SingleObservationLandmarkCulled) {
  Rng rng(15);
  OptimizationWindow w = make_window(rng, {3, 1, 5});
  const std::int64_t id = w.landmarks[2].id;
  std::erase_if(w.observations, [&](const WindowObservation& o) {
    return o.landmark_id == id && o.keyframe_id != 0;
  });
  EXPECT_EQ(cull_outliers(w, test::test_camera(), 3.0), std::vector<std::int64_t>{id});
}
