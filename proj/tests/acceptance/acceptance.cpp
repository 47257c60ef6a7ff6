// Acceptance run: one PASS/FAIL/SKIP line per criterion, nonzero exit on any
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "uwvo/bundle_adjustment.hpp"
#include "uwvo/cli.hpp"
#include "uwvo/essential.hpp"
#include "uwvo/evaluation.hpp"
#include "uwvo/p3p.hpp"
#include "uwvo/pipeline.hpp"
#include "uwvo/synthetic.hpp"
#include "uwvo/tracking.hpp"

using namespace uwvo;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

struct Outcome {
  enum Kind { kPass, kFail, kSkip } kind = kPass;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {Outcome::kFail, std::string("exception: ") + e.what()};
  }
  const char* tag = o.kind == Outcome::kPass ? "PASS" : o.kind == Outcome::kFail ? "FAIL" : "SKIP";
  if (o.kind == Outcome::kFail) ++failures;
  std::printf("%s  %s: %s\n", tag, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::infinity();
  std::sort(v.begin(), v.end());
  const auto i = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())) - 1);
  return v[std::min(i, v.size() - 1)];
}

// ---------------------------------------------------------------------------
// geometry

Outcome geometry_suite() {
  const auto t0 = Clock::now();
  const CameraModel cam = test::test_camera();
  Rng rng(2024);
  double tri = 0, p3p_err = 0, epi = 0, dec = 0;

  for (int n = 0; n < 1000;) {
    const Pose a = test::looking_pose(rng), b = test::looking_pose(rng);
    const Vec3 x = test::point_in_front(rng, a, 1.0, 10.0, 0.3);
    const double zb = b.transform(x).z();
    if (zb < 1.0 || zb > 10.0) continue;
    const Vec3 da = (x - a.center()).normalized(), db = (x - b.center()).normalized();
    if (std::acos(std::clamp(da.dot(db), -1.0, 1.0)) < 5e-3) continue;
    const Vec3 got = triangulate(a, b, cam, project(a, cam, x), project(b, cam, x));
    tri = std::max(tri, (got - x).norm() / std::max(1.0, x.norm()));
    ++n;
  }

  for (int n = 0; n < 1000; ++n) {
    const Pose truth = test::random_pose(rng, M_PI, 3.0);
    std::vector<Vec3> pts, bearings;
    for (int k = 0; k < 3; ++k) {
      pts.push_back(test::point_in_front(rng, truth, 2.0, 10.0, 0.5));
      bearings.push_back(truth.transform(pts.back()).normalized());
    }
    double best = std::numeric_limits<double>::infinity();
    for (const Pose& s : p3p(bearings, pts)) {
      best = std::min(best, rotation_angle(s.rotation(), truth.rotation()) +
                                (s.translation() - truth.translation()).norm());
    }
    p3p_err = std::max(p3p_err, best);
  }

  for (int n = 0; n < 1000; ++n) {
    Vec3 t = test::random_vec(rng, -1, 1);
    t *= rng.uniform(0.3, 1.0) / t.norm();
    const Pose rel(test::random_rotation(rng, 0.3), t);
    std::vector<BearingPair> m;
    while (m.size() < 30) {
      const Vec3 x = test::point_in_front(rng, Pose(), 2.0, 10.0, 0.5);
      if (rel.transform(x).z() < 1.0) continue;
      m.push_back({x.normalized(), rel.transform(x).normalized()});
    }
    for (const auto& e : essential_5pt(std::span(m).first(5))) {
      for (int k = 0; k < 5; ++k) epi = std::max(epi, epipolar_residual(e, m[k]));
    }
    const Decomposition d =
        decompose_essential(EssentialMatrix{skew(rel.translation()) * rel.rotation_matrix()}, m);
    dec = std::max(dec, rotation_angle(d.pose.rotation(), rel.rotation()) +
                            (d.pose.translation() - rel.translation().normalized()).norm());
  }
  const double secs = seconds_since(t0);
  const bool ok = tri < 1e-9 && p3p_err < 1e-8 && epi < 1e-10 && dec < 1e-8 && secs < 30.0;
  std::ostringstream s;
  s << "triangulation " << tri << ", p3p " << p3p_err << ", 5pt residual " << epi
    << ", decomposition " << dec << ", " << fmt("%.2f", secs) << " s";
  return {ok ? Outcome::kPass : Outcome::kFail, s.str()};
}

// ---------------------------------------------------------------------------
// optimizer

OptimizationWindow ba_window(Rng& rng, int keyframes, int fixed, int landmarks, double noise,
                             bool freeze) {
  const CameraModel cam = test::test_camera();
  std::vector<Pose> poses;
  for (int k = 0; k < keyframes; ++k) {
    const Vec3 c(0.3 * k, rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05));
    poses.push_back(Pose::from_camera_in_world(test::random_rotation(rng, 0.05), c));
  }
  OptimizationWindow w;
  for (int k = 0; k < keyframes; ++k) {
    WindowKeyframe kf{k, poses[k], false, Vec3::Zero()};
    if (k < fixed) {
      w.fixed_keyframes.push_back(kf);
      continue;
    }
    if (freeze && k == fixed) {
      kf.freeze_scale = true;
      kf.scale_anchor = poses[0].center();
    }
    w.mutable_keyframes.push_back(kf);
  }
  std::int64_t id = 100;
  while (static_cast<int>(w.landmarks.size()) < landmarks) {
    const Vec3 x(rng.uniform(-1.5, 2.5), rng.uniform(-1.5, 1.5), rng.uniform(4.0, 8.0));
    bool visible = true;
    for (const Pose& p : poses) visible = visible && cam.in_bounds(project(p, cam, x));
    if (!visible) continue;
    w.landmarks.push_back({id, x});
    for (int k = 0; k < keyframes; ++k) {
      const Vec2 px = project(poses[k], cam, x) + Vec2(rng.normal(), rng.normal()) * noise;
      w.observations.push_back({k, id, px, 1.0});
    }
    ++id;
  }
  return w;
}

void perturb(Rng& rng, OptimizationWindow& w) {
  for (WindowKeyframe& kf : w.mutable_keyframes) {
    const Quat dq = exp_so3(test::random_vec(rng, -0.01, 0.01));
    kf.pose = Pose(dq * kf.pose.rotation(), dq * kf.pose.translation() + test::random_vec(rng, -0.05, 0.05));
  }
  for (WindowLandmark& l : w.landmarks) l.position += test::random_vec(rng, -0.1, 0.1);
}

double window_error(const OptimizationWindow& a, const OptimizationWindow& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.mutable_keyframes.size(); ++i) {
    const Pose& pa = a.mutable_keyframes[i].pose;
    const Pose& pb = b.mutable_keyframes[i].pose;
    s += std::pow(rotation_angle(pa.rotation(), pb.rotation()), 2) + (pa.center() - pb.center()).squaredNorm();
  }
  for (std::size_t l = 0; l < a.landmarks.size(); ++l) {
    s += (a.landmarks[l].position - b.landmarks[l].position).squaredNorm();
  }
  return std::sqrt(s);
}

Outcome optimizer_suite() {
  const CameraModel cam = test::test_camera();
  Rng rng(77);
  double jac = 0.0, schur = 0.0;
  bool monotone = true;
  for (int trial = 0; trial < 100; ++trial) {
    OptimizationWindow w = ba_window(rng, 2 + trial % 4, 1, 3 + trial % 8, 0.5, trial % 2 == 0);
    perturb(rng, w);
    const Eigen::MatrixXd j = ba_detail::jacobian(w, cam);
    const int n = ba_detail::tangent_dim(w);
    for (int k = 0; k < n; ++k) {
      Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
      d(k) = 1e-6;
      const Eigen::VectorXd fd = (ba_detail::residuals(ba_detail::retract(w, d), cam) -
                                  ba_detail::residuals(ba_detail::retract(w, -d), cam)) / 2e-6;
      jac = std::max(jac, (fd - j.col(k)).norm() / std::max(1.0, j.col(k).norm()));
    }
    const auto kernel = RobustKernel::huber(2.0);
    const Eigen::VectorXd a = ba_detail::solve_step(w, cam, kernel, 1e-3, BaLinearSolver::kSchur);
    const Eigen::VectorXd b = ba_detail::solve_step(w, cam, kernel, 1e-3, BaLinearSolver::kDense);
    schur = std::max(schur, (a - b).norm() / std::max(1.0, b.norm()));
    const BaResult r = local_bundle_adjust(w, cam, kernel);
    const auto& h = r.stats.cost_history;
    for (std::size_t i = 1; i < h.size(); ++i) monotone = monotone && h[i] <= h[i - 1];
  }

  // paired bounded-influence run
  const OptimizationWindow truth = ba_window(rng, 5, 2, 40, 0.0, false);
  OptimizationWindow clean = truth;
  for (auto& o : clean.observations) o.pixel += Vec2(rng.normal(), rng.normal()) * 0.5;
  OptimizationWindow dirty = clean;
  dirty.observations[4 * 5 + 3].pixel += Vec2(30, 40);
  const auto huber = RobustKernel::huber(2.0);
  const double base = window_error(local_bundle_adjust(clean, cam, huber).window, truth);
  const double robust = window_error(local_bundle_adjust(dirty, cam, huber).window, truth);
  const double plain = window_error(local_bundle_adjust(dirty, cam, RobustKernel::none()).window, truth);
  const bool bounded = robust <= 3.0 * base;

  const bool ok = jac < 1e-5 && schur < 1e-9 && monotone && bounded;
  std::ostringstream s;
  s << "jacobian rel err " << jac << ", schur vs dense " << schur << ", monotone "
    << (monotone ? "yes" : "no") << ", outlier influence huber " << fmt("%.2f", robust / base)
    << "x / squared " << fmt("%.2f", plain / base) << "x";
  return {ok ? Outcome::kPass : Outcome::kFail, s.str()};
}

// ---------------------------------------------------------------------------
// tracker

Outcome tracker_suite() {
  double worst_median = 0.0, worst_p95 = 0.0;
  const std::vector<Vec2> shifts{{0.4, -0.3}, {5.5, 2.25}, {-12.7, 8.1}, {20.0, -15.5},
                                 {-31.3, 12.0}, {40.0, 0.0}, {0.0, -40.0}, {28.3, 28.3}};
  for (std::size_t k = 0; k < shifts.size(); ++k) {
    const Vec2 s = shifts[k];
    const RenderedPair pair = render_textured_pair(300 + k, Warp::translation(s.x(), s.y()), 640, 480);
    const Pyramid a = build_pyramid(pair.first, 4), b = build_pyramid(pair.second, 4);
    std::vector<Vec2> pts;
    for (const Vec2& p : detect_shi_tomasi(pair.first, 500, {}, 500, 0.01)) {
      const Vec2 q = p + s;
      if (q.x() > 20 && q.y() > 20 && q.x() < 619 && q.y() < 459 && p.x() > 20 && p.y() > 20 &&
          p.x() < 619 && p.y() < 459) {
        pts.push_back(p);
      }
    }
    const auto res = track_pyr_lk(a, b, pts, pts);
    std::vector<double> err;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (res[i].tracked()) err.push_back((res[i].position - (pts[i] + s)).norm());
    }
    worst_median = std::max(worst_median, percentile(err, 0.5));
    worst_p95 = std::max(worst_p95, percentile(err, 0.95));
  }

  int planted = 0, survivors = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const RenderedPair pair = render_textured_pair(400 + seed, Warp::translation(6.0, -3.0), 640, 480);
    GrayImage second = pair.second;
    std::vector<Vec2> pts;
    for (const Vec2& p : detect_shi_tomasi(pair.first, 500, {}, 300, 0.01)) {
      if (p.x() > 40 && p.y() > 40 && p.x() < 599 && p.y() < 439) pts.push_back(p);
    }
    std::vector<bool> occluded(pts.size(), false);
    for (std::size_t i = 0; i < pts.size(); i += 5) {
      occluded[i] = true;
      paint_noise_patch(second, pair.warp.apply(pts[i]), 12, 5000 + seed * 1000 + i);
    }
    const Pyramid a = build_pyramid(pair.first, 4), b = build_pyramid(second, 4);
    const auto res = forward_backward_filter(a, b, pts, track_pyr_lk(a, b, pts, pts), 2.0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (!occluded[i]) continue;
      ++planted;
      survivors += res[i].tracked();
    }
  }
  const bool ok = worst_median < 0.3 && worst_p95 < 1.0 && survivors == 0;
  std::ostringstream s;
  s << "shifts to 40 px: worst median " << fmt("%.3f", worst_median) << " px, worst p95 "
    << fmt("%.3f", worst_p95) << " px; occluded survivors " << survivors << "/" << planted;
  return {ok ? Outcome::kPass : Outcome::kFail, s.str()};
}

// ---------------------------------------------------------------------------
// end to end

struct InjectedRun {
  Trajectory trajectory;
  double ate_pct = 0.0;
  double drift_pct = 0.0;
  double mean_tracked = 0.0;
  double seconds = 0.0;
  int lost = 0;
};

InjectedRun run_loop(const SyntheticScene& scene, const ObserveOptions& obs, int retrack_window) {
  VoConfig config;
  config.retrack_window = retrack_window;
  const auto t0 = Clock::now();
  Odometry vo(scene.cam, config);
  for (int f = 0; f < scene.num_frames(); ++f) {
    vo.process_observations(observe(scene, f, obs), scene.timestamps[f]);
  }
  vo.finish();
  InjectedRun r;
  r.seconds = seconds_since(t0);
  r.trajectory = vo.trajectory();
  r.ate_pct = ate_rmse(r.trajectory, scene.ground_truth()).rmse_pct;
  r.drift_pct = final_drift_pct(r.trajectory, scene.ground_truth());
  const VoStats& st = vo.stats();
  r.mean_tracked = st.tracking_frames > 0 ? double(st.tracked_sum) / st.tracking_frames : 0.0;
  r.lost = st.lost_episodes;
  return r;
}

std::string file_bytes(const Trajectory& t, const fs::path& path) {
  write_trajectory(t, path);
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct ImageRun {
  Trajectory trajectory;
  int frames = 0;
  double ms_per_frame = 0.0;
  bool initialized = false;
};

ImageRun run_images(const SyntheticScene& scene, const std::vector<GrayImage>& images, int frames) {
  Odometry vo(scene.cam, VoConfig{});
  ImageRun r;
  const auto t0 = Clock::now();
  for (int f = 0; f < frames; ++f) {
    vo.process_frame(images[f], scene.timestamps[f]);
    r.initialized = r.initialized || vo.mode() == VoMode::kTracking;
  }
  vo.finish();
  r.ms_per_frame = 1000.0 * seconds_since(t0) / frames;
  r.frames = frames;
  r.trajectory = vo.trajectory();
  return r;
}

}  // namespace

int main() {
  const fs::path tmp = test::temp_dir("acceptance");

  report("paper-scale tables", [] {
    return Outcome{Outcome::kSkip,
                   "not reproducible at desk scale without the external datasets; covered by the "
                   "property suite below"};
  });
  report("geometry oracle suite", geometry_suite);
  report("optimizer suite", optimizer_suite);
  report("tracker suite", tracker_suite);

  // loop scene, feature injection
  const SyntheticScene loop = generate_scene(SceneKind::kLoop, 1000, 400, 1);
  ObserveOptions obs;
  obs.pixel_noise_sigma = 0.3;
  obs.dropout = 0.05;
  obs.seed = 2;
  obs.occlusions = cli::scripted_occlusions(loop, 150, 1);
  InjectedRun with_retrack;
  report("end-to-end loop", [&] {
    with_retrack = run_loop(loop, obs, 5);
    const InjectedRun without = run_loop(loop, obs, 0);
    const bool accurate = with_retrack.ate_pct < 1.0 && with_retrack.drift_pct < 1.0;
    const bool ablation = without.drift_pct > with_retrack.drift_pct ||
                          without.mean_tracked < with_retrack.mean_tracked;
    const bool fast = with_retrack.seconds < 120.0;
    std::ostringstream s;
    s << "ATE " << fmt("%.3f", with_retrack.ate_pct) << "%, drift "
      << fmt("%.3f", with_retrack.drift_pct) << "%, " << fmt("%.1f", with_retrack.seconds)
      << " s; retracking off: drift " << fmt("%.3f", without.drift_pct) << "%, mean tracked "
      << fmt("%.1f", without.mean_tracked) << " vs " << fmt("%.1f", with_retrack.mean_tracked);
    return Outcome{accurate && ablation && fast ? Outcome::kPass : Outcome::kFail, s.str()};
  });

  // rendered planar sequence
  const SyntheticScene planar = generate_scene(SceneKind::kPlanar, 300, 200, 7);
  const std::vector<GrayImage> images = render_plane_sequence(planar, 17);
  ImageRun image_run;
  report("image-mode end-to-end", [&] {
    image_run = run_images(planar, images, 200);
    const double coverage = double(image_run.trajectory.samples.size()) / image_run.frames;
    const double ate = image_run.trajectory.samples.size() >= 3
                           ? ate_rmse(image_run.trajectory, planar.ground_truth()).rmse_pct
                           : std::numeric_limits<double>::infinity();
    const bool ok = image_run.initialized && coverage >= 0.95 && ate < 2.0;
    std::ostringstream s;
    s << "640x480, 200 frames: pose on " << fmt("%.1f", 100.0 * coverage) << "% of frames, ATE "
      << fmt("%.3f", ate) << "%";
    return Outcome{ok ? Outcome::kPass : Outcome::kFail, s.str()};
  });

  report("determinism", [&] {
    const std::string a = file_bytes(with_retrack.trajectory, tmp / "loop_a.txt");
    const std::string b = file_bytes(run_loop(loop, obs, 5).trajectory, tmp / "loop_b.txt");
    const std::string c = file_bytes(run_images(planar, images, 80).trajectory, tmp / "img_a.txt");
    const std::string d = file_bytes(run_images(planar, images, 80).trajectory, tmp / "img_b.txt");
    const bool ok = !a.empty() && a == b && !c.empty() && c == d;
    return Outcome{ok ? Outcome::kPass : Outcome::kFail,
                   std::string("injected run ") + (a == b ? "identical" : "differs") +
                       ", image run " + (c == d ? "identical" : "differs")};
  });

  report("performance", [&] {
    const double fps = 1000.0 / image_run.ms_per_frame;
    std::ostringstream s;
    s << fmt("%.1f", image_run.ms_per_frame) << " ms/frame (" << fmt("%.1f", fps)
      << " fps) at 640x480, 250 features, synchronous BA; target 20 fps, floor 10 fps";
    return Outcome{fps >= 10.0 ? Outcome::kPass : Outcome::kFail, s.str()};
  });

  report("dataset checks", [] {
    return Outcome{Outcome::kSkip, "optional; no simulated or real dataset supplied"};
  });

  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
