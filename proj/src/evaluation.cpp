#include "uwvo/evaluation.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "uwvo/error.hpp"

namespace uwvo {

TrajectorySample TrajectorySample::from_pose(double timestamp, const Pose& world_to_camera) {
  const Pose cw = inverse(world_to_camera);
  return {timestamp, cw.translation(), cw.rotation()};
}

void Trajectory::validate() const {
  if (samples.empty()) fail(ErrorCode::kValidation, "trajectory is empty");
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].timestamp > samples[i - 1].timestamp)) {
      fail(ErrorCode::kValidation,
           "trajectory timestamps not strictly increasing at sample " + std::to_string(i));
    }
  }
}

std::vector<Vec3> Trajectory::positions() const {
  std::vector<Vec3> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.position);
  return out;
}

double Trajectory::path_length() const { return uwvo::path_length(positions()); }

double path_length(std::span<const Vec3> points) {
  double len = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) len += (points[i] - points[i - 1]).norm();
  return len;
}

Trajectory read_trajectory(std::istream& in) {
  Trajectory traj;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    TrajectorySample s;
    double qx, qy, qz, qw;
    if (!(ss >> s.timestamp >> s.position.x() >> s.position.y() >> s.position.z() >> qx >> qy >>
          qz >> qw)) {
      fail(ErrorCode::kValidation, "trajectory line " + std::to_string(line_no) + " is malformed");
    }
    s.orientation = Quat(qw, qx, qy, qz);
    if (!(s.orientation.norm() > 0.0)) {
      fail(ErrorCode::kValidation, "zero quaternion on line " + std::to_string(line_no));
    }
    s.orientation.normalize();
    traj.samples.push_back(s);
  }
  traj.validate();
  return traj;
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open trajectory " + path.string());
  return read_trajectory(in);
}

void write_trajectory(const Trajectory& traj, std::ostream& out) {
  out << "# timestamp tx ty tz qx qy qz qw\n";
  char buf[256];
  for (const auto& s : traj.samples) {
    const Quat& q = s.orientation;
    std::snprintf(buf, sizeof(buf), "%.6f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", s.timestamp,
                  s.position.x(), s.position.y(), s.position.z(), q.x(), q.y(), q.z(), q.w());
    out << buf;
  }
}

void write_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write trajectory " + path.string());
  write_trajectory(traj, out);
}

std::vector<PositionPair> associate(const Trajectory& est, const Trajectory& gt, double max_dt) {
  if (est.samples.empty() || gt.samples.empty()) {
    fail(ErrorCode::kAssociation, "cannot associate an empty trajectory");
  }
  struct Candidate {
    double dt;
    std::size_t i, j;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < est.samples.size(); ++i) {
    const double t = est.samples[i].timestamp;
    const auto it = std::lower_bound(
        gt.samples.begin(), gt.samples.end(), t,
        [](const TrajectorySample& s, double v) { return s.timestamp < v; });
    const std::size_t hi = static_cast<std::size_t>(it - gt.samples.begin());
    // the two neighbours in time, so a taken nearest still leaves a fallback
    for (std::size_t j : {hi - 1, hi, hi + 1}) {
      if (j >= gt.samples.size()) continue;
      const double dt = std::abs(gt.samples[j].timestamp - t);
      if (dt <= max_dt) candidates.push_back({dt, i, j});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.dt < b.dt; });
  std::vector<int> est_match(est.samples.size(), -1);
  std::vector<bool> gt_used(gt.samples.size(), false);
  for (const Candidate& c : candidates) {
    if (est_match[c.i] >= 0 || gt_used[c.j]) continue;
    est_match[c.i] = static_cast<int>(c.j);
    gt_used[c.j] = true;
  }
  std::vector<PositionPair> pairs;
  for (std::size_t i = 0; i < est.samples.size(); ++i) {
    if (est_match[i] < 0) continue;
    const auto& g = gt.samples[est_match[i]];
    pairs.push_back({est.samples[i].timestamp, g.timestamp, est.samples[i].position, g.position});
  }
  if (pairs.empty()) fail(ErrorCode::kAssociation, "no timestamps pair within max_dt");
  return pairs;
}

Similarity umeyama_align(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) {
    fail(ErrorCode::kPrecondition, "alignment inputs differ in length");
  }
  if (source.size() < 3) fail(ErrorCode::kPrecondition, "alignment needs at least 3 pairs");
  const double n = static_cast<double>(source.size());
  Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    mu_s += source[i];
    mu_t += target[i];
  }
  mu_s /= n;
  mu_t /= n;
  Mat3 cov = Mat3::Zero();
  Mat3 cov_s = Mat3::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 ds = source[i] - mu_s;
    cov += (target[i] - mu_t) * ds.transpose();
    cov_s += ds * ds.transpose();
    var_s += ds.squaredNorm();
  }
  cov /= n;
  var_s /= n;
  Eigen::JacobiSVD<Mat3> spread(cov_s);
  if (!(var_s > 0.0) || spread.singularValues()(1) <= 1e-12 * spread.singularValues()(0)) {
    fail(ErrorCode::kDegenerateConfiguration, "alignment source points are collinear");
  }
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;
  Similarity out;
  out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  out.scale = (svd.singularValues().asDiagonal() * s).trace() / var_s;
  out.translation = mu_t - out.scale * out.rotation * mu_s;
  return out;
}

namespace {

struct Aligned {
  std::vector<PositionPair> pairs;
  Similarity sim;
  std::vector<Vec3> est;  // aligned
  std::vector<Vec3> gt;
};

Aligned align(const Trajectory& est, const Trajectory& gt, double max_dt) {
  Aligned a;
  a.pairs = associate(est, gt, max_dt);
  std::vector<Vec3> src;
  for (const auto& p : a.pairs) {
    src.push_back(p.est);
    a.gt.push_back(p.gt);
  }
  a.sim = umeyama_align(src, a.gt);
  for (const Vec3& p : src) a.est.push_back(a.sim.apply(p));
  return a;
}

double checked_length(const Trajectory& gt) {
  const double len = gt.path_length();
  if (!(len > 0.0)) fail(ErrorCode::kPrecondition, "ground-truth path has zero length");
  return len;
}

}  // namespace

AteResult ate_rmse(const Trajectory& est, const Trajectory& gt, double max_dt) {
  Aligned a = align(est, gt, max_dt);
  AteResult out;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.est.size(); ++i) {
    const double e = (a.est[i] - a.gt[i]).norm();
    out.errors.push_back(e);
    sum += e * e;
  }
  out.rmse = std::sqrt(sum / static_cast<double>(a.est.size()));
  out.rmse_pct = 100.0 * out.rmse / checked_length(gt);
  out.alignment = a.sim;
  out.pairs = std::move(a.pairs);
  return out;
}

double endpoint_drift_pct(std::span<const Vec3> aligned_est, std::span<const Vec3> gt) {
  if (aligned_est.empty() || aligned_est.size() != gt.size()) {
    fail(ErrorCode::kPrecondition, "drift inputs must be non-empty and equally long");
  }
  const double len = path_length(gt);
  if (!(len > 0.0)) fail(ErrorCode::kPrecondition, "ground-truth path has zero length");
  return 100.0 * (aligned_est.back() - gt.back()).norm() / len;
}

double final_drift_pct(const Trajectory& est, const Trajectory& gt, double max_dt) {
  const Aligned a = align(est, gt, max_dt);
  return 100.0 * (a.est.back() - a.gt.back()).norm() / checked_length(gt);
}

}  // namespace uwvo
