#include "uwvo/p3p.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <array>
#include <cmath>

#include "uwvo/error.hpp"

namespace uwvo {

namespace {

// Real roots of a quartic given highest-degree-first coefficients.
std::vector<double> quartic_roots(const std::array<double, 5>& c) {
  if (std::abs(c[0]) < 1e-14 * (std::abs(c[1]) + std::abs(c[2]) + std::abs(c[3]) +
                                std::abs(c[4]))) {
    return {};
  }
  Eigen::Matrix4d companion = Eigen::Matrix4d::Zero();
  for (int i = 1; i < 4; ++i) companion(i, i - 1) = 1.0;
  for (int i = 0; i < 4; ++i) companion(i, 3) = -c[4 - i] / c[0];
  Eigen::EigenSolver<Eigen::Matrix4d> solver(companion, false);

  auto eval = [&](double x) { return (((c[0] * x + c[1]) * x + c[2]) * x + c[3]) * x + c[4]; };
  auto deriv = [&](double x) { return ((4 * c[0] * x + 3 * c[1]) * x + 2 * c[2]) * x + c[3]; };
  std::vector<double> roots;
  for (int i = 0; i < 4; ++i) {
    const auto r = solver.eigenvalues()(i);
    // Near-real pairs are kept: the distance polish below decides.
    if (std::abs(r.imag()) > 1e-4 * std::max(1.0, std::abs(r.real()))) continue;
    double x = r.real();
    for (int it = 0; it < 5; ++it) {
      const double d = deriv(x);
      if (d == 0.0) break;
      const double xn = x - eval(x) / d;
      if (!std::isfinite(xn) || std::abs(eval(xn)) >= std::abs(eval(x))) break;
      x = xn;
    }
    roots.push_back(x);
  }
  return roots;
}

// Newton iterations on |s_i f_i - s_j f_j|^2 = d_ij^2 for the three depths.
bool polish_depths(const std::array<Vec3, 3>& f, const std::array<Vec3, 3>& p,
                   Vec3& depth) {
  constexpr int kPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  Vec3 d2;
  Vec3 cosines;
  for (int k = 0; k < 3; ++k) {
    const int i = kPairs[k][0], j = kPairs[k][1];
    d2(k) = (p[i] - p[j]).squaredNorm();
    cosines(k) = f[i].dot(f[j]);
  }
  // near-double roots make the Jacobian almost singular and Newton linear,
  // hence the generous iteration cap
  for (int it = 0; it < 40; ++it) {
    Vec3 g;
    Mat3 jac = Mat3::Zero();
    for (int k = 0; k < 3; ++k) {
      const int i = kPairs[k][0], j = kPairs[k][1];
      const double si = depth(i), sj = depth(j);
      g(k) = si * si + sj * sj - 2.0 * si * sj * cosines(k) - d2(k);
      jac(k, i) = 2.0 * si - 2.0 * sj * cosines(k);
      jac(k, j) = 2.0 * sj - 2.0 * si * cosines(k);
    }
    if (g.norm() < 1e-15 * d2.sum()) break;
    const Vec3 step = jac.colPivHouseholderQr().solve(g);
    if (!step.allFinite()) return false;
    depth -= step;
  }
  return depth.allFinite() && (depth.array() > 0.0).all();
}

}  // namespace

Pose rigid_align(std::span<const Vec3> source, std::span<const Vec3> target) {
  const std::size_t n = source.size();
  Vec3 ms = Vec3::Zero(), mt = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    ms += source[i];
    mt += target[i];
  }
  ms /= static_cast<double>(n);
  mt /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) cov += (target[i] - mt) * (source[i] - ms).transpose();
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s(2, 2) = -1.0;
  const Mat3 r = svd.matrixU() * s * svd.matrixV().transpose();
  return Pose(r, mt - r * ms);
}

double angular_residual(const Pose& pose, const Vec3& bearing, const Vec3& point) {
  const Vec3 pc = pose.transform(point);
  return std::atan2(bearing.cross(pc).norm(), bearing.dot(pc));
}

std::vector<Pose> p3p(std::span<const Vec3> bearings, std::span<const Vec3> points) {
  if (bearings.size() != 3 || points.size() != 3) {
    fail(ErrorCode::kPrecondition, "P3P needs exactly 3 correspondences");
  }
  std::array<Vec3, 3> f = {bearings[0].normalized(), bearings[1].normalized(),
                           bearings[2].normalized()};
  std::array<Vec3, 3> pw = {points[0], points[1], points[2]};

  if (0.5 * (pw[1] - pw[0]).cross(pw[2] - pw[0]).norm() <= 1e-9) {
    fail(ErrorCode::kDegenerateConfiguration, "P3P world points are collinear");
  }
  if (f[0].cross(f[1]).norm() < 1e-12 || f[0].cross(f[2]).norm() < 1e-12 ||
      f[1].cross(f[2]).norm() < 1e-12) {
    fail(ErrorCode::kDegenerateConfiguration, "P3P bearings are parallel");
  }

  // intermediate camera frame
  auto camera_frame = [](const Vec3& f1, const Vec3& f2) {
    const Vec3 e1 = f1;
    const Vec3 e3 = f1.cross(f2).normalized();
    const Vec3 e2 = e3.cross(e1);
    Mat3 t;
    t.row(0) = e1;
    t.row(1) = e2;
    t.row(2) = e3;
    return t;
  };
  Mat3 T = camera_frame(f[0], f[1]);
  Vec3 f3 = T * f[2];
  if (f3.z() > 0.0) {
    std::swap(f[0], f[1]);
    std::swap(pw[0], pw[1]);
    T = camera_frame(f[0], f[1]);
    f3 = T * f[2];
  }

  // intermediate world frame
  const Vec3 n1 = (pw[1] - pw[0]).normalized();
  const Vec3 n3 = n1.cross(pw[2] - pw[0]).normalized();
  const Vec3 n2 = n3.cross(n1);
  Mat3 N;
  N.row(0) = n1;
  N.row(1) = n2;
  N.row(2) = n3;
  const Vec3 p3 = N * (pw[2] - pw[0]);

  const double d12 = (pw[1] - pw[0]).norm();
  const double f_1 = f3.x() / f3.z();
  const double f_2 = f3.y() / f3.z();
  const double p_1 = p3.x();
  const double p_2 = p3.y();

  const double cos_beta = f[0].dot(f[1]);
  double b = 1.0 / (1.0 - cos_beta * cos_beta) - 1.0;
  b = cos_beta < 0.0 ? -std::sqrt(b) : std::sqrt(b);

  const double f_1_pw2 = f_1 * f_1;
  const double f_2_pw2 = f_2 * f_2;
  const double p_1_pw2 = p_1 * p_1;
  const double p_1_pw3 = p_1_pw2 * p_1;
  const double p_1_pw4 = p_1_pw3 * p_1;
  const double p_2_pw2 = p_2 * p_2;
  const double p_2_pw3 = p_2_pw2 * p_2;
  const double p_2_pw4 = p_2_pw3 * p_2;
  const double d12_pw2 = d12 * d12;
  const double b_pw2 = b * b;

  std::array<double, 5> factors;
  factors[0] = -f_2_pw2 * p_2_pw4 - p_2_pw4 * f_1_pw2 - p_2_pw4;
  factors[1] = 2 * p_2_pw3 * d12 * b + 2 * f_2_pw2 * p_2_pw3 * d12 * b -
               2 * f_2 * p_2_pw3 * f_1 * d12;
  factors[2] = -f_2_pw2 * p_2_pw2 * p_1_pw2 - f_2_pw2 * p_2_pw2 * d12_pw2 * b_pw2 -
               f_2_pw2 * p_2_pw2 * d12_pw2 + f_2_pw2 * p_2_pw4 + p_2_pw4 * f_1_pw2 +
               2 * p_1 * p_2_pw2 * d12 + 2 * f_1 * f_2 * p_1 * p_2_pw2 * d12 * b -
               p_2_pw2 * p_1_pw2 * f_1_pw2 + 2 * p_1 * p_2_pw2 * f_2_pw2 * d12 -
               p_2_pw2 * d12_pw2 * b_pw2 - 2 * p_1_pw2 * p_2_pw2;
  factors[3] = 2 * p_1_pw2 * p_2 * d12 * b + 2 * f_2 * p_2_pw3 * f_1 * d12 -
               2 * f_2_pw2 * p_2_pw3 * d12 * b - 2 * p_1 * p_2 * d12_pw2 * b;
  factors[4] = -2 * f_2 * p_2_pw2 * f_1 * p_1 * d12 * b + f_2_pw2 * p_2_pw2 * d12_pw2 +
               2 * p_1_pw3 * d12 - p_1_pw2 * d12_pw2 + f_2_pw2 * p_2_pw2 * p_1_pw2 -
               p_1_pw4 - 2 * f_2_pw2 * p_2_pw2 * p_1 * d12 +
               p_2_pw2 * f_1_pw2 * p_1_pw2 + f_2_pw2 * p_2_pw2 * d12_pw2 * b_pw2;

  std::vector<Pose> solutions;
  for (double cos_theta : quartic_roots(factors)) {
    cos_theta = std::clamp(cos_theta, -1.0, 1.0);
    const double cot_alpha = (-f_1 * p_1 / f_2 - cos_theta * p_2 + d12 * b) /
                             (-f_1 * cos_theta * p_2 / f_2 + p_1 - d12);
    if (!std::isfinite(cot_alpha)) continue;
    const double sin_theta = std::sqrt(1.0 - cos_theta * cos_theta);
    const double sin_alpha = std::sqrt(1.0 / (cot_alpha * cot_alpha + 1.0));
    double cos_alpha = std::sqrt(1.0 - sin_alpha * sin_alpha);
    if (cot_alpha < 0.0) cos_alpha = -cos_alpha;

    const double k = d12 * sin_alpha * (sin_alpha * b + cos_alpha);
    Vec3 c(d12 * cos_alpha * (sin_alpha * b + cos_alpha), cos_theta * k, sin_theta * k);
    c = pw[0] + N.transpose() * c;

    Mat3 r;
    r << -cos_alpha, -sin_alpha * cos_theta, -sin_alpha * sin_theta,
          sin_alpha, -cos_alpha * cos_theta, -cos_alpha * sin_theta,
          0.0, -sin_theta, cos_theta;
    const Mat3 cam_to_world = N.transpose() * r.transpose() * T;
    const Mat3 world_to_cam = cam_to_world.transpose();

    // polish: refine depths on the exact distance constraints, then align
    Vec3 depth;
    for (int i = 0; i < 3; ++i) depth(i) = (world_to_cam * (pw[i] - c)).dot(f[i]);
    if (!polish_depths(f, pw, depth)) continue;
    std::array<Vec3, 3> cam_pts;
    for (int i = 0; i < 3; ++i) cam_pts[i] = depth(i) * f[i];
    const Pose pose = rigid_align(pw, cam_pts);

    bool ok = pose.translation().allFinite();
    for (int i = 0; i < 3 && ok; ++i) ok = angular_residual(pose, f[i], pw[i]) < 1e-6;
    if (!ok) continue;
    bool duplicate = false;
    for (const Pose& s : solutions) {
      if (rotation_angle(s.rotation(), pose.rotation()) < 1e-9 &&
          (s.translation() - pose.translation()).norm() < 1e-9 * (1.0 + pose.translation().norm())) {
        duplicate = true;
      }
    }
    if (!duplicate) solutions.push_back(pose);
  }
  return solutions;
}

}  // namespace uwvo
