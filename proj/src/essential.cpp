#include "uwvo/essential.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <array>
#include <cmath>

#include "uwvo/error.hpp"

namespace uwvo {

namespace {

// Polynomials of total degree <= 3 in (x, y, z), stored densely over the 20
// monomials in the elimination order used by the five-point reduction:
//   x^3 y^3 x^2y xy^2 x^2z x^2 y^2z y^2 xyz xy | xz^2 xz x yz^2 yz y z^3 z^2 z 1
struct Monomial {
  int x, y, z;
};

constexpr std::array<Monomial, 20> kMonomials{{
    {3, 0, 0}, {0, 3, 0}, {2, 1, 0}, {1, 2, 0}, {2, 0, 1},
    {2, 0, 0}, {0, 2, 1}, {0, 2, 0}, {1, 1, 1}, {1, 1, 0},
    {1, 0, 2}, {1, 0, 1}, {1, 0, 0}, {0, 1, 2}, {0, 1, 1},
    {0, 1, 0}, {0, 0, 3}, {0, 0, 2}, {0, 0, 1}, {0, 0, 0},
}};

constexpr int monomial_index(int x, int y, int z) {
  for (int i = 0; i < 20; ++i) {
    if (kMonomials[i].x == x && kMonomials[i].y == y && kMonomials[i].z == z) return i;
  }
  return -1;
}

struct MulTable {
  std::array<std::array<int, 20>, 20> idx{};
  constexpr MulTable() {
    for (int i = 0; i < 20; ++i) {
      for (int j = 0; j < 20; ++j) {
        const Monomial a = kMonomials[i];
        const Monomial b = kMonomials[j];
        idx[i][j] = (a.x + b.x + a.y + b.y + a.z + b.z) <= 3
                        ? monomial_index(a.x + b.x, a.y + b.y, a.z + b.z)
                        : -1;
      }
    }
  }
};
constexpr MulTable kMul{};

using Poly = std::array<double, 20>;

Poly operator*(const Poly& a, const Poly& b) {
  Poly out{};
  for (int i = 0; i < 20; ++i) {
    if (a[i] == 0.0) continue;
    for (int j = 0; j < 20; ++j) {
      if (b[j] == 0.0) continue;
      const int k = kMul.idx[i][j];
      if (k >= 0) out[k] += a[i] * b[j];
    }
  }
  return out;
}

Poly operator+(Poly a, const Poly& b) {
  for (int i = 0; i < 20; ++i) a[i] += b[i];
  return a;
}

Poly operator-(Poly a, const Poly& b) {
  for (int i = 0; i < 20; ++i) a[i] -= b[i];
  return a;
}

Poly operator*(double s, Poly a) {
  for (double& v : a) v *= s;
  return a;
}

// Univariate polynomials in z, coefficients low -> high.
using ZPoly = std::vector<double>;

ZPoly zmul(const ZPoly& a, const ZPoly& b) {
  ZPoly out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}

ZPoly zsub(const ZPoly& a, const ZPoly& b) {
  ZPoly out(std::max(a.size(), b.size()), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += a[i];
  for (std::size_t i = 0; i < b.size(); ++i) out[i] -= b[i];
  return out;
}

ZPoly zadd(const ZPoly& a, const ZPoly& b) {
  ZPoly out(std::max(a.size(), b.size()), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += a[i];
  for (std::size_t i = 0; i < b.size(); ++i) out[i] += b[i];
  return out;
}

ZPoly zshift(const ZPoly& a) {  // multiply by z
  ZPoly out(a.size() + 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i + 1] = a[i];
  return out;
}

double zeval(const ZPoly& p, double z) {
  double acc = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) acc = acc * z + *it;
  return acc;
}

double zeval_derivative(const ZPoly& p, double z) {
  double acc = 0.0;
  for (std::size_t i = p.size() - 1; i >= 1; --i) acc = acc * z + static_cast<double>(i) * p[i];
  return acc;
}

std::vector<double> real_roots(ZPoly p) {
  double scale = 0.0;
  for (double c : p) scale = std::max(scale, std::abs(c));
  if (scale == 0.0) return {};
  while (p.size() > 1 && std::abs(p.back()) <= 1e-14 * scale) p.pop_back();
  const int n = static_cast<int>(p.size()) - 1;
  if (n < 1) return {};

  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
  for (int i = 0; i < n; ++i) companion(i, n - 1) = -p[i] / p[n];

  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  std::vector<double> roots;
  for (int i = 0; i < n; ++i) {
    const std::complex<double> r = solver.eigenvalues()(i);
    // near-double roots come out as slightly complex pairs; the system
    // polish below decides whether they are genuine
    if (std::abs(r.imag()) >= 1e-3 * std::max(1.0, std::abs(r.real()))) continue;
    double z = r.real();
    // Newton polishing; keep the polished value only if it helps
    for (int it = 0; it < 10; ++it) {
      const double f = zeval(p, z);
      const double df = zeval_derivative(p, z);
      if (df == 0.0) break;
      const double zn = z - f / df;
      if (!std::isfinite(zn) || std::abs(zeval(p, zn)) >= std::abs(f)) break;
      z = zn;
    }
    roots.push_back(z);
  }
  return roots;
}

// Gauss-Newton on the ten cubic constraints in (x, y, z). The hidden-variable
// reduction loses accuracy when roots cluster; this restores it.
Vec3 polish_on_constraints(const Eigen::Matrix<double, 10, 20>& m, Vec3 p) {
  for (int it = 0; it < 8; ++it) {
    Eigen::Matrix<double, 20, 1> mono;
    Eigen::Matrix<double, 20, 3> dmono;
    for (int k = 0; k < 20; ++k) {
      const Monomial e = kMonomials[k];
      const double px[4] = {1.0, p.x(), p.x() * p.x(), p.x() * p.x() * p.x()};
      const double py[4] = {1.0, p.y(), p.y() * p.y(), p.y() * p.y() * p.y()};
      const double pz[4] = {1.0, p.z(), p.z() * p.z(), p.z() * p.z() * p.z()};
      mono(k) = px[e.x] * py[e.y] * pz[e.z];
      dmono(k, 0) = e.x > 0 ? e.x * px[e.x - 1] * py[e.y] * pz[e.z] : 0.0;
      dmono(k, 1) = e.y > 0 ? e.y * px[e.x] * py[e.y - 1] * pz[e.z] : 0.0;
      dmono(k, 2) = e.z > 0 ? e.z * px[e.x] * py[e.y] * pz[e.z - 1] : 0.0;
    }
    const Eigen::Matrix<double, 10, 1> f = m * mono;
    const Eigen::Matrix<double, 10, 3> j = m * dmono;
    const Vec3 step = j.colPivHouseholderQr().solve(-f);
    if (!step.allFinite()) break;
    p += step;
    if (step.norm() < 1e-15 * std::max(1.0, p.norm())) break;
  }
  return p;
}

const Eigen::Matrix4d& generic_rotation() {
  static const Eigen::Matrix4d r = [] {
    Eigen::Matrix4d a;
    a << 0.8147, 0.6324, 0.9575, 0.9572, 0.9058, 0.0975, 0.9649, 0.4854, 0.1270, 0.2785,
        0.1576, 0.8003, 0.9134, 0.5469, 0.9706, 0.1419;
    return Eigen::Matrix4d(Eigen::HouseholderQR<Eigen::Matrix4d>(a).householderQ());
  }();
  return r;
}

Eigen::Matrix<double, 3, 3> reshape(const Eigen::Matrix<double, 9, 1>& v) {
  Mat3 m;
  m << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  return m;
}

}  // namespace

std::vector<EssentialMatrix> essential_5pt(std::span<const Vec3> bearings_a,
                                           std::span<const Vec3> bearings_b) {
  if (bearings_a.size() != 5 || bearings_b.size() != 5) {
    fail(ErrorCode::kPrecondition, "five-point solver needs exactly 5 correspondences");
  }

  Eigen::Matrix<double, 5, 9> q;
  for (int i = 0; i < 5; ++i) {
    const Vec3 a = bearings_a[i].normalized();
    const Vec3 b = bearings_b[i].normalized();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) q(i, 3 * r + c) = b(r) * a(c);
    }
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 5, 9>> svd(q, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(4) < 1e-10 * sv(0)) {
    fail(ErrorCode::kDegenerateConfiguration, "five-point input is rank deficient");
  }
  // The null-space basis from the SVD follows the structure of the input. For
  // pure translation the true E ends up orthogonal to the last basis vector,
  // i.e. its root sits at infinity. A fixed generic rotation of the basis
  // avoids such alignments.
  const Eigen::Matrix<double, 9, 4> basis = svd.matrixV().rightCols<4>() * generic_rotation();
  const Mat3 X = reshape(basis.col(0));
  const Mat3 Y = reshape(basis.col(1));
  const Mat3 Z = reshape(basis.col(2));
  const Mat3 W = reshape(basis.col(3));

  // E = x X + y Y + z Z + W, entries as linear polynomials
  std::array<std::array<Poly, 3>, 3> E{};
  constexpr int ix = monomial_index(1, 0, 0);
  constexpr int iy = monomial_index(0, 1, 0);
  constexpr int iz = monomial_index(0, 0, 1);
  constexpr int i1 = monomial_index(0, 0, 0);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      E[r][c][ix] = X(r, c);
      E[r][c][iy] = Y(r, c);
      E[r][c][iz] = Z(r, c);
      E[r][c][i1] = W(r, c);
    }
  }

  std::array<std::array<Poly, 3>, 3> EEt{};
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      Poly acc{};
      for (int k = 0; k < 3; ++k) acc = acc + E[i][k] * E[j][k];
      EEt[i][j] = acc;
      EEt[j][i] = acc;
    }
  }
  const Poly trace = EEt[0][0] + EEt[1][1] + EEt[2][2];

  Eigen::Matrix<double, 10, 20> m;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      Poly acc{};
      for (int k = 0; k < 3; ++k) acc = acc + EEt[i][k] * E[k][j];
      const Poly row = 2.0 * acc - trace * E[i][j];
      for (int c = 0; c < 20; ++c) m(3 * i + j, c) = row[c];
    }
  }
  const Poly det = E[0][0] * (E[1][1] * E[2][2] - E[1][2] * E[2][1]) -
                   E[0][1] * (E[1][0] * E[2][2] - E[1][2] * E[2][0]) +
                   E[0][2] * (E[1][0] * E[2][1] - E[1][1] * E[2][0]);
  for (int c = 0; c < 20; ++c) m(9, c) = det[c];
  for (int r = 0; r < 10; ++r) {
    const double n = m.row(r).norm();
    if (n > 0.0) m.row(r) /= n;
  }

  Eigen::FullPivLU<Eigen::Matrix<double, 10, 10>> lu(m.leftCols<10>());
  lu.setThreshold(1e-12);
  if (lu.rank() < 10) {
    fail(ErrorCode::kDegenerateConfiguration, "five-point elimination is singular");
  }
  const Eigen::Matrix<double, 10, 10> reduced = lu.solve(m.rightCols<10>());

  // tail columns: xz^2 xz x yz^2 yz y z^3 z^2 z 1
  auto px = [&](int r) { return ZPoly{reduced(r, 2), reduced(r, 1), reduced(r, 0)}; };
  auto py = [&](int r) { return ZPoly{reduced(r, 5), reduced(r, 4), reduced(r, 3)}; };
  auto p1 = [&](int r) {
    return ZPoly{reduced(r, 9), reduced(r, 8), reduced(r, 7), reduced(r, 6)};
  };
  // rows 4..9 lead with x^2z, x^2, y^2z, y^2, xyz, xy
  std::array<std::array<ZPoly, 3>, 3> B;
  for (int k = 0; k < 3; ++k) {
    const int e = 4 + 2 * k;
    const int f = e + 1;
    B[k][0] = zsub(px(e), zshift(px(f)));
    B[k][1] = zsub(py(e), zshift(py(f)));
    B[k][2] = zsub(p1(e), zshift(p1(f)));
  }
  const ZPoly minor0 = zsub(zmul(B[1][1], B[2][2]), zmul(B[1][2], B[2][1]));
  const ZPoly minor1 = zsub(zmul(B[1][0], B[2][2]), zmul(B[1][2], B[2][0]));
  const ZPoly minor2 = zsub(zmul(B[1][0], B[2][1]), zmul(B[1][1], B[2][0]));
  const ZPoly det_b = zadd(zsub(zmul(B[0][0], minor0), zmul(B[0][1], minor1)),
                           zmul(B[0][2], minor2));

  std::vector<EssentialMatrix> out;
  for (double z : real_roots(det_b)) {
    Mat3 bz;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) bz(r, c) = zeval(B[r][c], z);
    }
    Vec3 v = bz.row(0).cross(bz.row(1));
    const Vec3 v2 = bz.row(0).cross(bz.row(2));
    const Vec3 v3 = bz.row(1).cross(bz.row(2));
    if (v2.norm() > v.norm()) v = v2;
    if (v3.norm() > v.norm()) v = v3;
    if (std::abs(v.z()) < 1e-14 * v.norm() || !v.allFinite()) continue;
    const Vec3 p = polish_on_constraints(m, Vec3(v.x() / v.z(), v.y() / v.z(), z));
    Mat3 e = p.x() * X + p.y() * Y + p.z() * Z + W;
    const double n = e.norm();
    if (!(n > 0.0) || !e.allFinite()) continue;
    e /= n;
    if (trace_constraint_residual(e) > 1e-6 || std::abs(e.determinant()) > 1e-6) continue;
    bool duplicate = false;
    for (const EssentialMatrix& o : out) {
      if (std::min((o.e - e).norm(), (o.e + e).norm()) < 1e-9) duplicate = true;
    }
    if (!duplicate) out.push_back({e});
  }
  return out;
}

std::vector<EssentialMatrix> essential_5pt(std::span<const BearingPair> matches) {
  if (matches.size() != 5) {
    fail(ErrorCode::kPrecondition, "five-point solver needs exactly 5 correspondences");
  }
  std::array<Vec3, 5> a, b;
  for (int i = 0; i < 5; ++i) {
    a[i] = matches[i].a;
    b[i] = matches[i].b;
  }
  return essential_5pt(a, b);
}

double epipolar_residual(const EssentialMatrix& e, const BearingPair& m) {
  return std::abs(m.b.dot(e.e * m.a));
}

double symmetric_angular_distance(const EssentialMatrix& e, const BearingPair& m) {
  const Vec3 na = e.e.transpose() * m.b;  // plane normal in frame a
  const Vec3 nb = e.e * m.a;              // plane normal in frame b
  const double la = na.norm() * m.a.norm();
  const double lb = nb.norm() * m.b.norm();
  if (la <= 0.0 || lb <= 0.0) return 0.0;
  const double da = std::asin(std::min(1.0, std::abs(na.dot(m.a)) / la));
  const double db = std::asin(std::min(1.0, std::abs(nb.dot(m.b)) / lb));
  return 0.5 * (da + db);
}

double trace_constraint_residual(const Mat3& e) {
  const Mat3 eet = e * e.transpose();
  return (2.0 * eet * e - eet.trace() * e).norm();
}

bool in_front_of_both(const Pose& a_to_b, const BearingPair& m) {
  // Midpoint triangulation in frame a: la * a = c_b + lb * rb.
  const Vec3 rb = a_to_b.rotation().conjugate() * m.b;
  const Vec3 cb = a_to_b.center();
  const Vec3& a = m.a;
  const double aa = a.dot(a), ab = a.dot(rb), bb = rb.dot(rb);
  const double denom = aa * bb - ab * ab;
  if (denom < 1e-14 * aa * bb) return false;
  const double ac = a.dot(cb), bc = rb.dot(cb);
  const double la = (bb * ac - ab * bc) / denom;
  const double lb = (ab * ac - aa * bc) / denom;
  return la > 0.0 && lb > 0.0;
}

Decomposition decompose_essential(const EssentialMatrix& e,
                                  std::span<const BearingPair> matches) {
  if (matches.empty()) {
    fail(ErrorCode::kPrecondition, "decomposition needs at least one correspondence");
  }
  Eigen::JacobiSVD<Mat3> svd(e.e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Mat3 w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Mat3 r1 = u * w * v.transpose();
  const Mat3 r2 = u * w.transpose() * v.transpose();
  const Vec3 t = u.col(2).normalized();

  const std::array<Pose, 4> candidates = {Pose(r1, t), Pose(r1, Vec3(-t)), Pose(r2, t),
                                          Pose(r2, Vec3(-t))};
  Decomposition best;
  best.inlier_count = -1;
  for (const Pose& cand : candidates) {
    int count = 0;
    for (const BearingPair& m : matches) count += in_front_of_both(cand, m) ? 1 : 0;
    if (count > best.inlier_count) best = {cand, count};
  }
  if (2 * best.inlier_count <= static_cast<int>(matches.size())) {
    fail(ErrorCode::kAmbiguousDecomposition,
         "no essential factorization puts a majority of points in front");
  }
  best.pose = Pose(best.pose.rotation(), best.pose.translation().normalized());
  return best;
}

}  // namespace uwvo
