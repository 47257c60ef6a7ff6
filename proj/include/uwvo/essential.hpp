#pragma once

#include <span>
#include <vector>

#include "uwvo/geometry.hpp"

namespace uwvo {

/// Essential matrix over unit bearings, normalized to unit Frobenius norm.
/// Convention: bearing_b^T * e * bearing_a = 0, with e = [t]x R for the pose
/// (R, t) mapping frame a into frame b.
struct EssentialMatrix {
  Mat3 e = Mat3::Zero();
};

/// One two-view correspondence as unit bearings in each camera frame.
struct BearingPair {
  Vec3 a;
  Vec3 b;
};

/// Five-point relative pose solver (Gauss-Jordan reduction of the ten cubic
/// constraints, degree-10 hidden-variable polynomial in z solved with a
/// companion matrix). Returns up to 10 real solutions. Throws
/// kDegenerateConfiguration for coincident or otherwise rank-deficient input.
std::vector<EssentialMatrix> essential_5pt(std::span<const Vec3> bearings_a,
                                           std::span<const Vec3> bearings_b);

std::vector<EssentialMatrix> essential_5pt(std::span<const BearingPair> matches);

/// Epipolar residual |b^T E a| for unit bearings.
double epipolar_residual(const EssentialMatrix& e, const BearingPair& m);

/// Symmetric angular epipolar distance: mean of the angles between each
/// bearing and the epipolar plane induced by the other, radians.
double symmetric_angular_distance(const EssentialMatrix& e, const BearingPair& m);

/// The cubic trace constraint 2 E E^T E - tr(E E^T) E, Frobenius norm.
double trace_constraint_residual(const Mat3& e);

struct Decomposition {
  Pose pose;          // maps frame a to frame b, |t| = 1
  int inlier_count = 0;
};

/// Picks the (R, t) factorization putting the most correspondences in front
/// of both cameras. Throws kAmbiguousDecomposition when no factorization
/// reaches a strict majority.
Decomposition decompose_essential(const EssentialMatrix& e,
                                  std::span<const BearingPair> matches);

/// True when the correspondence triangulates in front of both cameras for
/// the pose (frame a at identity).
bool in_front_of_both(const Pose& a_to_b, const BearingPair& m);

}  // namespace uwvo
