#pragma once

#include <span>
#include <vector>

#include "uwvo/geometry.hpp"

namespace uwvo {

/// Absolute pose from three bearing / world-point pairs (Kneip's
/// parameterization, roots polished on the distance constraints). Returns up
/// to four world-to-camera poses. Throws kDegenerateConfiguration for
/// collinear world points or parallel bearings.
std::vector<Pose> p3p(std::span<const Vec3> bearings, std::span<const Vec3> points);

/// Angle between a bearing and the direction to the transformed point; pi
/// when the point lies behind the camera plane along the bearing.
double angular_residual(const Pose& pose, const Vec3& bearing, const Vec3& point);

/// Least-squares rigid transform (R, t) with target_i ~ R source_i + t.
Pose rigid_align(std::span<const Vec3> source, std::span<const Vec3> target);

}  // namespace uwvo
