#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "uwvo/geometry.hpp"

namespace uwvo {

/// One trajectory sample, camera-in-world: `position` is the camera center
/// and `orientation` rotates camera coordinates into the world frame.
struct TrajectorySample {
  double timestamp = 0.0;
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  static TrajectorySample from_pose(double timestamp, const Pose& world_to_camera);
};

struct Trajectory {
  std::vector<TrajectorySample> samples;

  /// Throws kValidation for an empty trajectory or non-increasing timestamps.
  void validate() const;
  std::vector<Vec3> positions() const;
  double path_length() const;
};

/// Text format, one sample per line: `timestamp tx ty tz qx qy qz qw`.
/// Lines starting with `#` and blank lines are skipped.
Trajectory read_trajectory(std::istream& in);
Trajectory read_trajectory(const std::filesystem::path& path);
void write_trajectory(const Trajectory& traj, std::ostream& out);
void write_trajectory(const Trajectory& traj, const std::filesystem::path& path);

struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

struct PositionPair {
  double t_est = 0.0;
  double t_gt = 0.0;
  Vec3 est = Vec3::Zero();
  Vec3 gt = Vec3::Zero();
};

/// Nearest-timestamp, one-to-one pairing with |dt| <= max_dt. Pairs are
/// claimed greedily by increasing |dt| and returned in estimate time order.
/// Throws kAssociation when nothing pairs.
std::vector<PositionPair> associate(const Trajectory& est, const Trajectory& gt,
                                    double max_dt = 0.02);

/// Closed-form similarity minimizing sum |target_i - (s R source_i + t)|^2.
/// Throws kPrecondition for fewer than 3 pairs and kDegenerateConfiguration
/// for collinear sources.
Similarity umeyama_align(std::span<const Vec3> source, std::span<const Vec3> target);

struct AteResult {
  double rmse = 0.0;
  double rmse_pct = 0.0;  // of the ground-truth path length
  Similarity alignment;
  std::vector<PositionPair> pairs;
  std::vector<double> errors;  // aligned error per pair
};

AteResult ate_rmse(const Trajectory& est, const Trajectory& gt, double max_dt = 0.02);

/// Endpoint error after similarity alignment, as a percentage of the
/// ground-truth path length.
double final_drift_pct(const Trajectory& est, const Trajectory& gt, double max_dt = 0.02);

/// Endpoint error of already aligned positions over the length of `gt`.
double endpoint_drift_pct(std::span<const Vec3> aligned_est, std::span<const Vec3> gt);

double path_length(std::span<const Vec3> points);

}  // namespace uwvo
