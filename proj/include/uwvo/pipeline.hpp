#pragma once

#include <cstdint>
#include <deque>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uwvo/bundle_adjustment.hpp"
#include "uwvo/config.hpp"
#include "uwvo/evaluation.hpp"
#include "uwvo/frontend.hpp"
#include "uwvo/geometry.hpp"
#include "uwvo/image.hpp"
#include "uwvo/synthetic.hpp"

namespace uwvo {

enum class VoMode { kUninitialized, kInitializing, kTracking, kLost };
const char* to_string(VoMode mode);

enum class TrackState { kPure2d, kMapped, kLost };

struct FeatureTrack {
  std::int64_t id = -1;
  std::int64_t handle = -1;        // front-end key
  std::deque<Vec2> positions;      // most recent last, bounded
  TrackState state = TrackState::kPure2d;
  std::optional<std::int64_t> landmark_id;
  std::int64_t last_seen_frame = -1;
  /// Pixel in keyframe `kf_id` (-1: not seen at the latest keyframe). During
  /// initialization this holds the reference-frame pixel.
  std::int64_t kf_id = -1;
  Vec2 kf_pixel = Vec2::Zero();

  const Vec2& position() const { return positions.back(); }
  void push(const Vec2& p);
};

/// Tracks lost in one frame, kept for re-tracking from the last frame they
/// were seen in.
struct RetrackEntry {
  std::int64_t lost_frame = -1;
  std::int64_t source_frame = -1;
  std::vector<FeatureTrack> tracks;
};

struct RetrackBuffer {
  std::deque<RetrackEntry> entries;
  std::size_t num_tracks() const;
  bool empty() const { return entries.empty(); }
};

struct Keyframe {
  std::int64_t id = -1;
  std::int64_t frame_id = -1;
  Pose pose;
  std::map<std::int64_t, Vec2> observations;  // landmark id -> pixel
  int mapped_count = 0;
  std::vector<std::pair<std::int64_t, Vec2>> pure2d;  // track id -> pixel
};

enum class KeyframeReason { kNone, kParallax, kSurvival };
const char* to_string(KeyframeReason reason);

struct KeyframeDecision {
  bool create = false;
  KeyframeReason reason = KeyframeReason::kNone;
};

/// Parallax rule first, then survival: mapped < ratio * reference_mapped.
KeyframeDecision should_create_keyframe(double median_parallax_px, int mapped,
                                        int reference_mapped, const VoConfig& config);

/// Removes the rotation `kf_to_cur` (rotation part of T_cur * T_kf^-1) from
/// current pixels: bearing, inverse rotation, reprojection. nullopt when the
/// compensated bearing points behind the keyframe camera.
std::vector<std::optional<Vec2>> unrotate_features(std::span<const Vec2> pixels,
                                                   const Quat& kf_to_cur,
                                                   const CameraModel& cam);

/// Resamples a raw image so that pixel p holds raw(distort(p)).
GrayImage undistort_image(const GrayImage& raw, const CameraModel& cam);

enum class FrameStatus { kInitProgress, kPoseEstimate, kTrackingLost };
const char* to_string(FrameStatus status);

struct FrameResult {
  FrameStatus status = FrameStatus::kInitProgress;
  std::int64_t frame_id = -1;
  double timestamp = 0.0;
  std::optional<Pose> pose;
  bool keyframe = false;
  KeyframeReason reason = KeyframeReason::kNone;
  int tracked = 0;    // active tracks after this frame
  int mapped = 0;     // of which mapped
  int inliers = 0;    // P3P inliers
  int recovered = 0;  // tracks brought back by retracking
  std::string message;
};

struct VoStats {
  int frames = 0;
  int keyframes = 0;
  int lost_episodes = 0;
  int ba_runs = 0;
  int culled = 0;
  long long recovered = 0;
  long long tracked_sum = 0;  // active tracks summed over tracking frames
  long long mapped_sum = 0;
  int tracking_frames = 0;
  std::int64_t init_frame = -1;
  std::vector<std::string> warnings;
};

/// Monocular keyframe odometry. Feed frames in order through process_frame
/// (images) or process_observations (pre-tracked features); one instance
/// accepts only one of the two.
class Odometry {
 public:
  Odometry(const CameraModel& cam, const VoConfig& config);
  ~Odometry();
  Odometry(const Odometry&) = delete;
  Odometry& operator=(const Odometry&) = delete;

  /// Throws kDimensionMismatch when the image does not match the camera.
  FrameResult process_frame(const GrayImage& image, double timestamp);
  FrameResult process_observations(std::span<const FeatureObservation> observations,
                                   double timestamp);

  /// Waits for an outstanding asynchronous bundle adjustment and merges it.
  void finish();
  /// Back to uninitialized; keeps the configuration and frame counter.
  void reset();

  VoMode mode() const { return mode_; }
  const CameraModel& camera() const { return cam_; }
  const VoConfig& config() const { return config_; }
  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  const std::map<std::int64_t, Landmark>& landmarks() const { return landmarks_; }
  const std::vector<FeatureTrack>& tracks() const { return tracks_; }
  const RetrackBuffer& retrack_buffer() const { return buffer_; }
  const VoStats& stats() const { return stats_; }
  std::optional<Pose> current_pose() const;
  int active_landmarks() const;

  /// Camera-in-world samples for every frame with a pose, re-based on the
  /// latest keyframe poses.
  Trajectory trajectory() const;

  /// Throws kValidation naming the first violated map invariant.
  void check_invariants() const;

 private:
  struct FrameRecord {
    std::int64_t frame_id = -1;
    double timestamp = 0.0;
    std::int64_t ref_keyframe = -1;
    Pose relative;  // T_frame * T_ref^-1
  };
  struct PendingBa;
  /// Track pixels of a frame seen while waiting for initialization parallax.
  struct InitFrame {
    std::int64_t frame_id = -1;
    double timestamp = 0.0;
    std::vector<std::pair<std::int64_t, Vec2>> pixels;  // track id -> pixel
  };

  FrameResult step(Frontend& fe, double timestamp);
  void start_reference(Frontend& fe, FrameResult& result);
  void try_initialize(Frontend& fe, FrameResult& result);
  void localize_init_frames();
  void track_frame(Frontend& fe, FrameResult& result);
  void retrack_lost(Frontend& fe, const Pose& predicted, FrameResult& result);
  void create_keyframe(Frontend& fe, FrameResult& result);
  void refill(Frontend& fe, const Keyframe& kf);
  void schedule_ba();
  void merge_ba(const OptimizationWindow& before, const BaResult& ba);
  void poll_ba(bool wait);
  void cull_landmarks(const std::vector<std::int64_t>& ids);
  void move_to_buffer(std::vector<FeatureTrack>&& lost, std::int64_t frame_id);
  void record_frame(std::int64_t frame_id, double timestamp, const Pose& pose);
  std::vector<std::int64_t> occupied_handles() const;
  Vec2 seed_for(const FeatureTrack& t, const Pose& predicted) const;
  double keyframe_parallax() const;
  int mapped_count() const;
  FeatureTrack new_track(const Detection& d, std::int64_t frame_id);
  std::uint64_t frame_seed(std::int64_t frame_id, int purpose) const;

  CameraModel cam_;
  VoConfig config_;
  std::unique_ptr<KltFrontend> klt_;
  std::unique_ptr<InjectedFrontend> injected_;

  VoMode mode_ = VoMode::kUninitialized;
  std::int64_t next_frame_ = 0;
  std::int64_t next_track_ = 0;
  std::int64_t next_landmark_ = 0;
  std::int64_t reference_frame_ = -1;
  double reference_timestamp_ = 0.0;
  int reference_count_ = 0;

  Pose current_pose_;
  std::optional<Pose> previous_pose_;  // for the constant-velocity model
  std::vector<FeatureTrack> tracks_;
  RetrackBuffer buffer_;
  std::vector<Keyframe> keyframes_;
  std::map<std::int64_t, Landmark> landmarks_;
  std::vector<FrameRecord> frames_;
  std::vector<InitFrame> init_frames_;
  VoStats stats_;
  std::unique_ptr<PendingBa> pending_;
};

}  // namespace uwvo
