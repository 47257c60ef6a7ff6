#include "uwvo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include "uwvo/error.hpp"
#include "uwvo/essential.hpp"
#include "uwvo/pose_refine.hpp"
#include "uwvo/ransac.hpp"

namespace uwvo {

namespace {

constexpr std::size_t kPositionHistory = 8;
constexpr std::size_t kMinGateMatches = 15;
constexpr std::size_t kMinParallaxTracks = 10;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

bool reprojects_within(const Pose& pose, const CameraModel& cam, const Vec3& x, const Vec2& px,
                       double threshold) {
  if (!(pose.transform(x).z() > 0.0)) return false;
  return (project(pose, cam, x) - px).norm() <= threshold;
}

}  // namespace

const char* to_string(VoMode mode) {
  switch (mode) {
    case VoMode::kUninitialized: return "uninitialized";
    case VoMode::kInitializing: return "initializing";
    case VoMode::kTracking: return "tracking";
    case VoMode::kLost: return "lost";
  }
  return "unknown";
}

const char* to_string(KeyframeReason reason) {
  switch (reason) {
    case KeyframeReason::kNone: return "none";
    case KeyframeReason::kParallax: return "parallax";
    case KeyframeReason::kSurvival: return "survival";
  }
  return "unknown";
}

const char* to_string(FrameStatus status) {
  switch (status) {
    case FrameStatus::kInitProgress: return "init";
    case FrameStatus::kPoseEstimate: return "pose";
    case FrameStatus::kTrackingLost: return "lost";
  }
  return "unknown";
}

void FeatureTrack::push(const Vec2& p) {
  positions.push_back(p);
  while (positions.size() > kPositionHistory) positions.pop_front();
}

std::size_t RetrackBuffer::num_tracks() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.tracks.size();
  return n;
}

KeyframeDecision should_create_keyframe(double median_parallax_px, int mapped,
                                        int reference_mapped, const VoConfig& config) {
  if (median_parallax_px >= config.parallax_kf_px) return {true, KeyframeReason::kParallax};
  if (reference_mapped > 0 && mapped < config.kf_survival_ratio * reference_mapped) {
    return {true, KeyframeReason::kSurvival};
  }
  return {};
}

std::vector<std::optional<Vec2>> unrotate_features(std::span<const Vec2> pixels,
                                                   const Quat& kf_to_cur,
                                                   const CameraModel& cam) {
  std::vector<std::optional<Vec2>> out;
  out.reserve(pixels.size());
  const Quat back = kf_to_cur.conjugate();
  for (const Vec2& p : pixels) {
    const Vec3 b = back * cam.bearing(p);
    if (b.z() <= 1e-12) {
      out.emplace_back();
      continue;
    }
    out.emplace_back(cam.denormalize(Vec2(b.x() / b.z(), b.y() / b.z())));
  }
  return out;
}

GrayImage undistort_image(const GrayImage& raw, const CameraModel& cam) {
  if (!cam.has_distortion()) return raw;
  GrayImage out(raw.width, raw.height);
  for (int y = 0; y < raw.height; ++y) {
    for (int x = 0; x < raw.width; ++x) {
      const Vec2 d = cam.distort(Vec2(x, y));
      const float v = std::round(sample_bilinear(raw, d.x(), d.y()));
      out(x, y) = static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Odometry::PendingBa {
  OptimizationWindow before;
  std::future<BaResult> result;
};

Odometry::Odometry(const CameraModel& cam, const VoConfig& config) : cam_(cam), config_(config) {
  cam_.validate();
  config_.validate();
}

Odometry::~Odometry() {
  if (pending_ && pending_->result.valid()) pending_->result.wait();
}

FrameResult Odometry::process_frame(const GrayImage& image, double timestamp) {
  if (injected_) fail(ErrorCode::kPrecondition, "this instance is fed with observations");
  if (!klt_) klt_ = std::make_unique<KltFrontend>(config_, cam_.width, cam_.height);
  klt_->load(cam_.has_distortion() ? undistort_image(image, cam_) : image, next_frame_);
  ++next_frame_;
  return step(*klt_, timestamp);
}

FrameResult Odometry::process_observations(std::span<const FeatureObservation> observations,
                                           double timestamp) {
  if (klt_) fail(ErrorCode::kPrecondition, "this instance is fed with images");
  if (!injected_) injected_ = std::make_unique<InjectedFrontend>(config_, cam_.width, cam_.height);
  injected_->load(observations, next_frame_);
  ++next_frame_;
  return step(*injected_, timestamp);
}

FrameResult Odometry::step(Frontend& fe, double timestamp) {
  FrameResult r;
  r.frame_id = fe.current_frame();
  r.timestamp = timestamp;
  poll_ba(false);
  switch (mode_) {
    case VoMode::kUninitialized:
      reference_timestamp_ = timestamp;
      start_reference(fe, r);
      break;
    case VoMode::kInitializing:
      try_initialize(fe, r);
      if (mode_ == VoMode::kInitializing && r.frame_id == reference_frame_) {
        reference_timestamp_ = timestamp;
      }
      break;
    case VoMode::kTracking:
      track_frame(fe, r);
      break;
    case VoMode::kLost:
      r.status = FrameStatus::kTrackingLost;
      r.message = "tracking lost; reset required";
      break;
  }
  if (r.status == FrameStatus::kPoseEstimate) {
    record_frame(r.frame_id, timestamp, current_pose_);
    r.pose = current_pose_;
  }
  r.tracked = static_cast<int>(tracks_.size());
  r.mapped = mapped_count();
  fe.commit();
  ++stats_.frames;
  return r;
}

void Odometry::finish() { poll_ba(true); }

void Odometry::reset() {
  poll_ba(true);
  mode_ = VoMode::kUninitialized;
  tracks_.clear();
  buffer_.entries.clear();
  keyframes_.clear();
  landmarks_.clear();
  frames_.clear();
  init_frames_.clear();
  previous_pose_.reset();
  current_pose_ = Pose();
}

std::optional<Pose> Odometry::current_pose() const {
  if (mode_ != VoMode::kTracking) return std::nullopt;
  return current_pose_;
}

int Odometry::active_landmarks() const {
  int n = 0;
  for (const auto& [id, lm] : landmarks_) n += lm.active() ? 1 : 0;
  return n;
}

int Odometry::mapped_count() const {
  int n = 0;
  for (const FeatureTrack& t : tracks_) n += t.state == TrackState::kMapped ? 1 : 0;
  return n;
}

std::uint64_t Odometry::frame_seed(std::int64_t frame_id, int purpose) const {
  return splitmix(config_.seed ^ splitmix(static_cast<std::uint64_t>(frame_id) * 8 + purpose));
}

FeatureTrack Odometry::new_track(const Detection& d, std::int64_t frame_id) {
  FeatureTrack t;
  t.id = next_track_++;
  t.handle = d.handle;
  t.push(d.pixel);
  t.last_seen_frame = frame_id;
  t.kf_pixel = d.pixel;
  return t;
}

std::vector<std::int64_t> Odometry::occupied_handles() const {
  std::vector<std::int64_t> out;
  for (const FeatureTrack& t : tracks_) {
    if (t.handle >= 0) out.push_back(t.handle);
  }
  for (const auto& e : buffer_.entries) {
    for (const FeatureTrack& t : e.tracks) {
      if (t.handle >= 0) out.push_back(t.handle);
    }
  }
  return out;
}

Vec2 Odometry::seed_for(const FeatureTrack& t, const Pose& predicted) const {
  if (t.state == TrackState::kMapped && t.landmark_id) {
    const auto it = landmarks_.find(*t.landmark_id);
    if (it != landmarks_.end() && it->second.active() &&
        predicted.transform(it->second.position).z() > 0.0) {
      const Vec2 px = project(predicted, cam_, it->second.position);
      if (cam_.in_bounds(px)) return px;
    }
  }
  return t.position();
}

void Odometry::record_frame(std::int64_t frame_id, double timestamp, const Pose& pose) {
  const Keyframe& ref = keyframes_.back();
  frames_.push_back({frame_id, timestamp, ref.id, compose(pose, inverse(ref.pose))});
}

// ---------------------------------------------------------------------------
// Initialization

void Odometry::start_reference(Frontend& fe, FrameResult& r) {
  tracks_.clear();
  init_frames_.clear();
  buffer_.entries.clear();
  const std::int64_t frame = fe.current_frame();
  for (const Detection& d : fe.detect({}, {}, config_.max_features)) {
    tracks_.push_back(new_track(d, frame));
  }
  reference_frame_ = frame;
  reference_count_ = static_cast<int>(tracks_.size());
  mode_ = VoMode::kInitializing;
  r.status = FrameStatus::kInitProgress;
  r.message = "reference frame with " + std::to_string(tracks_.size()) + " features";
}

void Odometry::try_initialize(Frontend& fe, FrameResult& r) {
  r.status = FrameStatus::kInitProgress;
  const std::int64_t frame = fe.current_frame();

  std::vector<std::int64_t> handles;
  std::vector<Vec2> points;
  for (const FeatureTrack& t : tracks_) {
    handles.push_back(t.handle);
    points.push_back(t.position());
  }
  const std::vector<TrackedPoint> res = fe.track(handles, points, points);
  std::vector<FeatureTrack> kept;
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    if (!res[i].tracked()) continue;
    tracks_[i].push(res[i].position);
    tracks_[i].last_seen_frame = frame;
    kept.push_back(std::move(tracks_[i]));
  }
  tracks_ = std::move(kept);
  InitFrame seen{frame, r.timestamp, {}};
  for (const FeatureTrack& t : tracks_) seen.pixels.emplace_back(t.id, t.position());
  init_frames_.push_back(std::move(seen));

  const auto min_kept =
      static_cast<std::size_t>(std::max(2 * config_.min_tracked, reference_count_ / 4));
  if (tracks_.size() < min_kept) {
    start_reference(fe, r);
    r.message = "too few features survived; new reference frame";
    return;
  }

  std::vector<double> raw;
  for (const FeatureTrack& t : tracks_) raw.push_back((t.position() - t.kf_pixel).norm());
  if (median(raw) < config_.init_parallax_px) {
    r.message = "waiting for parallax";
    return;
  }

  std::vector<BearingPair> matches;
  for (const FeatureTrack& t : tracks_) {
    matches.push_back({cam_.bearing(t.kf_pixel), cam_.bearing(t.position())});
  }
  RansacOptions opts;
  opts.threshold = config_.essential_threshold_rad;
  opts.confidence = config_.ransac_confidence;
  opts.max_iters = config_.ransac_max_iters;
  opts.seed = frame_seed(frame, 1);
  Decomposition dec;
  std::vector<std::size_t> inliers;
  try {
    const auto model = ransac(matches.size(), make_essential_kernel(matches), opts);
    inliers = model.inliers;
    std::vector<BearingPair> in_matches;
    for (std::size_t i : inliers) in_matches.push_back(matches[i]);
    dec = decompose_essential(model.model, in_matches);
  } catch (const Error& e) {
    start_reference(fe, r);
    r.message = std::string("initialization failed (") + e.what() + "); new reference frame";
    return;
  }

  // parallax left after removing the estimated rotation
  std::vector<Vec2> cur;
  for (std::size_t i : inliers) cur.push_back(tracks_[i].position());
  const auto comp = unrotate_features(cur, dec.pose.rotation(), cam_);
  std::vector<double> unrotated;
  for (std::size_t k = 0; k < inliers.size(); ++k) {
    if (comp[k]) unrotated.push_back((*comp[k] - tracks_[inliers[k]].kf_pixel).norm());
  }
  if (median(unrotated) < config_.init_parallax_px) {
    r.message = "waiting for translational parallax";
    return;
  }

  const Pose pose_a;
  const Pose& pose_b = dec.pose;
  std::vector<std::pair<std::size_t, Vec3>> points3d;
  for (std::size_t i : inliers) {
    const FeatureTrack& t = tracks_[i];
    try {
      const Vec3 x = triangulate(pose_a, pose_b, cam_, t.kf_pixel, t.position());
      if (reprojects_within(pose_a, cam_, x, t.kf_pixel, config_.cull_threshold_px) &&
          reprojects_within(pose_b, cam_, x, t.position(), config_.cull_threshold_px)) {
        points3d.emplace_back(i, x);
      }
    } catch (const Error&) {
    }
  }
  if (points3d.size() < static_cast<std::size_t>(2 * config_.min_tracked)) {
    r.message = "too few triangulated points; waiting";
    return;
  }

  Keyframe kf0, kf1;
  kf0.id = 0;
  kf0.frame_id = reference_frame_;
  kf1.id = 1;
  kf1.frame_id = frame;
  kf1.pose = pose_b;
  for (const auto& [i, x] : points3d) {
    FeatureTrack& t = tracks_[i];
    Landmark lm;
    lm.id = next_landmark_++;
    lm.position = x;
    lm.observations[0] = t.kf_pixel;
    lm.observations[1] = t.position();
    kf0.observations[lm.id] = t.kf_pixel;
    kf1.observations[lm.id] = t.position();
    t.state = TrackState::kMapped;
    t.landmark_id = lm.id;
    landmarks_[lm.id] = std::move(lm);
  }
  std::vector<bool> is_inlier(tracks_.size(), false);
  for (std::size_t i : inliers) is_inlier[i] = true;
  std::vector<FeatureTrack> survivors;
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    if (!is_inlier[i]) continue;
    tracks_[i].kf_id = 1;
    tracks_[i].kf_pixel = tracks_[i].position();
    survivors.push_back(std::move(tracks_[i]));
  }
  tracks_ = std::move(survivors);
  keyframes_ = {kf0, kf1};
  frames_.push_back({reference_frame_, reference_timestamp_, 0, Pose()});
  stats_.init_frame = frame;
  mode_ = VoMode::kTracking;
  current_pose_ = pose_b;
  previous_pose_.reset();

  schedule_ba();
  poll_ba(true);
  localize_init_frames();
  refill(fe, keyframes_.back());
  Keyframe& last = keyframes_.back();
  last.mapped_count = mapped_count();
  for (const FeatureTrack& t : tracks_) {
    if (t.state == TrackState::kPure2d) last.pure2d.emplace_back(t.id, t.position());
  }
  keyframes_.front().mapped_count = last.mapped_count;
  stats_.keyframes = static_cast<int>(keyframes_.size());

  r.status = FrameStatus::kPoseEstimate;
  r.keyframe = true;
  r.message = "initialized with " + std::to_string(points3d.size()) + " landmarks";
  if (mapped_count() < config_.min_tracked) {
    mode_ = VoMode::kLost;
    ++stats_.lost_episodes;
    r.status = FrameStatus::kTrackingLost;
    r.message = "initial map too small after culling";
  }
}

// Frames between the reference and the second keyframe get a pose from the
// bootstrap map, using the pixels their tracks had at the time.
void Odometry::localize_init_frames() {
  std::map<std::int64_t, std::int64_t> landmark_of;  // track id -> landmark id
  for (const FeatureTrack& t : tracks_) {
    if (t.state == TrackState::kMapped) landmark_of[t.id] = *t.landmark_id;
  }
  const std::int64_t last = keyframes_.back().frame_id;
  for (const InitFrame& f : init_frames_) {
    if (f.frame_id >= last) break;
    std::vector<Vec3> pts;
    std::vector<Vec2> pix;
    for (const auto& [track_id, px] : f.pixels) {
      const auto it = landmark_of.find(track_id);
      if (it == landmark_of.end()) continue;
      pts.push_back(landmarks_.at(it->second).position);
      pix.push_back(px);
    }
    if (pts.size() < static_cast<std::size_t>(config_.min_tracked)) continue;
    RansacOptions opts;
    opts.threshold = config_.p3p_threshold_rad;
    opts.confidence = config_.ransac_confidence;
    opts.max_iters = config_.ransac_max_iters;
    opts.seed = frame_seed(f.frame_id, 4);
    RansacResult<Pose> pnp;
    try {
      pnp = ransac(pts.size(), make_p3p_kernel(cam_, pts, pix), opts);
    } catch (const Error&) {
      continue;
    }
    if (pnp.inliers.size() < static_cast<std::size_t>(config_.min_tracked)) continue;
    frames_.push_back({f.frame_id, f.timestamp, 0, compose(pnp.model, inverse(keyframes_[0].pose))});
  }
  init_frames_.clear();
}

// ---------------------------------------------------------------------------
// Tracking

void Odometry::move_to_buffer(std::vector<FeatureTrack>&& lost, std::int64_t frame_id) {
  if (config_.retrack_window <= 0 || lost.empty()) return;
  if (buffer_.entries.empty() || buffer_.entries.back().lost_frame != frame_id) {
    buffer_.entries.push_back({frame_id, frame_id - 1, {}});
  }
  auto& dst = buffer_.entries.back().tracks;
  for (FeatureTrack& t : lost) dst.push_back(std::move(t));
}

void Odometry::retrack_lost(Frontend& fe, const Pose& predicted, FrameResult& r) {
  if (config_.retrack_window <= 0) {
    buffer_.entries.clear();
    return;
  }
  const std::int64_t frame = fe.current_frame();
  for (RetrackEntry& e : buffer_.entries) {
    if (e.lost_frame >= frame || e.tracks.empty()) continue;
    std::vector<std::int64_t> handles;
    std::vector<Vec2> points, seeds;
    for (const FeatureTrack& t : e.tracks) {
      handles.push_back(t.handle);
      points.push_back(t.position());
      seeds.push_back(seed_for(t, predicted));
    }
    const std::vector<TrackedPoint> res = fe.retrack(e.source_frame, handles, points, seeds);
    std::vector<FeatureTrack> still_lost;
    for (std::size_t i = 0; i < e.tracks.size(); ++i) {
      FeatureTrack& t = e.tracks[i];
      if (!res[i].tracked() || !cam_.in_bounds(res[i].position)) {
        still_lost.push_back(std::move(t));
        continue;
      }
      t.push(res[i].position);
      t.last_seen_frame = frame;
      if (t.state == TrackState::kMapped) {
        const auto it = landmarks_.find(*t.landmark_id);
        if (it == landmarks_.end() || !it->second.active()) {
          t.state = TrackState::kPure2d;
          t.landmark_id.reset();
          t.kf_id = -1;
        }
      }
      tracks_.push_back(std::move(t));
      ++r.recovered;
    }
    e.tracks = std::move(still_lost);
  }
  std::erase_if(buffer_.entries, [&](const RetrackEntry& e) {
    return e.tracks.empty() || frame - e.lost_frame >= config_.retrack_window;
  });
  stats_.recovered += r.recovered;
}

double Odometry::keyframe_parallax() const {
  const Keyframe& kf = keyframes_.back();
  const Quat rel = current_pose_.rotation() * kf.pose.rotation().conjugate();
  std::vector<const FeatureTrack*> sel;
  for (const FeatureTrack& t : tracks_) {
    if (t.kf_id == kf.id && t.state == TrackState::kPure2d) sel.push_back(&t);
  }
  if (sel.size() < kMinParallaxTracks) {
    sel.clear();
    for (const FeatureTrack& t : tracks_) {
      if (t.kf_id == kf.id) sel.push_back(&t);
    }
  }
  std::vector<Vec2> cur;
  for (const FeatureTrack* t : sel) cur.push_back(t->position());
  const auto comp = unrotate_features(cur, rel, cam_);
  std::vector<double> d;
  for (std::size_t i = 0; i < sel.size(); ++i) {
    if (comp[i]) d.push_back((*comp[i] - sel[i]->kf_pixel).norm());
  }
  return median(d);
}

void Odometry::track_frame(Frontend& fe, FrameResult& r) {
  const std::int64_t frame = fe.current_frame();
  const Pose predicted =
      previous_pose_ ? compose(compose(current_pose_, inverse(*previous_pose_)), current_pose_)
                     : current_pose_;

  // frame-to-frame tracking, seeded by the predicted pose
  std::vector<std::int64_t> handles;
  std::vector<Vec2> points, seeds;
  std::vector<double> dx, dy;
  for (const FeatureTrack& t : tracks_) {
    handles.push_back(t.handle);
    points.push_back(t.position());
    seeds.push_back(seed_for(t, predicted));
    if (t.state == TrackState::kMapped) {
      dx.push_back(seeds.back().x() - t.position().x());
      dy.push_back(seeds.back().y() - t.position().y());
    }
  }
  const Vec2 shift(median(dx), median(dy));
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    if (tracks_[i].state != TrackState::kMapped) seeds[i] = points[i] + shift;
  }
  const std::vector<TrackedPoint> res = fe.track(handles, points, seeds);
  std::vector<FeatureTrack> kept, lost;
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    if (res[i].tracked() && cam_.in_bounds(res[i].position)) {
      tracks_[i].push(res[i].position);
      tracks_[i].last_seen_frame = frame;
      kept.push_back(std::move(tracks_[i]));
    } else {
      lost.push_back(std::move(tracks_[i]));
    }
  }
  tracks_ = std::move(kept);
  retrack_lost(fe, predicted, r);
  move_to_buffer(std::move(lost), frame);

  // pulls the tracks at `drop` out of the active set, current pixel undone
  auto reject = [&](const std::vector<bool>& drop) {
    std::vector<FeatureTrack> keep, out;
    for (std::size_t i = 0; i < tracks_.size(); ++i) {
      if (!drop[i]) {
        keep.push_back(std::move(tracks_[i]));
        continue;
      }
      FeatureTrack& t = tracks_[i];
      if (t.positions.size() > 1) t.positions.pop_back();
      out.push_back(std::move(t));
    }
    tracks_ = std::move(keep);
    move_to_buffer(std::move(out), frame);
  };

  RansacOptions opts;
  opts.confidence = config_.ransac_confidence;
  opts.max_iters = config_.ransac_max_iters;

  // epipolar gate against the last keyframe
  {
    const std::int64_t kf_id = keyframes_.back().id;
    std::vector<std::size_t> idx;
    std::vector<BearingPair> matches;
    for (std::size_t i = 0; i < tracks_.size(); ++i) {
      if (tracks_[i].kf_id != kf_id) continue;
      idx.push_back(i);
      matches.push_back({cam_.bearing(tracks_[i].kf_pixel), cam_.bearing(tracks_[i].position())});
    }
    if (matches.size() >= kMinGateMatches) {
      opts.threshold = config_.essential_threshold_rad;
      opts.seed = frame_seed(frame, 2);
      try {
        const auto gate = ransac(matches.size(), make_essential_kernel(matches), opts);
        std::vector<bool> drop(tracks_.size(), false);
        for (std::size_t i : idx) drop[i] = true;
        for (std::size_t k : gate.inliers) drop[idx[k]] = false;
        reject(drop);
      } catch (const Error&) {
        // no consistent model: leave the tracks to P3P
      }
    }
  }

  auto lose = [&](const std::string& why) {
    mode_ = VoMode::kLost;
    ++stats_.lost_episodes;
    r.status = FrameStatus::kTrackingLost;
    r.message = why;
  };

  // absolute pose from mapped tracks
  std::vector<std::size_t> idx;
  std::vector<Vec3> pts;
  std::vector<Vec2> pix;
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    const FeatureTrack& t = tracks_[i];
    if (t.state != TrackState::kMapped) continue;
    const Landmark& lm = landmarks_.at(*t.landmark_id);
    idx.push_back(i);
    pts.push_back(lm.position);
    pix.push_back(t.position());
  }
  if (idx.size() < static_cast<std::size_t>(config_.min_tracked)) {
    lose("only " + std::to_string(idx.size()) + " mapped tracks");
    return;
  }
  opts.threshold = config_.p3p_threshold_rad;
  opts.seed = frame_seed(frame, 3);
  RansacResult<Pose> pnp;
  try {
    pnp = ransac(idx.size(), make_p3p_kernel(cam_, pts, pix), opts);
  } catch (const Error& e) {
    lose(std::string("pose estimation failed: ") + e.what());
    return;
  }
  r.inliers = static_cast<int>(pnp.inliers.size());
  if (pnp.inliers.size() < static_cast<std::size_t>(config_.min_tracked)) {
    lose("only " + std::to_string(pnp.inliers.size()) + " P3P inliers");
    return;
  }
  {
    std::vector<bool> drop(tracks_.size(), false);
    for (std::size_t i : idx) drop[i] = true;
    for (std::size_t k : pnp.inliers) drop[idx[k]] = false;
    reject(drop);
  }
  previous_pose_ = current_pose_;
  current_pose_ = pnp.model;
  r.status = FrameStatus::kPoseEstimate;

  const KeyframeDecision decision = should_create_keyframe(
      keyframe_parallax(), mapped_count(), keyframes_.back().mapped_count, config_);
  if (decision.create) {
    r.reason = decision.reason;
    create_keyframe(fe, r);
  }
  if (mode_ == VoMode::kTracking) {
    ++stats_.tracking_frames;
    stats_.tracked_sum += static_cast<long long>(tracks_.size());
    stats_.mapped_sum += mapped_count();
  }
}

// ---------------------------------------------------------------------------
// Keyframes and mapping

void Odometry::refill(Frontend& fe, const Keyframe& kf) {
  const int budget = config_.max_features - static_cast<int>(tracks_.size());
  if (budget <= 0) return;
  std::vector<Vec2> occupied;
  for (const FeatureTrack& t : tracks_) occupied.push_back(t.position());
  const std::vector<std::int64_t> exclude = occupied_handles();
  for (const Detection& d : fe.detect(occupied, exclude, budget)) {
    FeatureTrack t = new_track(d, fe.current_frame());
    t.kf_id = kf.id;
    tracks_.push_back(std::move(t));
  }
}

void Odometry::create_keyframe(Frontend& fe, FrameResult& r) {
  poll_ba(true);
  const Keyframe& prev = keyframes_.back();
  const std::int64_t prev_id = prev.id;
  const Pose prev_pose = prev.pose;

  Keyframe kf;
  kf.id = static_cast<std::int64_t>(keyframes_.size());
  kf.frame_id = fe.current_frame();
  kf.pose = current_pose_;
  for (const FeatureTrack& t : tracks_) {
    if (t.state != TrackState::kMapped) continue;
    landmarks_.at(*t.landmark_id).observations[kf.id] = t.position();
    kf.observations[*t.landmark_id] = t.position();
  }

  int created = 0;
  for (FeatureTrack& t : tracks_) {
    if (t.state != TrackState::kPure2d || t.kf_id != prev_id) continue;
    Vec3 x;
    try {
      x = triangulate(prev_pose, kf.pose, cam_, t.kf_pixel, t.position());
    } catch (const Error&) {
      continue;
    }
    if (!reprojects_within(prev_pose, cam_, x, t.kf_pixel, config_.cull_threshold_px) ||
        !reprojects_within(kf.pose, cam_, x, t.position(), config_.cull_threshold_px)) {
      continue;
    }
    Landmark lm;
    lm.id = next_landmark_++;
    lm.position = x;
    lm.observations[prev_id] = t.kf_pixel;
    lm.observations[kf.id] = t.position();
    keyframes_[prev_id].observations[lm.id] = t.kf_pixel;
    kf.observations[lm.id] = t.position();
    t.state = TrackState::kMapped;
    t.landmark_id = lm.id;
    landmarks_[lm.id] = std::move(lm);
    ++created;
  }
  if (created < config_.min_new_points) {
    stats_.warnings.push_back("keyframe " + std::to_string(kf.id) + ": only " +
                              std::to_string(created) + " new landmarks");
  }
  for (FeatureTrack& t : tracks_) {
    t.kf_id = kf.id;
    t.kf_pixel = t.position();
  }
  keyframes_.push_back(std::move(kf));
  schedule_ba();
  refill(fe, keyframes_.back());

  Keyframe& last = keyframes_.back();
  last.mapped_count = mapped_count();
  for (const FeatureTrack& t : tracks_) {
    if (t.state == TrackState::kPure2d) last.pure2d.emplace_back(t.id, t.position());
  }
  stats_.keyframes = static_cast<int>(keyframes_.size());
  r.keyframe = true;
  if (last.mapped_count < config_.min_tracked) {
    mode_ = VoMode::kLost;
    ++stats_.lost_episodes;
    r.status = FrameStatus::kTrackingLost;
    r.message = "map too small after keyframe " + std::to_string(last.id);
  }
}

void Odometry::schedule_ba() {
  const auto n = static_cast<std::int64_t>(keyframes_.size());
  const std::int64_t stored_begin = std::max<std::int64_t>(0, n - config_.ba_window);
  const std::int64_t mutable_begin =
      std::max({stored_begin, n - static_cast<std::int64_t>(config_.ba_mutable), std::int64_t{1}});
  if (mutable_begin >= n) return;

  OptimizationWindow w;
  std::set<std::int64_t> candidates;
  for (std::int64_t k = mutable_begin; k < n; ++k) {
    for (const auto& [lm_id, px] : keyframes_[k].observations) candidates.insert(lm_id);
  }
  std::set<std::int64_t> used_fixed;
  for (std::int64_t lm_id : candidates) {
    const Landmark& lm = landmarks_.at(lm_id);
    if (!lm.active()) continue;
    std::vector<WindowObservation> obs;
    for (const auto& [kf_id, px] : lm.observations) {
      if (kf_id >= stored_begin && kf_id < n) obs.push_back({kf_id, lm_id, px, config_.obs_sigma_px});
    }
    if (obs.size() < 2) continue;
    w.landmarks.push_back({lm_id, lm.position});
    for (const WindowObservation& o : obs) {
      if (o.keyframe_id < mutable_begin) used_fixed.insert(o.keyframe_id);
      w.observations.push_back(o);
    }
  }
  if (w.landmarks.empty()) return;
  for (std::int64_t k = mutable_begin; k < n; ++k) {
    WindowKeyframe wk{k, keyframes_[k].pose};
    if (k == 1) {
      wk.freeze_scale = true;
      wk.scale_anchor = keyframes_[0].pose.center();
    }
    w.mutable_keyframes.push_back(wk);
  }
  for (std::int64_t k : used_fixed) w.fixed_keyframes.push_back({k, keyframes_[k].pose});

  BaOptions opts;
  opts.max_iters = config_.ba_max_iters;
  const RobustKernel kernel = RobustKernel::huber(config_.huber_delta_px);
  ++stats_.ba_runs;
  if (config_.ba_async) {
    auto pending = std::make_unique<PendingBa>();
    pending->before = w;
    pending->result = std::async(std::launch::async, [w, cam = cam_, kernel, opts] {
      return local_bundle_adjust(w, cam, kernel, opts);
    });
    pending_ = std::move(pending);
    return;
  }
  try {
    merge_ba(w, local_bundle_adjust(w, cam_, kernel, opts));
  } catch (const Error& e) {
    stats_.warnings.push_back(std::string("bundle adjustment skipped: ") + e.what());
  }
}

void Odometry::poll_ba(bool wait) {
  if (!pending_) return;
  if (!wait &&
      pending_->result.wait_for(std::chrono::seconds(0)) != std::future_status::ready) {
    return;
  }
  std::unique_ptr<PendingBa> p = std::move(pending_);
  try {
    merge_ba(p->before, p->result.get());
  } catch (const Error& e) {
    stats_.warnings.push_back(std::string("bundle adjustment skipped: ") + e.what());
  }
}

void Odometry::merge_ba(const OptimizationWindow&, const BaResult& ba) {
  const std::int64_t last_id = keyframes_.back().id;
  const Pose last_old = keyframes_.back().pose;
  for (const WindowKeyframe& k : ba.window.mutable_keyframes) keyframes_[k.id].pose = k.pose;
  for (const WindowLandmark& l : ba.window.landmarks) {
    auto it = landmarks_.find(l.id);
    if (it != landmarks_.end() && it->second.active()) it->second.position = l.position;
  }
  OptimizationWindow w = ba.window;
  cull_landmarks(cull_outliers(w, cam_, config_.cull_threshold_px));

  // the front end's newer poses move with the latest keyframe
  const Pose last_new = keyframes_[last_id].pose;
  const Pose shift = compose(inverse(last_old), last_new);
  current_pose_ = compose(current_pose_, shift);
  if (previous_pose_) previous_pose_ = compose(*previous_pose_, shift);
}

void Odometry::cull_landmarks(const std::vector<std::int64_t>& ids) {
  if (ids.empty()) return;
  const std::unordered_set<std::int64_t> gone(ids.begin(), ids.end());
  for (std::int64_t id : ids) {
    Landmark& lm = landmarks_.at(id);
    lm.status = LandmarkStatus::kCulled;
    for (const auto& [kf_id, px] : lm.observations) keyframes_[kf_id].observations.erase(id);
  }
  std::erase_if(tracks_, [&](const FeatureTrack& t) {
    return t.state == TrackState::kMapped && gone.count(*t.landmark_id) > 0;
  });
  stats_.culled += static_cast<int>(ids.size());
}

// ---------------------------------------------------------------------------

Trajectory Odometry::trajectory() const {
  Trajectory out;
  for (const FrameRecord& f : frames_) {
    const Pose pose = compose(f.relative, keyframes_[f.ref_keyframe].pose);
    out.samples.push_back(TrajectorySample::from_pose(f.timestamp, pose));
  }
  return out;
}

void Odometry::check_invariants() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kValidation, what); };
  for (std::size_t k = 1; k < keyframes_.size(); ++k) {
    if (keyframes_[k].frame_id <= keyframes_[k - 1].frame_id) {
      bad("keyframe frame ids not increasing at keyframe " + std::to_string(k));
    }
  }
  for (const Keyframe& kf : keyframes_) {
    if (!kf.pose.translation().allFinite() || !kf.pose.rotation().coeffs().allFinite()) {
      bad("keyframe " + std::to_string(kf.id) + " has a non-finite pose");
    }
  }
  for (const auto& [id, lm] : landmarks_) {
    if (!lm.active()) continue;
    if (lm.observations.size() < 2) {
      bad("landmark " + std::to_string(id) + " has fewer than 2 observations");
    }
    for (const auto& [kf_id, px] : lm.observations) {
      if (kf_id < 0 || kf_id >= static_cast<std::int64_t>(keyframes_.size())) {
        bad("landmark " + std::to_string(id) + " observed by unknown keyframe");
      }
    }
  }
  for (const FeatureTrack& t : tracks_) {
    if (t.positions.empty()) bad("track " + std::to_string(t.id) + " has no position");
    if (t.state == TrackState::kMapped) {
      const auto it = t.landmark_id ? landmarks_.find(*t.landmark_id) : landmarks_.end();
      if (it == landmarks_.end() || !it->second.active()) {
        bad("mapped track " + std::to_string(t.id) + " points at an inactive landmark");
      }
    }
  }
  if (mode_ == VoMode::kTracking) {
    if (keyframes_.size() < 2) bad("tracking with fewer than 2 keyframes");
    if (mapped_count() < config_.min_tracked) bad("tracking with too few mapped tracks");
  }
}

}  // namespace uwvo
