#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "uwvo/config.hpp"
#include "uwvo/geometry.hpp"
#include "uwvo/image.hpp"
#include "uwvo/synthetic.hpp"
#include "uwvo/tracking.hpp"

namespace uwvo {

/// A newly detected feature. `handle` is front-end specific: the injected
/// front end uses the external track id, the image front end leaves it -1.
struct Detection {
  Vec2 pixel = Vec2::Zero();
  std::int64_t handle = -1;
};

/// Source of 2D feature motion for the pipeline. The pipeline loads one
/// frame at a time, asks for tracks from the previous frame (or from an
/// older buffered frame when retracking), detects new features, then
/// commits the frame.
class Frontend {
 public:
  virtual ~Frontend() = default;

  virtual std::int64_t current_frame() const = 0;

  /// Tracks features from the previous committed frame into the current one.
  virtual std::vector<TrackedPoint> track(std::span<const std::int64_t> handles,
                                          std::span<const Vec2> points,
                                          std::span<const Vec2> seeds) = 0;

  /// Tracks features last seen in committed frame `from_frame` directly into
  /// the current frame. Returns all-lost when that frame is no longer held.
  virtual std::vector<TrackedPoint> retrack(std::int64_t from_frame,
                                            std::span<const std::int64_t> handles,
                                            std::span<const Vec2> points,
                                            std::span<const Vec2> seeds) = 0;

  /// Grid-bucketed detection in the current frame, avoiding cells that hold
  /// an `occupied` point and features whose handle is in `exclude`.
  virtual std::vector<Detection> detect(std::span<const Vec2> occupied,
                                        std::span<const std::int64_t> exclude, int budget) = 0;

  /// Makes the current frame the previous one and keeps it for retracking.
  virtual void commit() = 0;
};

/// Pyramidal LK on images with forward-backward filtering.
class KltFrontend final : public Frontend {
 public:
  KltFrontend(const VoConfig& config, int width, int height);

  /// Throws kDimensionMismatch when the image size differs from the camera.
  void load(const GrayImage& image, std::int64_t frame_id);

  std::int64_t current_frame() const override { return current_id_; }
  std::vector<TrackedPoint> track(std::span<const std::int64_t> handles,
                                  std::span<const Vec2> points,
                                  std::span<const Vec2> seeds) override;
  std::vector<TrackedPoint> retrack(std::int64_t from_frame, std::span<const std::int64_t> handles,
                                    std::span<const Vec2> points,
                                    std::span<const Vec2> seeds) override;
  std::vector<Detection> detect(std::span<const Vec2> occupied,
                                std::span<const std::int64_t> exclude, int budget) override;
  void commit() override;

 private:
  std::vector<TrackedPoint> flow(const Pyramid& from, std::span<const Vec2> points,
                                 std::span<const Vec2> seeds) const;

  VoConfig config_;
  LkParams lk_;
  int width_, height_;
  std::int64_t current_id_ = -1;
  std::shared_ptr<const Pyramid> current_;
  std::deque<std::pair<std::int64_t, std::shared_ptr<const Pyramid>>> history_;
};

/// Feature-level injection: observations arrive pre-tracked, keyed by an
/// external track id. Tracking looks the id up in the current frame;
/// detection picks untracked observations, one per free grid cell.
class InjectedFrontend final : public Frontend {
 public:
  InjectedFrontend(const VoConfig& config, int width, int height);

  void load(std::span<const FeatureObservation> observations, std::int64_t frame_id);

  std::int64_t current_frame() const override { return current_id_; }
  std::vector<TrackedPoint> track(std::span<const std::int64_t> handles,
                                  std::span<const Vec2> points,
                                  std::span<const Vec2> seeds) override;
  std::vector<TrackedPoint> retrack(std::int64_t from_frame, std::span<const std::int64_t> handles,
                                    std::span<const Vec2> points,
                                    std::span<const Vec2> seeds) override;
  std::vector<Detection> detect(std::span<const Vec2> occupied,
                                std::span<const std::int64_t> exclude, int budget) override;
  void commit() override;

 private:
  std::vector<TrackedPoint> lookup(std::span<const std::int64_t> handles) const;

  VoConfig config_;
  int width_, height_;
  std::int64_t current_id_ = -1;
  std::vector<FeatureObservation> current_;
  std::unordered_map<std::int64_t, Vec2> index_;
  std::deque<std::int64_t> history_;
};

}  // namespace uwvo
