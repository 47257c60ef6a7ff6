#include "uwvo/frontend.hpp"

#include <algorithm>
#include <unordered_set>

#include "uwvo/error.hpp"

namespace uwvo {

namespace {

std::vector<TrackedPoint> all_lost(std::size_t n) { return std::vector<TrackedPoint>(n); }

std::uint64_t hash_handle(std::int64_t h, std::uint64_t seed) {
  std::uint64_t z = static_cast<std::uint64_t>(h) + 0x9e3779b97f4a7c15ULL * (seed + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

// ---------------------------------------------------------------------------

KltFrontend::KltFrontend(const VoConfig& config, int width, int height)
    : config_(config), width_(width), height_(height) {
  lk_.window = config.lk_window;
  lk_.max_iters = config.lk_max_iters;
}

void KltFrontend::load(const GrayImage& image, std::int64_t frame_id) {
  if (image.width != width_ || image.height != height_) {
    fail(ErrorCode::kDimensionMismatch,
         "frame is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
             ", camera expects " + std::to_string(width_) + "x" + std::to_string(height_));
  }
  current_ = std::make_shared<const Pyramid>(build_pyramid(image, config_.pyramid_levels));
  current_id_ = frame_id;
}

std::vector<TrackedPoint> KltFrontend::flow(const Pyramid& from, std::span<const Vec2> points,
                                            std::span<const Vec2> seeds) const {
  const std::vector<TrackedPoint> fwd = track_pyr_lk(from, *current_, points, seeds, lk_);
  return forward_backward_filter(from, *current_, points, fwd, config_.fb_threshold_px, lk_);
}

std::vector<TrackedPoint> KltFrontend::track(std::span<const std::int64_t>,
                                             std::span<const Vec2> points,
                                             std::span<const Vec2> seeds) {
  if (history_.empty() || !current_) return all_lost(points.size());
  return flow(*history_.back().second, points, seeds);
}

std::vector<TrackedPoint> KltFrontend::retrack(std::int64_t from_frame,
                                               std::span<const std::int64_t>,
                                               std::span<const Vec2> points,
                                               std::span<const Vec2> seeds) {
  for (const auto& [id, pyr] : history_) {
    if (id == from_frame) return flow(*pyr, points, seeds);
  }
  return all_lost(points.size());
}

std::vector<Detection> KltFrontend::detect(std::span<const Vec2> occupied,
                                           std::span<const std::int64_t>, int budget) {
  std::vector<Detection> out;
  if (budget <= 0 || !current_) return out;
  for (const Vec2& p : detect_shi_tomasi(current_->levels[0], config_.grid_cells, occupied, budget,
                                         config_.detect_quality)) {
    out.push_back({p, -1});
  }
  return out;
}

void KltFrontend::commit() {
  if (!current_) return;
  history_.emplace_back(current_id_, current_);
  while (history_.size() > static_cast<std::size_t>(config_.retrack_window) + 1) {
    history_.pop_front();
  }
}

// ---------------------------------------------------------------------------

InjectedFrontend::InjectedFrontend(const VoConfig& config, int width, int height)
    : config_(config), width_(width), height_(height) {}

void InjectedFrontend::load(std::span<const FeatureObservation> observations,
                            std::int64_t frame_id) {
  current_.assign(observations.begin(), observations.end());
  index_.clear();
  for (const FeatureObservation& o : current_) index_[o.track_id] = o.pixel;
  current_id_ = frame_id;
}

std::vector<TrackedPoint> InjectedFrontend::lookup(std::span<const std::int64_t> handles) const {
  std::vector<TrackedPoint> out(handles.size());
  for (std::size_t i = 0; i < handles.size(); ++i) {
    const auto it = index_.find(handles[i]);
    if (it == index_.end()) continue;
    out[i].position = it->second;
    out[i].status = TrackStatus::kTracked;
    out[i].fb_error = 0.0;
  }
  return out;
}

std::vector<TrackedPoint> InjectedFrontend::track(std::span<const std::int64_t> handles,
                                                  std::span<const Vec2>, std::span<const Vec2>) {
  if (history_.empty()) return all_lost(handles.size());
  return lookup(handles);
}

std::vector<TrackedPoint> InjectedFrontend::retrack(std::int64_t from_frame,
                                                    std::span<const std::int64_t> handles,
                                                    std::span<const Vec2>, std::span<const Vec2>) {
  if (std::find(history_.begin(), history_.end(), from_frame) == history_.end()) {
    return all_lost(handles.size());
  }
  return lookup(handles);
}

std::vector<Detection> InjectedFrontend::detect(std::span<const Vec2> occupied,
                                                std::span<const std::int64_t> exclude,
                                                int budget) {
  std::vector<Detection> out;
  if (budget <= 0) return out;
  const CellGrid grid(width_, height_, config_.grid_cells);
  std::vector<bool> taken(grid.size(), false);
  for (const Vec2& p : occupied) {
    const int c = grid.cell_of(p);
    if (c >= 0) taken[c] = true;
  }
  const std::unordered_set<std::int64_t> skip(exclude.begin(), exclude.end());

  // a stand-in for corner strength: a fixed pseudo-random score per id
  struct Candidate {
    std::uint64_t score;
    std::int64_t handle;
    Vec2 pixel;
    int cell;
  };
  std::vector<Candidate> candidates;
  for (const FeatureObservation& o : current_) {
    if (skip.count(o.track_id)) continue;
    const int c = grid.cell_of(o.pixel);
    if (c < 0 || taken[c]) continue;
    candidates.push_back({hash_handle(o.track_id, config_.seed), o.track_id, o.pixel, c});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.score != b.score ? a.score > b.score : a.handle < b.handle;
  });
  for (const Candidate& c : candidates) {
    if (static_cast<int>(out.size()) >= budget) break;
    if (taken[c.cell]) continue;
    taken[c.cell] = true;
    out.push_back({c.pixel, c.handle});
  }
  return out;
}

void InjectedFrontend::commit() {
  history_.push_back(current_id_);
  while (history_.size() > static_cast<std::size_t>(config_.retrack_window) + 1) {
    history_.pop_front();
  }
}

}  // namespace uwvo
