#pragma once

#include <limits>
#include <span>
#include <vector>

#include "uwvo/geometry.hpp"
#include "uwvo/image.hpp"

namespace uwvo {

struct ShiTomasiParams {
  int grid_cells = 500;
  int budget = 250;
  double quality = 0.01;
};

/// Minimum-eigenvalue corner detector with grid bucketing: at most one
/// corner per cell, cells holding an `occupied` point are skipped, and the
/// strongest `budget` cell winners are returned sorted by decreasing score.
std::vector<Vec2> detect_shi_tomasi(const GrayImage& img, int grid_cells,
                                    std::span<const Vec2> occupied, int budget,
                                    double quality);

inline std::vector<Vec2> detect_shi_tomasi(const GrayImage& img,
                                           const ShiTomasiParams& p,
                                           std::span<const Vec2> occupied = {}) {
  return detect_shi_tomasi(img, p.grid_cells, occupied, p.budget, p.quality);
}

/// Grid geometry used for bucketing: `cols * rows` is close to the requested
/// cell count with roughly square cells.
struct CellGrid {
  int cols = 1;
  int rows = 1;
  double cell_w = 1.0;
  double cell_h = 1.0;

  CellGrid(int width, int height, int cells);
  int cell_of(const Vec2& p) const;
  int size() const { return cols * rows; }
};

enum class TrackStatus { kTracked, kLost };

struct TrackedPoint {
  Vec2 position = Vec2::Zero();
  TrackStatus status = TrackStatus::kLost;
  double fb_error = std::numeric_limits<double>::infinity();

  bool tracked() const { return status == TrackStatus::kTracked; }
};

struct LkParams {
  int window = 10;          // half-width, patch is (2w+1)^2
  int max_iters = 30;
  double epsilon = 0.01;    // px, per-level convergence
  double min_eig_ratio = 1e-4;
  double max_residual = 60.0;  // mean |I - J| at level 0, gray levels
  // lost when the level-0 residual exceeds this fraction of the template's
  // own mean absolute deviation (the match explains less than a flat patch)
  double max_residual_ratio = 1.0;
  // lost when a level below the coarsest moves the estimate by more than
  // this fraction of the window half-width
  double max_level_step = 0.5;
};

/// Pyramidal Lucas-Kanade. `seeds` are initial guesses for the positions in
/// `cur` (pass `points` when no prior is available).
std::vector<TrackedPoint> track_pyr_lk(const Pyramid& prev, const Pyramid& cur,
                                       std::span<const Vec2> points,
                                       std::span<const Vec2> seeds,
                                       const LkParams& params = {});

/// Tracks every forward survivor back into `prev` and drops those whose
/// round trip misses the original position by more than `threshold` px.
std::vector<TrackedPoint> forward_backward_filter(
    const Pyramid& prev, const Pyramid& cur, std::span<const Vec2> points,
    std::span<const TrackedPoint> forward, double threshold,
    const LkParams& params = {});

}  // namespace uwvo
