#include "uwvo/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uwvo/error.hpp"

namespace uwvo {

CellGrid::CellGrid(int width, int height, int cells) {
  cells = std::max(cells, 1);
  const double aspect = static_cast<double>(width) / std::max(height, 1);
  cols = std::max(1, static_cast<int>(std::lround(std::sqrt(cells * aspect))));
  rows = std::max(1, static_cast<int>(std::lround(static_cast<double>(cells) / cols)));
  cell_w = static_cast<double>(width) / cols;
  cell_h = static_cast<double>(height) / rows;
}

int CellGrid::cell_of(const Vec2& p) const {
  const int cx = std::clamp(static_cast<int>(std::floor(p.x() / cell_w)), 0, cols - 1);
  const int cy = std::clamp(static_cast<int>(std::floor(p.y() / cell_h)), 0, rows - 1);
  return cy * cols + cx;
}

namespace {

constexpr int kDetectBorder = 5;

double quadratic_peak_offset(double left, double mid, double right) {
  const double denom = left - 2.0 * mid + right;
  if (std::abs(denom) < 1e-12) return 0.0;
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

}  // namespace

std::vector<Vec2> detect_shi_tomasi(const GrayImage& img, int grid_cells,
                                    std::span<const Vec2> occupied, int budget,
                                    double quality) {
  if (budget <= 0) fail(ErrorCode::kPrecondition, "detection budget must be positive");
  if (grid_cells < 1) fail(ErrorCode::kPrecondition, "grid must have at least one cell");
  const int w = img.width;
  const int h = img.height;
  if (w < 2 * kDetectBorder + 3 || h < 2 * kDetectBorder + 3) return {};

  FloatImage gx, gy;
  scharr_gradients(img, gx, gy);

  // structure tensor entries, summed over a 3x3 block
  FloatImage xx(w, h), xy(w, h), yy(w, h);
  for (std::size_t i = 0; i < gx.data.size(); ++i) {
    xx.data[i] = gx.data[i] * gx.data[i];
    xy.data[i] = gx.data[i] * gy.data[i];
    yy.data[i] = gy.data[i] * gy.data[i];
  }
  FloatImage score(w, h);
  float max_score = 0.0f;
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      double a = 0, b = 0, c = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          a += xx(x + dx, y + dy);
          b += xy(x + dx, y + dy);
          c += yy(x + dx, y + dy);
        }
      }
      const double half_tr = 0.5 * (a + c);
      const double disc = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
      const float s = static_cast<float>(half_tr - disc);
      score(x, y) = s;
      max_score = std::max(max_score, s);
    }
  }
  if (!(max_score > 0.0f)) return {};
  const float threshold = static_cast<float>(quality) * max_score;

  const CellGrid grid(w, h, grid_cells);
  std::vector<char> blocked(grid.size(), 0);
  for (const Vec2& p : occupied) {
    if (p.x() >= 0 && p.y() >= 0 && p.x() < w && p.y() < h) blocked[grid.cell_of(p)] = 1;
  }

  struct Candidate {
    float score = -1.0f;
    int x = 0;
    int y = 0;
  };
  std::vector<Candidate> best(grid.size());
  for (int y = kDetectBorder; y < h - kDetectBorder; ++y) {
    for (int x = kDetectBorder; x < w - kDetectBorder; ++x) {
      const float s = score(x, y);
      if (s < threshold || s <= 0.0f) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if ((dx || dy) && score(x + dx, y + dy) > s) {
            is_max = false;
            break;
          }
        }
      }
      if (!is_max) continue;
      const int cell = grid.cell_of(Vec2(x, y));
      if (blocked[cell]) continue;
      if (s > best[cell].score) best[cell] = {s, x, y};
    }
  }

  std::vector<Candidate> winners;
  for (const Candidate& c : best) {
    if (c.score > 0.0f) winners.push_back(c);
  }
  std::sort(winners.begin(), winners.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  if (static_cast<int>(winners.size()) > budget) winners.resize(budget);

  std::vector<Vec2> corners;
  corners.reserve(winners.size());
  for (const Candidate& c : winners) {
    const double ox = quadratic_peak_offset(score(c.x - 1, c.y), c.score, score(c.x + 1, c.y));
    const double oy = quadratic_peak_offset(score(c.x, c.y - 1), c.score, score(c.x, c.y + 1));
    const Vec2 refined(c.x + ox, c.y + oy);
    // refinement must not push a winner into a neighbouring cell
    const bool same_cell = grid.cell_of(refined) == grid.cell_of(Vec2(c.x, c.y));
    corners.push_back(same_cell ? refined : Vec2(c.x, c.y));
  }
  return corners;
}

// ---------------------------------------------------------------------------
// Lucas-Kanade

namespace {

// Fills a (2r+1)^2 patch centred at (px, py). All samples share the same
// bilinear weights, so only the integer indices need clamping.
template <typename Image>
void sample_patch(const Image& img, double px, double py, int r, std::vector<float>& out) {
  const int side = 2 * r + 1;
  out.resize(static_cast<std::size_t>(side) * side);
  const double fx = std::floor(px);
  const double fy = std::floor(py);
  const float ax = static_cast<float>(px - fx);
  const float ay = static_cast<float>(py - fy);
  const float w00 = (1 - ax) * (1 - ay), w10 = ax * (1 - ay);
  const float w01 = (1 - ax) * ay, w11 = ax * ay;
  const int ix = static_cast<int>(fx) - r;
  const int iy = static_cast<int>(fy) - r;
  const int wm = img.width - 1;
  const int hm = img.height - 1;
  const bool interior = ix >= 0 && iy >= 0 && ix + side < wm && iy + side < hm;
  std::size_t k = 0;
  for (int j = 0; j < side; ++j) {
    const int y0 = interior ? iy + j : std::clamp(iy + j, 0, hm);
    const int y1 = interior ? y0 + 1 : std::clamp(iy + j + 1, 0, hm);
    for (int i = 0; i < side; ++i, ++k) {
      const int x0 = interior ? ix + i : std::clamp(ix + i, 0, wm);
      const int x1 = interior ? x0 + 1 : std::clamp(ix + i + 1, 0, wm);
      out[k] = w00 * img(x0, y0) + w10 * img(x1, y0) + w01 * img(x0, y1) + w11 * img(x1, y1);
    }
  }
}

bool inside(const GrayImage& img, const Vec2& p, double margin = 0.0) {
  return p.x() >= -margin && p.y() >= -margin && p.x() <= img.width - 1 + margin &&
         p.y() <= img.height - 1 + margin;
}

TrackedPoint track_one(const Pyramid& prev, const Pyramid& cur, const Vec2& point,
                       const Vec2& seed, const LkParams& params,
                       std::vector<float>& tmpl, std::vector<float>& gxs,
                       std::vector<float>& gys, std::vector<float>& warped) {
  TrackedPoint out;
  out.position = point;
  const int top = prev.num_levels() - 1;
  const int r = params.window;
  const double area = static_cast<double>((2 * r + 1) * (2 * r + 1));

  Vec2 guess = (seed - point) / std::ldexp(1.0, top);
  double mean_residual = 0.0;
  double template_spread = 0.0;
  for (int level = top; level >= 0; --level) {
    const double scale = std::ldexp(1.0, -level);
    const Vec2 p = point * scale;
    const GrayImage& prev_img = prev.levels[level];
    const GrayImage& cur_img = cur.levels[level];

    sample_patch(prev_img, p.x(), p.y(), r, tmpl);
    sample_patch(prev.grad_x[level], p.x(), p.y(), r, gxs);
    sample_patch(prev.grad_y[level], p.x(), p.y(), r, gys);

    double gxx = 0, gxy = 0, gyy = 0;
    for (std::size_t k = 0; k < tmpl.size(); ++k) {
      gxx += gxs[k] * gxs[k];
      gxy += gxs[k] * gys[k];
      gyy += gys[k] * gys[k];
    }
    const double min_eig =
        0.5 * (gxx + gyy) - std::sqrt(0.25 * (gxx - gyy) * (gxx - gyy) + gxy * gxy);
    if (min_eig < params.min_eig_ratio * area) return out;
    const double det = gxx * gyy - gxy * gxy;

    Vec2 nu = Vec2::Zero();
    for (int it = 0; it < params.max_iters; ++it) {
      const Vec2 q = p + guess + nu;
      // floor-halved levels end before the full-resolution border, so coarse
      // levels tolerate a window of slack; level 0 is checked strictly below
      if (!inside(cur_img, q, level > 0 ? r : 0.0)) return out;
      sample_patch(cur_img, q.x(), q.y(), r, warped);
      double bx = 0, by = 0;
      for (std::size_t k = 0; k < tmpl.size(); ++k) {
        const double diff = tmpl[k] - warped[k];
        bx += diff * gxs[k];
        by += diff * gys[k];
      }
      const Vec2 delta((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
      if (!delta.allFinite()) return out;
      nu += delta;
      if (delta.norm() < params.epsilon) break;
    }

    // below the coarsest level the propagated guess is already close; a step
    // of more than a window means the patch slid onto something else
    if (level < top && nu.norm() > params.max_level_step * r) return out;

    if (level > 0) {
      guess = 2.0 * (guess + nu);
    } else {
      out.position = p + guess + nu;
      if (!inside(cur_img, out.position) || !out.position.allFinite()) {
        out.position = point;
        return out;
      }
      sample_patch(cur_img, out.position.x(), out.position.y(), r, warped);
      double acc = 0.0, mean = 0.0, spread = 0.0;
      for (std::size_t k = 0; k < tmpl.size(); ++k) {
        acc += std::abs(tmpl[k] - warped[k]);
        mean += tmpl[k];
      }
      mean /= area;
      for (float v : tmpl) spread += std::abs(v - mean);
      mean_residual = acc / area;
      template_spread = spread / area;
    }
  }
  if (!(mean_residual <= params.max_residual)) return out;
  if (!(mean_residual <= params.max_residual_ratio * template_spread)) return out;
  out.status = TrackStatus::kTracked;
  out.fb_error = 0.0;
  return out;
}

}  // namespace

std::vector<TrackedPoint> track_pyr_lk(const Pyramid& prev, const Pyramid& cur,
                                       std::span<const Vec2> points,
                                       std::span<const Vec2> seeds,
                                       const LkParams& params) {
  if (prev.num_levels() != cur.num_levels() || prev.width() != cur.width() ||
      prev.height() != cur.height()) {
    fail(ErrorCode::kPrecondition, "pyramids differ in geometry");
  }
  if (seeds.size() != points.size()) {
    fail(ErrorCode::kPrecondition, "seeds and points differ in length");
  }
  std::vector<TrackedPoint> result(points.size());
  std::vector<float> tmpl, gxs, gys, warped;
  for (std::size_t i = 0; i < points.size(); ++i) {
    result[i] = track_one(prev, cur, points[i], seeds[i], params, tmpl, gxs, gys, warped);
  }
  return result;
}

std::vector<TrackedPoint> forward_backward_filter(
    const Pyramid& prev, const Pyramid& cur, std::span<const Vec2> points,
    std::span<const TrackedPoint> forward, double threshold, const LkParams& params) {
  if (points.size() != forward.size()) {
    fail(ErrorCode::kPrecondition, "forward results and points differ in length");
  }
  std::vector<std::size_t> alive;
  std::vector<Vec2> fwd_pos;
  for (std::size_t i = 0; i < forward.size(); ++i) {
    if (forward[i].tracked()) {
      alive.push_back(i);
      fwd_pos.push_back(forward[i].position);
    }
  }
  const std::vector<TrackedPoint> back = track_pyr_lk(cur, prev, fwd_pos, fwd_pos, params);

  std::vector<TrackedPoint> out(forward.begin(), forward.end());
  for (std::size_t k = 0; k < alive.size(); ++k) {
    TrackedPoint& tp = out[alive[k]];
    tp.fb_error = back[k].tracked()
                      ? (back[k].position - points[alive[k]]).norm()
                      : std::numeric_limits<double>::infinity();
    if (tp.fb_error > threshold) tp.status = TrackStatus::kLost;
  }
  return out;
}

}  // namespace uwvo
