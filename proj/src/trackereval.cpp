#include "uwvo/trackereval.hpp"

#include <algorithm>
#include <ostream>

#include "uwvo/error.hpp"
#include "uwvo/essential.hpp"
#include "uwvo/pose_refine.hpp"
#include "uwvo/ransac.hpp"
#include "uwvo/tracking.hpp"

namespace uwvo {

namespace {

void check_same_size(const GrayImage& a, const GrayImage& b) {
  if (a.width != b.width || a.height != b.height) {
    fail(ErrorCode::kDimensionMismatch, "image sizes differ: " + std::to_string(a.width) + "x" +
                                            std::to_string(a.height) + " vs " +
                                            std::to_string(b.width) + "x" +
                                            std::to_string(b.height));
  }
}

LkParams lk_params(const SurvivalOptions& o) {
  LkParams p;
  p.window = o.lk_window;
  return p;
}

std::vector<Vec2> detect(const GrayImage& img, const SurvivalOptions& o) {
  return detect_shi_tomasi(img, o.grid_cells, {}, o.grid_cells, o.detect_quality);
}

}  // namespace

std::vector<SurvivalRow> run_survival(std::span<const GrayImage> images,
                                      const std::optional<CameraModel>& cam,
                                      const SurvivalOptions& options) {
  if (images.size() < 2) fail(ErrorCode::kPrecondition, "survival run needs at least 2 images");
  for (const GrayImage& img : images) check_same_size(images[0], img);
  if (cam && (cam->width != images[0].width || cam->height != images[0].height)) {
    fail(ErrorCode::kDimensionMismatch, "camera size does not match the images");
  }
  const LkParams lk = lk_params(options);

  std::vector<Vec2> alive = detect(images[0], options);
  const int detected = static_cast<int>(alive.size());
  std::vector<SurvivalRow> rows{{0, detected, detected}};
  Pyramid prev = build_pyramid(images[0], options.pyramid_levels);

  for (std::size_t i = 1; i < images.size(); ++i) {
    Pyramid cur = build_pyramid(images[i], options.pyramid_levels);
    std::vector<Vec2> next_prev, next_cur;
    if (!alive.empty()) {
      const auto fwd = track_pyr_lk(prev, cur, alive, alive, lk);
      const auto res = forward_backward_filter(prev, cur, alive, fwd, options.fb_threshold_px, lk);
      for (std::size_t k = 0; k < alive.size(); ++k) {
        if (!res[k].tracked()) continue;
        next_prev.push_back(alive[k]);
        next_cur.push_back(res[k].position);
      }
    }
    if (cam && next_cur.size() >= 6) {
      std::vector<BearingPair> matches;
      for (std::size_t k = 0; k < next_cur.size(); ++k) {
        matches.push_back({cam->bearing(next_prev[k]), cam->bearing(next_cur[k])});
      }
      RansacOptions ro;
      ro.threshold = options.epipolar_threshold_px / std::max(cam->fx, cam->fy);
      ro.confidence = options.ransac_confidence;
      ro.max_iters = options.ransac_max_iters;
      ro.seed = options.seed + i;
      try {
        const auto model = ransac(matches.size(), make_essential_kernel(matches), ro);
        std::vector<Vec2> kept;
        for (std::size_t k : model.inliers) kept.push_back(next_cur[k]);
        next_cur = std::move(kept);
      } catch (const Error&) {
        // no motion model (e.g. a static pair): keep the flow-filtered set
      }
    }
    alive = std::move(next_cur);
    rows.push_back({static_cast<int>(i), detected, static_cast<int>(alive.size())});
    prev = std::move(cur);
  }
  return rows;
}

std::vector<SurvivalRow> run_pairwise(std::span<const ImagePair> pairs,
                                      const SurvivalOptions& options) {
  const LkParams lk = lk_params(options);
  std::vector<SurvivalRow> rows;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const ImagePair& p = pairs[i];
    check_same_size(p.first, p.second);
    if (i > 0) check_same_size(pairs[0].first, p.first);
    const std::vector<Vec2> pts = detect(p.first, options);
    int tracked = 0;
    if (!pts.empty()) {
      const Pyramid a = build_pyramid(p.first, options.pyramid_levels);
      const Pyramid b = build_pyramid(p.second, options.pyramid_levels);
      const auto fwd = track_pyr_lk(a, b, pts, pts, lk);
      const auto res = forward_backward_filter(a, b, pts, fwd, options.fb_threshold_px, lk);
      for (std::size_t k = 0; k < pts.size(); ++k) {
        if (res[k].tracked() && (res[k].position - (pts[k] + p.shift)).norm() <=
                                    options.fb_threshold_px) {
          ++tracked;
        }
      }
    }
    rows.push_back({static_cast<int>(i), static_cast<int>(pts.size()), tracked});
  }
  return rows;
}

GrayImage translate_image(const GrayImage& img, int dx, int dy) {
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    const int sy = std::clamp(y - dy, 0, img.height - 1);
    for (int x = 0; x < img.width; ++x) {
      out(x, y) = img(std::clamp(x - dx, 0, img.width - 1), sy);
    }
  }
  return out;
}

void write_survival_csv(std::span<const SurvivalRow> rows, std::ostream& out) {
  out << "image_index,detected,tracked\n";
  for (const SurvivalRow& r : rows) {
    out << r.image_index << ',' << r.detected << ',' << r.tracked << '\n';
  }
}

}  // namespace uwvo
