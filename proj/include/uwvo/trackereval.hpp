#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "uwvo/geometry.hpp"
#include "uwvo/image.hpp"

namespace uwvo {

/// Tracking-survival harness for the KLT tracker.
struct SurvivalOptions {
  int grid_cells = 500;
  double fb_threshold_px = 2.0;
  int pyramid_levels = 4;
  int lk_window = 10;
  double detect_quality = 0.01;
  /// Epipolar threshold in pixels, turned into an angle with the camera's
  /// focal length.
  double epipolar_threshold_px = 1.0;
  double ransac_confidence = 0.99;
  int ransac_max_iters = 1000;
  std::uint64_t seed = 0;
};

struct SurvivalRow {
  int image_index = 0;
  int detected = 0;
  int tracked = 0;
};

/// Detects at most one corner per grid cell in image 0 and tracks that set
/// image to image with forward-backward filtering. With a camera, each step
/// also drops tracks that are outliers to a five-point RANSAC between the
/// two images. Row i counts the initial features still alive in image i.
///
/// Throws kPrecondition for fewer than 2 images and kDimensionMismatch when
/// sizes differ.
std::vector<SurvivalRow> run_survival(std::span<const GrayImage> images,
                                      const std::optional<CameraModel>& cam,
                                      const SurvivalOptions& options = {});

/// One pair of the pairwise protocol: `second` shows `first` moved by
/// `shift` pixels.
struct ImagePair {
  GrayImage first;
  GrayImage second;
  Vec2 shift = Vec2(10.0, 0.0);
};

/// Detection in the first image of each pair, tracking into the second. A
/// feature counts as tracked when it passes the forward-backward check and
/// lands within fb_threshold_px of its position moved by the pair's shift.
std::vector<SurvivalRow> run_pairwise(std::span<const ImagePair> pairs,
                                      const SurvivalOptions& options = {});

/// Shifts an image by integer pixels, filling uncovered pixels with the
/// nearest edge value.
GrayImage translate_image(const GrayImage& img, int dx, int dy);

/// `image_index,detected,tracked` with a header line.
void write_survival_csv(std::span<const SurvivalRow> rows, std::ostream& out);

}  // namespace uwvo
