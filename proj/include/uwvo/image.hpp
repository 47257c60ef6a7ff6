#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace uwvo {

/// Row-major 8-bit grayscale image.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  bool empty() const { return data.empty(); }
  std::uint8_t operator()(int x, int y) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& operator()(int x, int y) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  bool operator==(const GrayImage&) const = default;
};

/// Float companion used for derivatives and rendering.
struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  FloatImage() = default;
  FloatImage(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  float operator()(int x, int y) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  float& operator()(int x, int y) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
};

/// Gaussian-style image pyramid. Level 0 is full resolution; each level is
/// the previous one smoothed with a 5x5 binomial kernel and decimated by 2
/// (floor division). Scharr derivatives are cached per level.
struct Pyramid {
  std::vector<GrayImage> levels;
  std::vector<FloatImage> grad_x;
  std::vector<FloatImage> grad_y;

  int num_levels() const { return static_cast<int>(levels.size()); }
  int width() const { return levels.empty() ? 0 : levels[0].width; }
  int height() const { return levels.empty() ? 0 : levels[0].height; }
};

inline constexpr int kMinPyramidLevelSize = 16;

/// Throws kPrecondition for levels < 1 and kImageTooSmall when the coarsest
/// level would fall under 16x16.
Pyramid build_pyramid(const GrayImage& img, int levels);

GrayImage pyr_down(const GrayImage& img);

/// Scharr-weighted central differences, in intensity units per pixel.
void scharr_gradients(const GrayImage& img, FloatImage& gx, FloatImage& gy);

/// Bilinear read with border clamping.
float sample_bilinear(const GrayImage& img, double x, double y);
float sample_bilinear(const FloatImage& img, double x, double y);

/// Rounds and saturates to 8 bits.
GrayImage to_gray(const FloatImage& img);

GrayImage load_pgm(const std::filesystem::path& path);
void save_pgm(const GrayImage& img, const std::filesystem::path& path);
GrayImage load_png(const std::filesystem::path& path);
void save_png(const GrayImage& img, const std::filesystem::path& path);
/// Dispatches on extension (.pgm / .png).
GrayImage load_image(const std::filesystem::path& path);

}  // namespace uwvo
