#include "uwvo/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "uwvo/error.hpp"

namespace uwvo {

namespace {

inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace

GrayImage pyr_down(const GrayImage& img) {
  static constexpr int kKernel[5] = {1, 4, 6, 4, 1};
  const int w = img.width;
  const int h = img.height;
  const int ow = w / 2;
  const int oh = h / 2;

  // horizontal pass at the decimated columns, full rows
  std::vector<int> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int ox = 0; ox < ow; ++ox) {
      const int x = 2 * ox;
      int acc = 0;
      for (int k = -2; k <= 2; ++k) acc += kKernel[k + 2] * img(reflect101(x + k, w), y);
      tmp[static_cast<std::size_t>(y) * ow + ox] = acc;
    }
  }
  GrayImage out(ow, oh);
  for (int oy = 0; oy < oh; ++oy) {
    const int y = 2 * oy;
    for (int ox = 0; ox < ow; ++ox) {
      int acc = 0;
      for (int k = -2; k <= 2; ++k) {
        acc += kKernel[k + 2] * tmp[static_cast<std::size_t>(reflect101(y + k, h)) * ow + ox];
      }
      out(ox, oy) = static_cast<std::uint8_t>((acc + 128) >> 8);
    }
  }
  return out;
}

void scharr_gradients(const GrayImage& img, FloatImage& gx, FloatImage& gy) {
  const int w = img.width;
  const int h = img.height;
  gx = FloatImage(w, h);
  gy = FloatImage(w, h);
  for (int y = 0; y < h; ++y) {
    const int ym = std::max(y - 1, 0);
    const int yp = std::min(y + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const int xm = std::max(x - 1, 0);
      const int xp = std::min(x + 1, w - 1);
      const float dx = 3.0f * (img(xp, ym) - img(xm, ym)) +
                       10.0f * (img(xp, y) - img(xm, y)) +
                       3.0f * (img(xp, yp) - img(xm, yp));
      const float dy = 3.0f * (img(xm, yp) - img(xm, ym)) +
                       10.0f * (img(x, yp) - img(x, ym)) +
                       3.0f * (img(xp, yp) - img(xp, ym));
      gx(x, y) = dx / 32.0f;
      gy(x, y) = dy / 32.0f;
    }
  }
}

Pyramid build_pyramid(const GrayImage& img, int levels) {
  if (levels < 1) fail(ErrorCode::kPrecondition, "pyramid needs at least one level");
  if (img.empty() || img.data.size() != static_cast<std::size_t>(img.width) * img.height) {
    fail(ErrorCode::kPrecondition, "image buffer does not match its dimensions");
  }
  int w = img.width;
  int h = img.height;
  for (int l = 1; l < levels; ++l) {
    w /= 2;
    h /= 2;
  }
  if (w < kMinPyramidLevelSize || h < kMinPyramidLevelSize) {
    std::ostringstream msg;
    msg << img.width << "x" << img.height << " image too small for " << levels
        << " pyramid levels";
    fail(ErrorCode::kImageTooSmall, msg.str());
  }

  Pyramid pyr;
  pyr.levels.reserve(levels);
  pyr.levels.push_back(img);
  for (int l = 1; l < levels; ++l) pyr.levels.push_back(pyr_down(pyr.levels.back()));
  pyr.grad_x.resize(levels);
  pyr.grad_y.resize(levels);
  for (int l = 0; l < levels; ++l) {
    scharr_gradients(pyr.levels[l], pyr.grad_x[l], pyr.grad_y[l]);
  }
  return pyr;
}

namespace {

template <typename Image>
float bilinear(const Image& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = std::min(static_cast<int>(x), img.width - 2 < 0 ? 0 : img.width - 2);
  const int y0 = std::min(static_cast<int>(y), img.height - 2 < 0 ? 0 : img.height - 2);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double ax = x - x0;
  const double ay = y - y0;
  const double top = (1.0 - ax) * img(x0, y0) + ax * img(x1, y0);
  const double bottom = (1.0 - ax) * img(x0, y1) + ax * img(x1, y1);
  return static_cast<float>((1.0 - ay) * top + ay * bottom);
}

}  // namespace

float sample_bilinear(const GrayImage& img, double x, double y) {
  return bilinear(img, x, y);
}

float sample_bilinear(const FloatImage& img, double x, double y) {
  return bilinear(img, x, y);
}

GrayImage to_gray(const FloatImage& img) {
  GrayImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const float v = std::round(img.data[i]);
    out.data[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PGM

namespace {

void skip_pgm_whitespace(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

int read_pgm_int(std::istream& in, const std::filesystem::path& path) {
  skip_pgm_whitespace(in);
  int v = -1;
  in >> v;
  if (!in || v < 0) fail(ErrorCode::kIo, "malformed PGM header in " + path.string());
  return v;
}

}  // namespace

GrayImage load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') {
    fail(ErrorCode::kIo, path.string() + " is not a binary (P5) PGM");
  }
  const int w = read_pgm_int(in, path);
  const int h = read_pgm_int(in, path);
  const int maxval = read_pgm_int(in, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    fail(ErrorCode::kIo, "invalid PGM dimensions in " + path.string());
  }
  in.get();  // single whitespace before raster

  GrayImage img(w, h);
  if (maxval < 256) {
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
    if (!in) fail(ErrorCode::kIo, "truncated PGM raster in " + path.string());
    if (maxval != 255) {
      for (auto& v : img.data) v = static_cast<std::uint8_t>(std::lround(v * 255.0 / maxval));
    }
  } else {
    std::vector<unsigned char> raw(img.data.size() * 2);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) fail(ErrorCode::kIo, "truncated PGM raster in " + path.string());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      const int v = (raw[2 * i] << 8) | raw[2 * i + 1];
      img.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0 / maxval));
    }
  }
  return img;
}

void save_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

GrayImage load_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(ErrorCode::kIo, "cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    fail(ErrorCode::kIo, path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kIo, "libpng initialisation failed");
  }
  GrayImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kIo, "corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);

  img = GrayImage(static_cast<int>(png_get_image_width(png, info)),
                  static_cast<int>(png_get_image_height(png, info)));
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(img.width)) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kIo, "unsupported PNG pixel layout in " + path.string());
  }
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = img.data.data() + static_cast<std::size_t>(y) * img.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void save_png(const GrayImage& img, const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(ErrorCode::kIo, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "libpng initialisation failed");
  }
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    rows[y] = const_cast<png_bytep>(img.data.data() + static_cast<std::size_t>(y) * img.width);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage load_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".pgm") return load_pgm(path);
  if (ext == ".png") return load_png(path);
  fail(ErrorCode::kIo, "unsupported image format: " + path.string());
}

}  // namespace uwvo
