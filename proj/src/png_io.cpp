#include "csdpaint/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "csdpaint/errors.hpp"

namespace csdpaint {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  *what = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img, int bit_depth) {
  if (img.channels() != 1 && img.channels() != 3) throw ShapeError("write_png: need 1 or 3 channels");
  if (bit_depth != 8 && bit_depth != 16) throw ConfigError("export.png_bits", "must be 8 or 16");
  const int H = img.height();
  const int W = img.width();
  const int C = img.channels();
  const int bytes_per = bit_depth / 8;
  const double scale = bit_depth == 8 ? 255.0 : 65535.0;
  std::vector<png_byte> rows(static_cast<std::size_t>(H) * W * C * bytes_per);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < C; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::lround(v * scale));
        const std::size_t o = ((static_cast<std::size_t>(y) * W + x) * C + c) * bytes_per;
        if (bytes_per == 1) {
          rows[o] = static_cast<png_byte>(q);
        } else {
          rows[o] = static_cast<png_byte>(q >> 8);
          rows[o + 1] = static_cast<png_byte>(q & 0xff);
        }
      }
    }
  }

  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw InputError("cannot write " + path.string());
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw InputError("cannot write " + path.string() + ": " + error);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, W, H, bit_depth, C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(W) * C * bytes_per;
  for (int y = 0; y < H; ++y) png_write_row(png, rows.data() + y * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw InputError("cannot read image " + path.string());
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  std::vector<png_byte> pixels;
  png_uint_32 W = 0;
  png_uint_32 H = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InputError("cannot read image " + path.string() + ": " + error);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  W = png_get_image_width(png, info);
  H = png_get_image_height(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * H);
  std::vector<png_bytep> rows(H);
  for (png_uint_32 y = 0; y < H; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(3, {static_cast<int>(H), static_cast<int>(W)});
  for (png_uint_32 y = 0; y < H; ++y) {
    for (png_uint_32 x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = pixels[y * stride + x * 3 + c] / 255.0;
    }
  }
  return img;
}

}  // namespace csdpaint
