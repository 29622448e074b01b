#include "dap/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dap/checkpoint.hpp"

namespace dap {

namespace {

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void on_png_error(png_structp png, png_const_charp msg) {
  (void)png;
  throw ContractError(std::string("png: ") + msg);
}

void on_png_warning(png_structp, png_const_charp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const Tensor& image) {
  if (image.rank() != 3 || image.shape()[2] != 3) {
    throw ShapeError("encode_png: expected HxWx3 image, got " + shape_string(image.shape()));
  }
  const auto h = image.shape()[0], w = image.shape()[1];
  std::vector<std::uint8_t> pixels(h * w * 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_png_error, on_png_warning);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t n) {
          auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
          buf->insert(buf->end(), data, data + n);
        },
        nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < h; ++y) png_write_row(png, pixels.data() + y * w * 3);
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Tensor decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ContractError("png: bad signature");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_png_error, on_png_warning);
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{bytes, 0};
  Tensor out;
  try {
    png_set_read_fn(png, &cursor, [](png_structp p, png_bytep data, png_size_t n) {
      auto* c = static_cast<ReadCursor*>(png_get_io_ptr(p));
      if (c->offset + n > c->bytes.size()) png_error(p, "truncated stream");
      std::memcpy(data, c->bytes.data() + c->offset, n);
      c->offset += n;
    });
    png_read_info(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
      png_error(png, "expected 8-bit RGB");
    }
    const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    std::vector<std::uint8_t> row(w * 3);
    out = Tensor({h, w, 3});
    for (std::size_t y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (std::size_t i = 0; i < row.size(); ++i) out[y * w * 3 + i] = row[i] / 255.0;
    }
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::filesystem::path& file, const Tensor& image) { write_bytes(file, encode_png(image)); }

Tensor read_png(const std::filesystem::path& file) { return decode_png(read_bytes(file)); }

}  // namespace dap
