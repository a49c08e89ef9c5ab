#pragma once

#include <png.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "prd/errors.hpp"
#include "prd/problem.hpp"

namespace prd::io {

/// Writes an 8-bit greyscale PNG.
inline void write_png(const std::filesystem::path& path, const Cell& cell) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(cell.size());
  image.height = static_cast<png_uint_32>(cell.size());
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, cell.pixels().data(), 0, nullptr)) {
    throw FormatError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

/// Reads a PNG as 8-bit greyscale; the image must be square.
inline Cell read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw FormatError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  if (image.width != image.height) {
    png_image_free(&image);
    throw FormatError("PNG " + path.string() + " is not square");
  }
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    throw FormatError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return Cell(static_cast<int>(image.width), std::move(pixels));
}

}  // namespace prd::io
