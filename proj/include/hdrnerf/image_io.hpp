#pragma once

// 8-bit RGB PNG (through libpng) for LDR images and little-endian PFM for
// HDR images. LDR values are normalized to [0, 1] in memory.

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "hdrnerf/error.hpp"
#include "hdrnerf/fsutil.hpp"
#include "hdrnerf/image.hpp"

namespace hdrnerf {

inline std::uint8_t quantize_unit(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::string encode_png(const Image& img) {
  std::vector<std::uint8_t> pixels(img.data.size());
  std::transform(img.data.begin(), img.data.end(), pixels.begin(), quantize_unit);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + image.message);
  }
  std::string bytes(size, '\0');
  if (!png_image_write_to_memory(&image, bytes.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + image.message);
  }
  bytes.resize(size);
  return bytes;
}

inline void write_png(const std::filesystem::path& path, const Image& img) { write_file_atomic(path, encode_png(img)); }

inline Image read_png(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw FormatError(path.string() + ": " + image.message);
  }
  if (image.format & (PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_ALPHA)) {
    png_image_free(&image);
    throw FormatError(path.string() + ": expected an 8-bit RGB PNG without alpha");
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    throw FormatError(path.string() + ": " + image.message);
  }
  Image img(static_cast<int>(image.width), static_cast<int>(image.height));
  for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = pixels[i] / 255.0;
  return img;
}

/// PFM with a negative scale (little-endian), rows stored bottom to top.
inline std::string encode_pfm(const Image& img) {
  std::string out = "PF\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n";
  const std::size_t header = out.size();
  out.resize(header + img.data.size() * 4);
  char* dst = out.data() + header;
  for (int row = img.height - 1; row >= 0; --row) {
    for (int col = 0; col < img.width; ++col) {
      for (int c = 0; c < 3; ++c) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(img.at(row, col, c)));
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        std::memcpy(dst, &bits, 4);
        dst += 4;
      }
    }
  }
  return out;
}

inline void write_pfm(const std::filesystem::path& path, const Image& img) { write_file_atomic(path, encode_pfm(img)); }

inline Image decode_pfm(const std::string& bytes, const std::string& name = "PFM") {
  std::istringstream in(bytes);
  std::string magic;
  int width = 0, height = 0;
  std::string scale_text;
  if (!(in >> magic >> width >> height >> scale_text)) throw FormatError(name + ": malformed header");
  if (magic != "PF") throw FormatError(name + ": expected 3-channel 'PF' magic, got '" + magic + "'");
  if (width <= 0 || height <= 0) throw FormatError(name + ": bad dimensions");
  double scale = 0.0;
  try {
    scale = std::stod(scale_text);
  } catch (...) {
    throw FormatError(name + ": malformed scale '" + scale_text + "'");
  }
  if (!(scale < 0.0)) throw FormatError(name + ": big-endian PFM (positive scale) is not supported");
  in.get();  // single whitespace byte ends the header
  const auto offset = static_cast<std::size_t>(in.tellg());
  const std::size_t count = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() < offset + count * 4) throw FormatError(name + ": truncated payload");
  Image img(width, height);
  const char* src = bytes.data() + offset;
  for (int row = height - 1; row >= 0; --row) {
    for (int col = 0; col < width; ++col) {
      for (int c = 0; c < 3; ++c) {
        std::uint32_t bits;
        std::memcpy(&bits, src, 4);
        src += 4;
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        img.at(row, col, c) = std::bit_cast<float>(bits);
      }
    }
  }
  return img;
}

inline Image read_pfm(const std::filesystem::path& path) { return decode_pfm(read_file(path), path.string()); }

}  // namespace hdrnerf
