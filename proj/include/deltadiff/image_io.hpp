#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "deltadiff/errors.hpp"
#include "deltadiff/image.hpp"

namespace deltadiff {

/// 8-bit value as stored by save_image.
inline std::uint8_t quantize8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Reads an 8-bit PNG (gray or RGB, alpha dropped) into [0, 1] intensities.
inline ImagePlane load_image(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (fp == nullptr) throw IoError("load_image: cannot open " + path.string());
  std::uint8_t sig[8] = {};
  const bool is_png = std::fread(sig, 1, 8, fp) == 8 && png_sig_cmp(sig, 0, 8) == 0;
  std::fclose(fp);
  if (!is_png) throw FormatError("load_image: " + path.string() + " is not a PNG file");

  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
    throw FormatError("load_image: " + path.string() + ": " + image.message);
  }
  if ((image.format & PNG_FORMAT_FLAG_LINEAR) != 0) {
    png_image_free(&image);
    throw FormatError("load_image: " + path.string() + ": 16-bit PNG is not supported");
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const int channels = color ? 3 : 1;
  const int stride_channels = channels + 1;  // read with alpha, then drop it
  image.format = color ? PNG_FORMAT_RGBA : PNG_FORMAT_GA;

  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("load_image: " + path.string() + ": " + msg);
  }
  const int h = static_cast<int>(image.height);
  const int w = static_cast<int>(image.width);
  ImagePlane out(h, w, channels);
  auto dst = out.data();
  for (std::size_t px = 0; px < static_cast<std::size_t>(h) * w; ++px)
    for (int c = 0; c < channels; ++c)
      dst[px * channels + c] = buffer[px * stride_channels + c] / 255.0;
  return out;
}

/// Clamps to [0, 1], quantizes with round(v * 255) and writes an 8-bit PNG.
inline void save_image(const ImagePlane& img, const std::filesystem::path& path) {
  if (img.empty()) throw ArgumentError("save_image: empty image");
  std::vector<std::uint8_t> buffer(img.size());
  auto src = img.data();
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = quantize8(src[i]);

  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr) == 0) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("save_image: " + path.string() + ": " + msg);
  }
}

}  // namespace deltadiff
