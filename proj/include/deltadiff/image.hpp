#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deltadiff/errors.hpp"

namespace deltadiff {

/// H x W x C block of real intensities, row-major with interleaved channels.
///
/// Values are nominally in [0, 1]. Arithmetic on planes is allowed to leave
/// that range; only save_image clamps.
class ImagePlane {
 public:
  ImagePlane() = default;

  ImagePlane(int height, int width, int channels, double fill = 0.0)
      : height_(height), width_(width), channels_(channels) {
    check_shape(height, width, channels);
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  ImagePlane(int height, int width, int channels, std::vector<double> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    check_shape(height, width, channels);
    if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
      throw ArgumentError("ImagePlane: data length " + std::to_string(data_.size()) +
                          " does not match " + std::to_string(height) + "x" +
                          std::to_string(width) + "x" + std::to_string(channels));
    }
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  double& at(int y, int x, int c) noexcept { return data_[index(y, x, c)]; }
  double at(int y, int x, int c) const noexcept { return data_[index(y, x, c)]; }

  bool same_shape(const ImagePlane& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  std::string shape_string() const {
    return std::to_string(height_) + "x" + std::to_string(width_) + "x" + std::to_string(channels_);
  }

  friend bool operator==(const ImagePlane&, const ImagePlane&) = default;

 private:
  static void check_shape(int h, int w, int c) {
    if (h < 1 || w < 1) throw ArgumentError("ImagePlane: height and width must be >= 1");
    if (c != 1 && c != 3) throw ArgumentError("ImagePlane: channels must be 1 or 3");
  }
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const ImagePlane& a, const ImagePlane& b, const char* where) {
  if (!a.same_shape(b)) {
    throw ArgumentError(std::string(where) + ": shape mismatch " + a.shape_string() + " vs " +
                        b.shape_string());
  }
}

/// Elementwise a + weight * (b - a).
inline ImagePlane lerp(const ImagePlane& a, const ImagePlane& b, double weight) {
  require_same_shape(a, b, "lerp");
  ImagePlane out(a.height(), a.width(), a.channels());
  auto pa = a.data();
  auto pb = b.data();
  auto po = out.data();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] = pa[i] + weight * (pb[i] - pa[i]);
  return out;
}

inline ImagePlane clamp01(const ImagePlane& img) {
  ImagePlane out = img;
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

inline double max_abs_diff(const ImagePlane& a, const ImagePlane& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline double mean_squared_error(const ImagePlane& a, const ImagePlane& b) {
  require_same_shape(a, b, "mean_squared_error");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

inline ImagePlane crop(const ImagePlane& img, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > img.height() ||
      left + width > img.width()) {
    throw ArgumentError("crop: window " + std::to_string(height) + "x" + std::to_string(width) +
                        " at (" + std::to_string(top) + "," + std::to_string(left) +
                        ") exceeds " + img.shape_string());
  }
  ImagePlane out(height, width, img.channels());
  const int c = img.channels();
  for (int y = 0; y < height; ++y) {
    const double* src = &img.data()[(static_cast<std::size_t>(top + y) * img.width() + left) * c];
    std::copy(src, src + static_cast<std::size_t>(width) * c,
              &out.data()[static_cast<std::size_t>(y) * width * c]);
  }
  return out;
}

/// Places tiles left to right. All tiles must share height and channel count.
inline ImagePlane hconcat(std::span<const ImagePlane> tiles) {
  if (tiles.empty()) throw ArgumentError("hconcat: no tiles");
  const int h = tiles.front().height();
  const int c = tiles.front().channels();
  int total_w = 0;
  for (const auto& t : tiles) {
    if (t.height() != h || t.channels() != c) throw ArgumentError("hconcat: tile shape mismatch");
    total_w += t.width();
  }
  ImagePlane out(h, total_w, c);
  int x0 = 0;
  for (const auto& t : tiles) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < t.width(); ++x)
        for (int ch = 0; ch < c; ++ch) out.at(y, x0 + x, ch) = t.at(y, x, ch);
    x0 += t.width();
  }
  return out;
}

enum class ResampleFilter { nearest, bilinear, bicubic };

namespace detail {

/// Cubic convolution kernel, a = -0.5 (Catmull-Rom).
inline double cubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

inline double triangle_kernel(double x) {
  x = std::abs(x);
  return x < 1.0 ? 1.0 - x : 0.0;
}

struct Tap {
  int index;
  double weight;
};

/// Per-output-sample taps along one axis. Downscaling widens the kernel by the
/// inverse scale (antialiasing); out-of-range source indices clamp to the edge.
inline std::vector<std::vector<Tap>> axis_taps(int in_size, int out_size, ResampleFilter filter) {
  std::vector<std::vector<Tap>> taps(out_size);
  const double scale = static_cast<double>(out_size) / in_size;
  if (filter == ResampleFilter::nearest) {
    for (int o = 0; o < out_size; ++o) {
      const int i = std::min(in_size - 1, static_cast<int>(std::floor((o + 0.5) / scale)));
      taps[o].push_back({i, 1.0});
    }
    return taps;
  }
  const double support = filter == ResampleFilter::bicubic ? 2.0 : 1.0;
  const double kscale = std::min(1.0, scale);
  const double radius = support / kscale;
  for (int o = 0; o < out_size; ++o) {
    const double center = (o + 0.5) / scale - 0.5;
    const int first = static_cast<int>(std::floor(center - radius));
    const int last = static_cast<int>(std::ceil(center + radius));
    double total = 0.0;
    auto& row = taps[o];
    for (int i = first; i <= last; ++i) {
      const double arg = (center - i) * kscale;
      const double w = filter == ResampleFilter::bicubic ? cubic_kernel(arg) : triangle_kernel(arg);
      if (w == 0.0) continue;
      const int clamped = std::clamp(i, 0, in_size - 1);
      auto hit = std::find_if(row.begin(), row.end(), [&](const Tap& t) { return t.index == clamped; });
      if (hit != row.end()) {
        hit->weight += w;
      } else {
        row.push_back({clamped, w});
      }
      total += w;
    }
    for (auto& t : row) t.weight /= total;
  }
  return taps;
}

}  // namespace detail

/// Separable resampling (horizontal pass, then vertical).
inline ImagePlane resample(const ImagePlane& img, int new_h, int new_w, ResampleFilter filter) {
  if (new_h < 1 || new_w < 1) {
    throw ArgumentError("resample: target shape " + std::to_string(new_h) + "x" +
                        std::to_string(new_w) + " must be positive");
  }
  const int c = img.channels();
  const auto htaps = detail::axis_taps(img.width(), new_w, filter);
  const auto vtaps = detail::axis_taps(img.height(), new_h, filter);

  ImagePlane tmp(img.height(), new_w, c);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < new_w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (const auto& t : htaps[x]) acc += t.weight * img.at(y, t.index, ch);
        tmp.at(y, x, ch) = acc;
      }

  ImagePlane out(new_h, new_w, c);
  for (int y = 0; y < new_h; ++y)
    for (int x = 0; x < new_w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (const auto& t : vtaps[y]) acc += t.weight * tmp.at(t.index, x, ch);
        out.at(y, x, ch) = acc;
      }
  return out;
}

/// BT.601 studio-swing luma: Y = (16 + 65.481 R + 128.553 G + 24.966 B) / 255
/// for R, G, B in [0, 1]. Single-channel input is returned unchanged.
inline ImagePlane to_luma(const ImagePlane& img) {
  if (img.channels() == 1) return img;
  ImagePlane out(img.height(), img.width(), 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const double r = img.at(y, x, 0);
      const double g = img.at(y, x, 1);
      const double b = img.at(y, x, 2);
      out.at(y, x, 0) = (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
    }
  return out;
}

}  // namespace deltadiff
