#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "deltadiff/errors.hpp"
#include "deltadiff/image.hpp"
#include "deltadiff/image_io.hpp"

namespace deltadiff {

/// HR image with its bicubic LR and the LR resampled back to HR shape.
struct LrHrPair {
  ImagePlane hr;
  ImagePlane lr;
  ImagePlane lr_up;
};

struct DatasetSpec {
  std::filesystem::path root;
  int patch_size = 64;
  int scale = 4;
  std::uint64_t seed = 0;
};

inline void validate(const DatasetSpec& spec, int denoiser_depth) {
  if (spec.scale < 1) throw ArgumentError("dataset: scale must be >= 1");
  if (spec.patch_size < 1) throw ArgumentError("dataset: patch_size must be >= 1");
  if (spec.patch_size % spec.scale != 0) {
    throw ArgumentError("dataset: patch_size " + std::to_string(spec.patch_size) +
                        " is not divisible by scale " + std::to_string(spec.scale));
  }
  const int mult = 1 << denoiser_depth;
  if (spec.patch_size % mult != 0) {
    throw ArgumentError("dataset: patch_size " + std::to_string(spec.patch_size) +
                        " is not divisible by 2^depth = " + std::to_string(mult));
  }
}

inline LrHrPair make_pair(const ImagePlane& hr, int scale) {
  if (scale < 1) throw ArgumentError("make_pair: scale must be >= 1");
  if (hr.height() % scale != 0 || hr.width() % scale != 0) {
    throw ArgumentError("make_pair: " + hr.shape_string() + " is not divisible by scale " +
                        std::to_string(scale));
  }
  LrHrPair p;
  p.hr = hr;
  p.lr = resample(hr, hr.height() / scale, hr.width() / scale, ResampleFilter::bicubic);
  p.lr_up = resample(p.lr, hr.height(), hr.width(), ResampleFilter::bicubic);
  return p;
}

/// Bicubic upscale of an LR image to the process shape.
inline ImagePlane upscale_lr(const ImagePlane& lr, int scale) {
  return resample(lr, lr.height() * scale, lr.width() * scale, ResampleFilter::bicubic);
}

/// Crops a patch_size square at an offset that is a multiple of scale.
template <typename Rng>
LrHrPair random_patch(const ImagePlane& source, const DatasetSpec& spec, Rng& rng) {
  const int p = spec.patch_size;
  if (source.height() < p || source.width() < p) {
    throw ArgumentError("random_patch: source " + source.shape_string() + " smaller than patch " +
                        std::to_string(p));
  }
  std::uniform_int_distribution<int> oy(0, (source.height() - p) / spec.scale);
  std::uniform_int_distribution<int> ox(0, (source.width() - p) / spec.scale);
  const int top = oy(rng) * spec.scale;
  const int left = ox(rng) * spec.scale;
  return make_pair(crop(source, top, left, p, p), spec.scale);
}

/// Independent generator for worker `worker` of a run seeded with `seed`.
inline std::mt19937_64 worker_rng(std::uint64_t seed, std::uint32_t worker) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), worker};
  return std::mt19937_64(seq);
}

/// Synthetic RGB scenes: smooth band-limited texture under an oriented
/// gradient, overlaid with hard-edged rectangles, disks, half-planes and
/// stripe patches. The hard edges are what bicubic upscaling cannot restore.
inline std::vector<ImagePlane> toy_dataset(int n, int size, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("toy_dataset: n must be >= 1");
  if (size < 4) throw ArgumentError("toy_dataset: size must be >= 4");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::vector<ImagePlane> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    ImagePlane img(size, size, 3);

    // band-limited background
    double base[3];
    double grad[3];
    for (int c = 0; c < 3; ++c) {
      base[c] = 0.25 + 0.5 * unit(rng);
      grad[c] = 0.4 * (unit(rng) - 0.5);
    }
    const double theta = two_pi * unit(rng);
    struct Wave {
      double fx, fy, phase, amp[3];
    };
    std::vector<Wave> waves(5);
    for (auto& w : waves) {
      const double freq = (1.0 + 5.0 * unit(rng)) / size;
      const double dir = two_pi * unit(rng);
      w.fx = freq * std::cos(dir);
      w.fy = freq * std::sin(dir);
      w.phase = two_pi * unit(rng);
      for (double& a : w.amp) a = 0.06 * (unit(rng) - 0.5);
    }
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double u = ((x - size / 2.0) * std::cos(theta) + (y - size / 2.0) * std::sin(theta)) / size;
        for (int c = 0; c < 3; ++c) {
          double v = base[c] + grad[c] * u;
          for (const auto& w : waves) v += w.amp[c] * std::sin(two_pi * (w.fx * x + w.fy * y) + w.phase);
          img.at(y, x, c) = v;
        }
      }

    // hard-edged shapes
    const int shapes = 3 + static_cast<int>(unit(rng) * 4);
    for (int s = 0; s < shapes; ++s) {
      double color[3];
      for (double& c : color) c = unit(rng);
      const int kind = static_cast<int>(unit(rng) * 4);
      const double cx = unit(rng) * size;
      const double cy = unit(rng) * size;
      const double r = (0.1 + 0.25 * unit(rng)) * size;
      const double ang = two_pi * unit(rng);
      const double ca = std::cos(ang);
      const double sa = std::sin(ang);
      const double aspect = 0.3 + 0.7 * unit(rng);
      const double period = 8.0 + 8.0 * unit(rng);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double dx = x + 0.5 - cx;
          const double dy = y + 0.5 - cy;
          const double u = dx * ca + dy * sa;
          const double v = -dx * sa + dy * ca;
          bool inside = false;
          switch (kind) {
            case 0:  // rotated rectangle
              inside = std::abs(u) < r && std::abs(v) < r * aspect;
              break;
            case 1:  // disk
              inside = dx * dx + dy * dy < r * r;
              break;
            case 2:  // half-plane through (cx, cy)
              inside = u > 0.0;
              break;
            default:  // stripes inside a disk
              inside = dx * dx + dy * dy < r * r && std::fmod(std::abs(u), period) < period / 2.0;
              break;
          }
          if (!inside) continue;
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
        }
    }
    out.push_back(clamp01(img));
  }
  return out;
}

/// Every *.png directly under dir, sorted by file name.
inline std::vector<std::filesystem::path> list_png_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("data directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

inline std::vector<ImagePlane> load_png_dir(const std::filesystem::path& dir) {
  std::vector<ImagePlane> images;
  for (const auto& f : list_png_files(dir)) images.push_back(load_image(f));
  return images;
}

/// Brings an image to size x size: center crop when both sides are large
/// enough, bicubic resize otherwise.
inline ImagePlane normalize_size(const ImagePlane& img, int size) {
  if (img.height() >= size && img.width() >= size) {
    return crop(img, (img.height() - size) / 2, (img.width() - size) / 2, size, size);
  }
  return resample(img, size, size, ResampleFilter::bicubic);
}

}  // namespace deltadiff
