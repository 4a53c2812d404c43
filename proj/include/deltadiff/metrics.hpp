#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "deltadiff/data.hpp"
#include "deltadiff/errors.hpp"
#include "deltadiff/image.hpp"
#include "deltadiff/image_io.hpp"

namespace deltadiff {

/// PSNR in dB for unit dynamic range, computed on luma for RGB input.
/// Identical images give +infinity.
inline double psnr(const ImagePlane& a, const ImagePlane& b) {
  require_same_shape(a, b, "psnr");
  const double mse = mean_squared_error(to_luma(a), to_luma(b));
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> g(size);
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    g[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

/// 'valid' separable filtering of an H x W single-channel buffer.
inline std::vector<double> filter_valid(const std::vector<double>& src, int H, int W, const std::vector<double>& g) {
  const int n = static_cast<int>(g.size());
  const int oh = H - n + 1;
  const int ow = W - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(H) * ow);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += g[k] * src[static_cast<std::size_t>(y) * W + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

inline std::vector<double> product(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

}  // namespace detail

/// Mean SSIM over all full Gaussian windows (no padding). RGB input is
/// reduced to luma first.
inline double ssim(const ImagePlane& a_in, const ImagePlane& b_in, const SsimParams& prm = {}) {
  require_same_shape(a_in, b_in, "ssim");
  if (a_in.height() < prm.window || a_in.width() < prm.window) {
    throw ArgumentError("ssim: image " + a_in.shape_string() + " is smaller than the " +
                        std::to_string(prm.window) + "x" + std::to_string(prm.window) + " window");
  }
  const ImagePlane a = to_luma(a_in);
  const ImagePlane b = to_luma(b_in);
  const auto g = detail::gaussian_taps(prm.window, prm.sigma);
  const int H = a.height();
  const int W = a.width();
  const std::vector<double> va(a.data().begin(), a.data().end());
  const std::vector<double> vb(b.data().begin(), b.data().end());
  const auto mu_a = detail::filter_valid(va, H, W, g);
  const auto mu_b = detail::filter_valid(vb, H, W, g);
  const auto e_aa = detail::filter_valid(detail::product(va, va), H, W, g);
  const auto e_bb = detail::filter_valid(detail::product(vb, vb), H, W, g);
  const auto e_ab = detail::filter_valid(detail::product(va, vb), H, W, g);
  const double c1 = (prm.k1 * prm.dynamic_range) * (prm.k1 * prm.dynamic_range);
  const double c2 = (prm.k2 * prm.dynamic_range) * (prm.k2 * prm.dynamic_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i];
    const double mb = mu_b[i];
    const double var_a = e_aa[i] - ma * ma;
    const double var_b = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

struct ImageScore {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  int n_images = 0;
  /// Images with infinite PSNR left out of the PSNR mean (0 when every image is identical).
  int n_psnr_excluded = 0;
  std::vector<ImageScore> per_image;
};

/// Means over per-image scores. Infinite PSNR values are left out of the mean
/// unless every image has one, in which case the mean is infinite.
inline MetricReport aggregate(std::vector<ImageScore> scores) {
  MetricReport r;
  r.n_images = static_cast<int>(scores.size());
  if (scores.empty()) return r;
  double psnr_sum = 0.0;
  int finite = 0;
  double ssim_sum = 0.0;
  for (const auto& s : scores) {
    if (std::isinf(s.psnr)) {
      ++r.n_psnr_excluded;
    } else {
      psnr_sum += s.psnr;
      ++finite;
    }
    ssim_sum += s.ssim;
  }
  if (finite == 0) {
    r.psnr = std::numeric_limits<double>::infinity();
    r.n_psnr_excluded = 0;
  } else {
    r.psnr = psnr_sum / finite;
  }
  r.ssim = ssim_sum / r.n_images;
  r.per_image = std::move(scores);
  return r;
}

/// Pairs PNG files by name across two directories and scores each pair on luma.
inline MetricReport evaluate_dir(const std::filesystem::path& pred_dir, const std::filesystem::path& ref_dir) {
  const auto pred = list_png_files(pred_dir);
  const auto ref = list_png_files(ref_dir);
  std::map<std::string, std::filesystem::path> pred_by_name;
  std::map<std::string, std::filesystem::path> ref_by_name;
  for (const auto& p : pred) pred_by_name[p.filename().string()] = p;
  for (const auto& p : ref) ref_by_name[p.filename().string()] = p;
  std::vector<std::string> orphans;
  for (const auto& [name, _] : pred_by_name)
    if (!ref_by_name.count(name)) orphans.push_back(pred_dir.filename().string() + "/" + name);
  for (const auto& [name, _] : ref_by_name)
    if (!pred_by_name.count(name)) orphans.push_back(ref_dir.filename().string() + "/" + name);
  if (!orphans.empty()) {
    std::string msg = "evaluate_dir: files without a counterpart:";
    for (const auto& o : orphans) msg += " " + o;
    throw ArgumentError(msg);
  }
  std::vector<ImageScore> scores;
  for (const auto& [name, path] : pred_by_name) {
    const ImagePlane a = to_luma(load_image(path));
    const ImagePlane b = to_luma(load_image(ref_by_name.at(name)));
    if (!a.same_shape(b)) {
      throw ArgumentError("evaluate_dir: " + name + ": shape " + a.shape_string() + " vs " + b.shape_string());
    }
    scores.push_back({name, psnr(a, b), ssim(a, b)});
  }
  return aggregate(std::move(scores));
}

inline std::string format_psnr(double v, int precision = 4) {
  if (std::isinf(v)) return "inf";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

inline void print_report(const MetricReport& r, std::ostream& os) {
  os << std::left << std::setw(32) << "name" << std::right << std::setw(12) << "PSNR(dB)" << std::setw(10)
     << "SSIM" << '\n';
  for (const auto& s : r.per_image) {
    os << std::left << std::setw(32) << s.name << std::right << std::setw(12) << format_psnr(s.psnr)
       << std::setw(10) << std::fixed << std::setprecision(4) << s.ssim << '\n';
  }
  os << std::left << std::setw(32) << "mean" << std::right << std::setw(12) << format_psnr(r.psnr) << std::setw(10)
     << std::fixed << std::setprecision(4) << r.ssim << '\n';
  if (r.n_psnr_excluded > 0) {
    os << "note: " << r.n_psnr_excluded << " image(s) with infinite PSNR excluded from the PSNR mean\n";
  }
}

/// `name,psnr_db,ssim` rows plus a trailing `mean` row.
inline void write_csv(const MetricReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_csv: cannot write " + path.string());
  out << "name,psnr_db,ssim\n";
  for (const auto& s : r.per_image)
    out << s.name << ',' << format_psnr(s.psnr, 6) << ',' << std::fixed << std::setprecision(6) << s.ssim << '\n';
  out << "mean," << format_psnr(r.psnr, 6) << ',' << std::fixed << std::setprecision(6) << r.ssim << '\n';
}

}  // namespace deltadiff
