#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "deltadiff/errors.hpp"
#include "deltadiff/image.hpp"
#include "deltadiff/image_io.hpp"
#include "deltadiff/schedule.hpp"

namespace deltadiff {

/// y_t together with its timestep; t = 0 is the final HR-side state.
struct DiffusionState {
  ImagePlane image;
  int t = 0;
};

enum class Direction { forward, reverse };

struct Trajectory {
  std::vector<DiffusionState> states;
  Direction direction = Direction::reverse;
};

/// Anything that maps (state image, timestep, lr_up) to an HR prediction.
template <typename P>
concept Predictor = requires(const P& p, const ImagePlane& y, int t, const ImagePlane& c) {
  { p(y, t, c) } -> std::convertible_to<ImagePlane>;
};

/// hr + eta * (lr_up - hr). eta = 0 is HR, eta = 1 is lr_up.
inline ImagePlane residual_blend(const ImagePlane& hr, const ImagePlane& lr_up, double eta) {
  require_same_shape(hr, lr_up, "forward_state");
  return lerp(hr, lr_up, eta);
}

/// y_t = hr + eta_t (lr_up - hr). No randomness.
inline DiffusionState forward_state(const ImagePlane& hr, const ImagePlane& lr_up,
                                    const EtaSchedule& s, int t) {
  return {residual_blend(hr, lr_up, s.eta(t)), t};
}

/// y_{t-1} = (eta_{t-1} / eta_t) y_t + (alpha_t / eta_t) y0_hat.
inline DiffusionState reverse_step(const DiffusionState& y_t, const ImagePlane& y0_hat,
                                   const EtaSchedule& s) {
  if (y_t.t < 2) {
    throw ContractError("reverse_step: t = " + std::to_string(y_t.t) +
                        " < 2; use final_step for the last transition");
  }
  if (y_t.t > s.steps()) {
    throw ArgumentError("reverse_step: t = " + std::to_string(y_t.t) + " exceeds T = " +
                        std::to_string(s.steps()));
  }
  require_same_shape(y_t.image, y0_hat, "reverse_step");
  const double eta = s.eta(y_t.t);
  const double keep = s.eta(y_t.t - 1) / eta;
  const double take = s.alpha(y_t.t) / eta;
  ImagePlane out(y0_hat.height(), y0_hat.width(), y0_hat.channels());
  auto py = y_t.image.data();
  auto ph = y0_hat.data();
  auto po = out.data();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] = keep * py[i] + take * ph[i];
  return {std::move(out), y_t.t - 1};
}

/// Terminal transition from y_1. With eta_0 := 0 the estimate is y0_hat itself.
inline ImagePlane final_step(const DiffusionState& y_1, const ImagePlane& y0_hat,
                             const EtaSchedule& s) {
  if (y_1.t != 1) {
    throw ContractError("final_step: expected t = 1, got t = " + std::to_string(y_1.t));
  }
  require_same_shape(y_1.image, y0_hat, "final_step");
  const double eta1 = s.eta(1);
  const double keep = s.eta_or_zero(0) / eta1;
  const double take = (eta1 - s.eta_or_zero(0)) / eta1;
  if (keep == 0.0 && take == 1.0) return y0_hat;
  ImagePlane out = y0_hat;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = keep * y_1.image.data()[i] + take * y0_hat.data()[i];
  return out;
}

/// Runs the reverse process from an arbitrary starting state down to t = 0.
/// The returned trajectory holds every state including the terminal estimate.
template <Predictor P>
std::pair<ImagePlane, Trajectory> rollout(DiffusionState start, const ImagePlane& lr_up,
                                          const P& predictor, const EtaSchedule& s) {
  require_same_shape(start.image, lr_up, "rollout");
  Trajectory traj{{}, Direction::reverse};
  traj.states.push_back(start);
  DiffusionState cur = std::move(start);
  while (cur.t >= 2) {
    ImagePlane y0_hat = predictor(cur.image, cur.t, lr_up);
    require_same_shape(cur.image, y0_hat, "rollout: predictor output");
    cur = reverse_step(cur, y0_hat, s);
    traj.states.push_back(cur);
  }
  ImagePlane y0_hat = predictor(cur.image, cur.t, lr_up);
  require_same_shape(cur.image, y0_hat, "rollout: predictor output");
  ImagePlane hr_hat = final_step(cur, y0_hat, s);
  traj.states.push_back({hr_hat, 0});
  return {std::move(hr_hat), std::move(traj)};
}

/// Reverse sampler: y_T := lr_up, then T - 1 reverse steps and the final step.
template <Predictor P>
std::pair<ImagePlane, Trajectory> sample(const ImagePlane& lr_up, const P& predictor,
                                         const EtaSchedule& s) {
  return rollout(DiffusionState{lr_up, s.steps()}, lr_up, predictor, s);
}

/// Residual blend plus kappa * sqrt(eta) * N(0, 1) noise from a seeded generator.
/// Only used to draw a noisy baseline next to the deterministic process.
inline ImagePlane noisy_residual_blend(const ImagePlane& hr, const ImagePlane& lr_up, double eta,
                                       double kappa, std::uint64_t seed) {
  if (!(kappa >= 0.0)) throw ArgumentError("noisy_forward_state: kappa must be >= 0");
  ImagePlane out = residual_blend(hr, lr_up, eta);
  if (kappa == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = kappa * std::sqrt(eta);
  for (double& v : out.data()) v += sigma * normal(rng);
  return out;
}

inline DiffusionState noisy_forward_state(const ImagePlane& hr, const ImagePlane& lr_up,
                                          const EtaSchedule& s, int t, double kappa,
                                          std::uint64_t seed) {
  return {noisy_residual_blend(hr, lr_up, s.eta(t), kappa, seed), t};
}

/// One tile per entry, left to right in the order given, plus a sidecar text
/// file with one "tile t eta" line per tile.
struct StripTile {
  ImagePlane image;
  std::string label;  ///< timestep, or "lr" for the lr_up endpoint
  double eta = 0.0;
};

inline void export_strip(const std::vector<StripTile>& tiles, const std::filesystem::path& png,
                         const std::filesystem::path& sidecar) {
  std::vector<ImagePlane> images;
  images.reserve(tiles.size());
  for (const auto& t : tiles) images.push_back(t.image);
  save_image(hconcat(images), png);
  std::ofstream out(sidecar);
  if (!out) throw IoError("export_strip: cannot write " + sidecar.string());
  out << "# tile t eta\n" << std::setprecision(17);
  for (std::size_t i = 0; i < tiles.size(); ++i)
    out << i << ' ' << tiles[i].label << ' ' << tiles[i].eta << '\n';
}

}  // namespace deltadiff
