#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "deltadiff/errors.hpp"

namespace deltadiff {

struct ScheduleConfig {
  int steps = 4;             ///< T
  double eta_start = 0.01;   ///< eta_1, the near-HR endpoint
  double eta_end = 0.99;     ///< eta_T, the near-LR endpoint
  double curvature_p = 1.0;  ///< exponent shaping the geometric progression

  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

inline void validate(const ScheduleConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ArgumentError("schedule: " + msg); };
  if (cfg.steps < 2) fail("steps must be >= 2 (got " + std::to_string(cfg.steps) + ")");
  if (!(cfg.eta_start > 0.0)) fail("eta_start must be > 0");
  if (!(cfg.eta_end < 1.0)) fail("eta_end must be < 1");
  if (!(cfg.eta_start < cfg.eta_end)) fail("eta_start must be < eta_end");
  if (!(cfg.curvature_p > 0.0)) fail("curvature_p must be > 0");
}

/// Monotone residual weights eta_1 < ... < eta_T and their differences.
class EtaSchedule {
 public:
  EtaSchedule(ScheduleConfig cfg, std::vector<double> etas)
      : config_(cfg), etas_(std::move(etas)) {
    alphas_.reserve(etas_.size() - 1);
    for (std::size_t i = 1; i < etas_.size(); ++i) alphas_.push_back(etas_[i] - etas_[i - 1]);
  }

  int steps() const noexcept { return static_cast<int>(etas_.size()); }
  const ScheduleConfig& config() const noexcept { return config_; }
  const std::vector<double>& etas() const noexcept { return etas_; }
  /// alphas()[i] = eta_{i+2} - eta_{i+1}, i.e. alpha_t for t = 2..T.
  const std::vector<double>& alphas() const noexcept { return alphas_; }

  /// eta_t for t in 1..T.
  double eta(int t) const {
    if (t < 1 || t > steps()) {
      throw ArgumentError("eta_at: timestep " + std::to_string(t) + " outside [1, " +
                          std::to_string(steps()) + "]");
    }
    return etas_[t - 1];
  }

  /// eta_t extended with eta_0 := 0.
  double eta_or_zero(int t) const { return t == 0 ? 0.0 : eta(t); }

  /// alpha_t = eta_t - eta_{t-1} for t in 2..T.
  double alpha(int t) const {
    if (t < 2 || t > steps()) {
      throw ArgumentError("alpha: timestep " + std::to_string(t) + " outside [2, " +
                          std::to_string(steps()) + "]");
    }
    return alphas_[t - 2];
  }

 private:
  ScheduleConfig config_;
  std::vector<double> etas_;
  std::vector<double> alphas_;
};

/// sqrt(eta_t) = sqrt(eta_1) * b0^{beta_t}, with
///   b0 = exp(log(eta_T / eta_1) / (2 (T - 1))),
///   beta_t = ((t - 1) / (T - 1))^p * (T - 1).
/// Both endpoints are pinned to the configured values.
inline EtaSchedule build_schedule(const ScheduleConfig& cfg) {
  validate(cfg);
  const int T = cfg.steps;
  const double span = static_cast<double>(T - 1);
  const double log_b0 = std::log(cfg.eta_end / cfg.eta_start) / (2.0 * span);
  const double sqrt_eta1 = std::sqrt(cfg.eta_start);
  std::vector<double> etas(T);
  for (int t = 1; t <= T; ++t) {
    const double beta = std::pow((t - 1) / span, cfg.curvature_p) * span;
    const double root = sqrt_eta1 * std::exp(beta * log_b0);
    etas[t - 1] = root * root;
  }
  etas.front() = cfg.eta_start;
  etas.back() = cfg.eta_end;
  for (int i = 1; i < T; ++i) {
    if (!(etas[i] > etas[i - 1])) {
      std::ostringstream msg;
      msg << "schedule: not strictly increasing at t=" << i + 1 << " (config too close to "
          << "degenerate for double precision)";
      throw ArgumentError(msg.str());
    }
  }
  return EtaSchedule(cfg, std::move(etas));
}

inline double eta_at(const EtaSchedule& s, int t) { return s.eta(t); }

}  // namespace deltadiff
