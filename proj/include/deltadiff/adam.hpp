#pragma once

#include <cmath>
#include <cstdint>
#include <span>

namespace deltadiff {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. `step` is the 1-based index of this update.
/// Arithmetic is carried out in double regardless of S.
template <typename S>
void adam_update(std::span<S> params, std::span<const S> grad, std::span<S> m, std::span<S> v,
                 const AdamConfig& cfg, std::int64_t step) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<S>(mi);
    v[i] = static_cast<S>(vi);
    const double m_hat = mi / c1;
    const double v_hat = vi / c2;
    params[i] = static_cast<S>(params[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

}  // namespace deltadiff
