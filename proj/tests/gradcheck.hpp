#pragma once

// Central finite differences against the analytic backward pass, in double.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "deltadiff/data.hpp"
#include "deltadiff/denoiser.hpp"
#include "deltadiff/trainer.hpp"
#include "oracles.hpp"

namespace gradcheck {

struct GroupResult {
  std::string name;
  double rel_error = 0.0;  ///< ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double norm = 0.0;       ///< max of the two norms over the sampled entries
  int sampled = 0;
};

/// Miniature denoiser used for gradient checks: 8x8 input, two levels.
inline deltadiff::DenoiserConfig mini_config() { return {16, 2, 8, 3}; }

/// Parameters with every tensor randomized. A zero output head would zero
/// out every gradient upstream of it, so the head gets random weights too.
inline deltadiff::DenoiserParams<double> random_params(const deltadiff::DenoiserConfig& cfg, std::uint64_t seed) {
  auto p = deltadiff::init_params<double>(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& t : p.tensors) {
    const bool vector_like = t.shape.size() == 1;
    const double scale = vector_like ? 0.1 : 0.5 / std::sqrt(static_cast<double>(t.values.size() / t.shape[0]));
    for (double& v : t.values) v += scale * n(rng);
  }
  return p;
}

/// Checks up to `per_tensor` randomly chosen entries of every tensor.
inline std::vector<GroupResult> run(int per_tensor = 12, std::uint64_t seed = 5, int t = 3) {
  using namespace deltadiff;
  const DenoiserConfig cfg = mini_config();
  DenoiserParams<double> params = random_params(cfg, seed);
  const LrHrPair pair = make_pair(oracle::random_image(8, 8, 3, seed + 2), 2);
  const EtaSchedule s = build_schedule({});

  ParamGrads<double> grads = zero_grads(params);
  DenoiserNet<double> net(params);
  accumulate_loss_grad(net, pair, t, s, 1.0, grads);

  std::mt19937_64 rng(seed + 3);
  const double h = 1e-6;
  std::vector<GroupResult> out;
  for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
    auto& values = params.tensors[ti].values;
    std::vector<std::size_t> idx(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    if (idx.size() > static_cast<std::size_t>(per_tensor)) idx.resize(per_tensor);

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i : idx) {
      const double keep = values[i];
      values[i] = keep + h;
      const double up = loss(params, pair, t, s);
      values[i] = keep - h;
      const double down = loss(params, pair, t, s);
      values[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[ti][i];
      diff2 += (numeric - analytic) * (numeric - analytic);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    GroupResult r;
    r.name = params.tensors[ti].name;
    r.sampled = static_cast<int>(idx.size());
    r.norm = std::sqrt(std::max(a2, n2));
    r.rel_error = r.norm > 0.0 ? std::sqrt(diff2) / r.norm : 0.0;
    out.push_back(r);
  }
  return out;
}

}  // namespace gradcheck
