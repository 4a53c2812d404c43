#include <gtest/gtest.h>

#include <set>

#include "deltadiff/data.hpp"
#include "deltadiff/denoiser.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace deltadiff;

namespace {

nn::Tensor<double> random_tensor(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  nn::Tensor<double> t(c, h, w);
  for (double& v : t.v) v = n(rng);
  return t;
}

double dot(const nn::Buffer<double>& a, const nn::Buffer<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(TimeEmbedding, SinCosPairs) {
  const auto e = time_embedding<double>(3, 8);
  ASSERT_EQ(e.size(), 8u);
  for (int k = 0; k < 4; ++k) {
    const double omega = std::pow(10000.0, -2.0 * k / 8);
    EXPECT_NEAR(e[2 * k], std::sin(3 * omega), 1e-15);
    EXPECT_NEAR(e[2 * k + 1], std::cos(3 * omega), 1e-15);
  }
  EXPECT_NE(time_embedding<double>(1, 8), time_embedding<double>(2, 8));
  EXPECT_THROW(time_embedding<double>(1, 7), ArgumentError);
  EXPECT_THROW(time_embedding<double>(0, 8), ArgumentError);
}

TEST(Layers, ConvMatchesDirectSum) {
  const int cin = 3, cout = 4, k = 3, h = 5, w = 6;
  const auto x = random_tensor(cin, h, w, 1);
  const auto wt = random_tensor(cout, cin, k * k, 2).v;
  const auto b = random_tensor(cout, 1, 1, 3).v;
  nn::Buffer<double> col;
  nn::Tensor<double> y;
  nn::conv_forward(wt.data(), b.data(), cout, k, x, col, y);
  for (int co = 0; co < cout; ++co)
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        double acc = b[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int sy = yy + ky - 1;
              const int sx = xx + kx - 1;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
              acc += wt[((co * cin + ci) * k + ky) * k + kx] * x.channel(ci)[sy * w + sx];
            }
        EXPECT_NEAR(y.channel(co)[yy * w + xx], acc, 1e-12);
      }
}

TEST(Layers, ConvBackwardIsAdjoint) {
  // <conv(x) - b, dy> == <x, conv^T dy> and dW matches <col, dy>
  const int cin = 2, cout = 3, k = 3;
  const auto x = random_tensor(cin, 4, 4, 4);
  const auto wt = random_tensor(cout, cin, k * k, 5).v;
  const nn::Buffer<double> zero_b(cout, 0.0);
  nn::Buffer<double> col;
  nn::Tensor<double> y;
  nn::conv_forward(wt.data(), zero_b.data(), cout, k, x, col, y);
  const auto dy = random_tensor(cout, 4, 4, 6);
  nn::Buffer<double> dw(wt.size(), 0.0), db(cout, 0.0);
  nn::Tensor<double> dx;
  nn::conv_backward(wt.data(), cin, cout, k, col, dy, dw.data(), db.data(), &dx);
  EXPECT_NEAR(dot(y.v, dy.v), dot(x.v, dx.v), 1e-10);
  EXPECT_NEAR(dot(y.v, dy.v), dot(wt, dw), 1e-10);
}

TEST(Layers, GroupNormStatistics) {
  const auto x = random_tensor(8, 3, 3, 7);
  const nn::Buffer<double> gamma(8, 1.0), beta(8, 0.0);
  nn::NormTape<double> tape;
  nn::Tensor<double> y;
  nn::group_norm_forward(gamma.data(), beta.data(), 4, x, tape, y);
  for (int g = 0; g < 4; ++g) {
    double m = 0.0, v = 0.0;
    for (int i = 0; i < 18; ++i) m += y.channel(2 * g)[i];
    m /= 18;
    for (int i = 0; i < 18; ++i) v += (y.channel(2 * g)[i] - m) * (y.channel(2 * g)[i] - m);
    v /= 18;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);  // eps keeps it slightly below one
  }
}

TEST(Layers, PoolAndUpsampleAreAdjointPairs) {
  const auto x = random_tensor(2, 4, 6, 8);
  const auto d = random_tensor(2, 2, 3, 9);
  EXPECT_NEAR(dot(nn::avg_pool2(x).v, d.v), dot(x.v, nn::avg_pool2_backward(d).v), 1e-12);
  const auto u = random_tensor(2, 4, 6, 10);
  EXPECT_NEAR(dot(nn::upsample2(d).v, u.v), dot(d.v, nn::upsample2_backward(u).v), 1e-12);
}

TEST(Denoiser, LayoutNamesAreUniqueAndInitIsAsDeclared) {
  const DenoiserConfig cfg{8, 2, 16, 3};
  const auto p = init_params<float>(cfg, 1);
  std::set<std::string> names;
  for (const auto& t : p.tensors) EXPECT_TRUE(names.insert(t.name).second) << t.name;
  for (const char* head : {"out_conv.weight", "out_conv.bias"}) {
    const auto* t = p.find(head);
    ASSERT_NE(t, nullptr);
    for (float v : t->values) EXPECT_EQ(v, 0.0f);
  }
  for (const auto& t : p.tensors) {
    if (t.name.ends_with(".gamma"))
      for (float v : t.values) EXPECT_EQ(v, 1.0f);
  }
  // same seed, same weights; different seed, different weights
  EXPECT_EQ(init_params<float>(cfg, 1).tensors[0].values, p.tensors[0].values);
  EXPECT_NE(init_params<float>(cfg, 2).tensors[0].values, p.tensors[0].values);
}

TEST(Denoiser, ZeroInitPredictsLrUpExactly) {
  const DenoiserConfig cfg{8, 2, 16, 3};
  const auto p = init_params<float>(cfg, 3);
  const LrHrPair pair = make_pair(oracle::random_image(16, 16, 3, 4), 4);
  for (int t = 1; t <= 4; ++t) EXPECT_EQ(predict(p, pair.hr, t, pair.lr_up), pair.lr_up);
}

TEST(Denoiser, RejectsIndivisibleShapesAndBadChannels) {
  const DenoiserConfig cfg{4, 3, 8, 3};
  const auto p = init_params<float>(cfg, 1);
  const ImagePlane odd(12, 12, 3);
  EXPECT_THROW(predict(p, odd, 1, odd), ArgumentError);
  const ImagePlane gray(16, 16, 1);
  EXPECT_THROW(predict(p, gray, 1, gray), ArgumentError);
  const ImagePlane ok(16, 16, 3);
  EXPECT_NO_THROW(predict(p, ok, 1, ok));
  EXPECT_THROW(predict(p, ok, 0, ok), ArgumentError);
}

TEST(Denoiser, NonFiniteWeightsAreRejected) {
  auto p = init_params<float>({4, 1, 8, 1}, 1);
  p.tensors[3].values[0] = std::numeric_limits<float>::quiet_NaN();
  const ImagePlane img(4, 4, 1);
  EXPECT_THROW(predict(p, img, 1, img), StateError);
}

TEST(Denoiser, OutputDependsOnStateAndTimestep) {
  const auto p = gradcheck::random_params(gradcheck::mini_config(), 11);
  const LrHrPair pair = make_pair(oracle::random_image(8, 8, 3, 12), 2);
  const ImagePlane a = predict(p, pair.hr, 2, pair.lr_up);
  EXPECT_EQ(a, predict(p, pair.hr, 2, pair.lr_up));
  EXPECT_GT(max_abs_diff(a, predict(p, pair.hr, 3, pair.lr_up)), 1e-6);
  EXPECT_GT(max_abs_diff(a, predict(p, pair.lr_up, 2, pair.lr_up)), 1e-6);
}

TEST(Denoiser, FloatAndDoubleAgree) {
  const auto pd = gradcheck::random_params(gradcheck::mini_config(), 13);
  const auto pf = cast_params<float>(pd);
  const LrHrPair pair = make_pair(oracle::random_image(8, 8, 3, 14), 2);
  EXPECT_LT(max_abs_diff(predict(pd, pair.hr, 1, pair.lr_up), predict(pf, pair.hr, 1, pair.lr_up)), 1e-4);
}

TEST(Denoiser, FiniteDifferenceGradientCheck) {
  for (const auto& r : gradcheck::run()) {
    ASSERT_GT(r.norm, 1e-9) << r.name << " has a vanishing gradient; the check would be vacuous";
    EXPECT_LT(r.rel_error, 1e-3) << r.name;
  }
}
