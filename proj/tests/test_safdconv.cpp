// SPDX-License-Identifier: Apache-2.0
// Sampling warp, offset network and the SAFD operator.
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gdcunet/gradcheck.hpp"
#include "gdcunet/safdconv.hpp"

using namespace gdc;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

Tensor<double> constant_field(const Shape& x, double dr, double dc) {
  Tensor<double> f(Shape{x.b, x.h, x.w, 2});
  for (std::size_t i = 0; i < f.size(); i += 2) {
    f[i] = dr;
    f[i + 1] = dc;
  }
  return f;
}

}  // namespace

TEST(Bilinear, IntegerCoordinateIsExact) {
  Rng rng(1);
  const auto x = random_tensor(Shape{1, 4, 5, 2}, rng);
  EXPECT_EQ(bilinear_sample(x, 0, 2.0, 3.0, 1), x(0, 2, 3, 1));
}

TEST(Bilinear, MidpointIsMean) {
  Rng rng(2);
  const auto x = random_tensor(Shape{1, 4, 5, 1}, rng);
  EXPECT_NEAR(bilinear_sample(x, 0, 1.0, 2.5, 0), 0.5 * (x(0, 1, 2, 0) + x(0, 1, 3, 0)), 1e-15);
}

TEST(Bilinear, ClampsToBorder) {
  Rng rng(3);
  const auto x = random_tensor(Shape{1, 4, 5, 1}, rng);
  EXPECT_EQ(bilinear_sample(x, 0, -3.7, 2.0, 0), x(0, 0, 2, 0));
  EXPECT_EQ(bilinear_sample(x, 0, 9.0, 40.0, 0), x(0, 3, 4, 0));
}

TEST(Warp, ZeroFieldIsIdentity) {
  Rng rng(4);
  const auto x = random_tensor(Shape{2, 5, 6, 3}, rng);
  EXPECT_EQ(warp_forward(x, constant_field(x.shape(), 0, 0)).values(), x.values());
}

TEST(Warp, UnitColumnShiftReadsRightNeighbour) {
  Rng rng(5);
  const auto x = random_tensor(Shape{1, 5, 6, 2}, rng);
  const auto y = warp_forward(x, constant_field(x.shape(), 0, 1));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c + 1 < 6; ++c)
      for (std::size_t ch = 0; ch < 2; ++ch) EXPECT_EQ(y(0, r, c, ch), x(0, r, c + 1, ch));
}

TEST(Warp, HalfShiftAveragesNeighbours) {
  Rng rng(6);
  const auto x = random_tensor(Shape{1, 4, 6, 1}, rng);
  const auto y = warp_forward(x, constant_field(x.shape(), 0, 0.5));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c + 1 < 6; ++c)
      EXPECT_NEAR(y(0, r, c, 0), 0.5 * (x(0, r, c, 0) + x(0, r, c + 1, 0)), 1e-15);
}

TEST(Warp, FieldShapeMustMatch) {
  const Tensor<double> x(Shape{1, 4, 4, 2});
  EXPECT_THROW(warp_forward(x, Tensor<double>(Shape{1, 4, 3, 2})), ShapeError);
  EXPECT_THROW(warp_forward(x, Tensor<double>(Shape{1, 4, 4, 1})), ShapeError);
}

TEST(WarpBackward, ZeroUpstreamGivesZero) {
  Rng rng(7);
  const auto x = random_tensor(Shape{1, 4, 4, 2}, rng);
  const auto f = random_tensor(Shape{1, 4, 4, 2}, rng, -2, 2);
  const auto [gx, gf] = warp_backward(Tensor<double>(x.shape()), x, f);
  for (double v : gx.values()) EXPECT_EQ(v, 0.0);
  for (double v : gf.values()) EXPECT_EQ(v, 0.0);
}

TEST(WarpBackward, IntegerSamplesRouteToSourcePixel) {
  Rng rng(8);
  const auto x = random_tensor(Shape{1, 4, 4, 1}, rng);
  Tensor<double> up(x.shape());
  up(0, 1, 1, 0) = 1.0;
  const auto [gx, gf] = warp_backward(up, x, constant_field(x.shape(), 1, 2));
  for (std::size_t i = 0; i < gx.size(); ++i)
    EXPECT_EQ(gx[i], i == gx.offset(0, 2, 3, 0) ? 1.0 : 0.0);
}

TEST(WarpBackward, FieldGradientMatchesFiniteDifferences) {
  // 1x6x6x2 tensor and field, sample points kept inside cells
  Rng rng(9);
  const auto x = random_tensor(Shape{1, 6, 6, 2}, rng);
  Tensor<double> f(Shape{1, 6, 6, 2});
  std::uniform_real_distribution<double> frac(0.2, 0.8);
  std::uniform_int_distribution<int> shift(-1, 1);
  for (auto& v : f.values()) v = shift(rng) + frac(rng);
  const auto up = random_tensor(x.shape(), rng);
  const auto [gx, gf] = warp_backward(up, x, f);
  auto objective = [&](const Tensor<double>& field) {
    const auto y = warp_forward(x, field);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
    return s;
  };
  const double h = 1e-5;
  for (std::size_t i = 0; i < f.size(); ++i) {
    auto fp = f, fm = f;
    fp[i] += h;
    fm[i] -= h;
    const double numeric = (objective(fp) - objective(fm)) / (2 * h);
    EXPECT_LE(relative_error(gf[i], numeric, 1e-5), 1e-4) << i;
  }
}

TEST(OffsetConfig, Validation) {
  OffsetNetConfig c;
  c.channels = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c.channels = 6;
  c.heads = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c.embed_multiplier = 2;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.model_dim(), 12);
  EXPECT_EQ(c.head_dim(), 3);
}

TEST(OffsetNetwork, ZeroParametersGiveZeroField) {
  Rng rng(10);
  OffsetNetConfig cfg{2, 4, 16, 8, false};
  const auto p = OffsetNetworkParams<double>::zeros(cfg);
  const auto f = compute_displacement_field(Var<double>(random_tensor(Shape{2, 16, 16, 8}, rng)), p, cfg);
  EXPECT_EQ(f.shape(), (Shape{2, 16, 16, 2}));
  for (double v : f.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(OffsetNetwork, TokenSwapPermutesField) {
  Rng rng(11);
  OffsetNetConfig cfg{1, 2, 8, 4, true};
  const auto p = OffsetNetworkParams<double>::init(cfg, rng);
  auto x = random_tensor(Shape{1, 2, 2, 4}, rng);
  auto swapped = x;
  for (std::size_t c = 0; c < 4; ++c) std::swap(swapped(0, 0, 0, c), swapped(0, 1, 1, c));
  const auto f = compute_displacement_field(Var<double>(x), p, cfg).value();
  const auto g = compute_displacement_field(Var<double>(swapped), p, cfg).value();
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(f(0, 0, 0, k), g(0, 1, 1, k), 1e-12);
    EXPECT_NEAR(f(0, 1, 1, k), g(0, 0, 0, k), 1e-12);
    EXPECT_NEAR(f(0, 0, 1, k), g(0, 0, 1, k), 1e-12);
  }
}

TEST(Attention, ZeroQueryGivesUniformRows) {
  Rng rng(12);
  const auto k = random_tensor(Shape{1, 1, 5, 3}, rng);
  const auto a = attention_weights(Tensor<double>(Shape{1, 1, 5, 3}), k);
  for (double v : a.values()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Attention, SingleToken) {
  const auto a = attention_weights(Tensor<double>(Shape{1, 1, 1, 2}, 0.3), Tensor<double>(Shape{1, 1, 1, 2}, -1.0));
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0], 1.0);
}

TEST(Attention, ClosedFormRows) {
  const Tensor<double> q(Shape{1, 1, 2, 1}, {1.0, 1.0});
  const Tensor<double> k(Shape{1, 1, 2, 1}, {0.0, std::log(9.0)});
  const auto a = attention_weights(q, k);
  EXPECT_NEAR(a[0], 0.1, 1e-15);
  EXPECT_NEAR(a[1], 0.9, 1e-15);
  EXPECT_NEAR(a[2], 0.1, 1e-15);
  EXPECT_NEAR(a[3], 0.9, 1e-15);
}

TEST(Attention, RowsAreStochastic) {
  Rng rng(13);
  const auto a = attention_weights(random_tensor(Shape{1, 1, 7, 4}, rng, -3, 3),
                                   random_tensor(Shape{1, 1, 7, 4}, rng, -3, 3));
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GE(a[r * 7 + c], 0.0);
      s += a[r * 7 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
}

TEST(Settings, PresetsMatchReferenceTable) {
  const int expect[6][5] = {{5, 1, 1, 4, 32}, {7, 1, 1, 4, 32}, {3, 2, 1, 4, 32},
                            {5, 1, 1, 4, 64}, {5, 1, 2, 4, 64}, {5, 1, 4, 4, 64}};
  for (int s = 1; s <= 6; ++s) {
    const auto c = safd_setting(s, 8, 8);
    const int* e = expect[s - 1];
    EXPECT_EQ(c.kernel_size, e[0]);
    EXPECT_EQ(c.dilation, e[1]);
    EXPECT_EQ(c.embed_multiplier, e[2]);
    EXPECT_EQ(c.heads, e[3]);
    EXPECT_EQ(c.hidden_dim, e[4]);
  }
  EXPECT_THROW(safd_setting(0), UsageError);
  EXPECT_THROW(safd_setting(7), UsageError);
}

TEST(SafdConv, ZeroOffsetCollapsesToConv) {
  Rng rng(14);
  auto cfg = safd_setting(5, 4, 3);
  auto layer = SAFDConvLayer<double>::init(cfg, rng);
  layer.offset = OffsetNetworkParams<double>::zeros(cfg.offset_config());
  const Var<double> x(random_tensor(Shape{2, 7, 6, 4}, rng));
  const auto a = safdconv_forward(x, layer).value();
  const auto b = conv2d(x, layer.kernel, cfg.grid()).value();
  EXPECT_EQ(a.values(), b.values());
}

TEST(SafdConv, SettingThreeKeepsShape) {
  Rng rng(15);
  const auto layer = SAFDConvLayer<double>::init(safd_setting(3, 4, 4), rng);
  const auto y = safdconv_forward(Var<double>(random_tensor(Shape{1, 8, 8, 4}, rng)), layer);
  EXPECT_EQ(y.shape(), (Shape{1, 8, 8, 4}));
  EXPECT_TRUE(y.value().all_finite());
}

TEST(SafdConv, RejectsWrongChannelCount) {
  Rng rng(16);
  const auto layer = SAFDConvLayer<double>::init(safd_setting(1, 4, 2), rng);
  EXPECT_THROW(safdconv_forward(Var<double>(Tensor<double>(Shape{1, 4, 4, 2})), layer), ShapeError);
}

TEST(SafdConv, EndToEndGradientOnSmallInstance) {
  // 1x6x6x4 -> 2 with a sum-of-outputs objective
  Rng rng(17);
  SAFDConvConfig cfg{3, 1, 1, 2, 8, 4, 2, false};
  SAFDConvLayer<double> layer{cfg, detail::smooth_offset_params(cfg.offset_config(), rng), {}};
  layer.kernel = init_conv_kernel<double>(3, 4, 2, rng);
  Var<double> x(random_tensor(Shape{1, 6, 6, 4}, rng), true);
  std::vector<Var<double>> inputs{x};
  for (const auto& p : layer.parameters()) inputs.push_back(p.var);
  GradCheckOptions o;
  const double err = check_instance(
      [&](const std::vector<Var<double>>& v) { return sum(safdconv_forward(v[0], layer)); }, inputs,
      rng, o);
  EXPECT_LE(err, 1e-4);
}

TEST(ParamCount, ClosedFormMatchesEnumeration) {
  Rng rng(18);
  for (int s = 1; s <= 6; ++s)
    for (int cin : {2, 8, 32}) {
      auto cfg = safd_setting(s, cin, cin + 3);
      if (cfg.embed_multiplier * cin % cfg.heads != 0) continue;
      const auto layer = SAFDConvLayer<double>::init(cfg, rng);
      EXPECT_EQ(param_count(cfg).total(), count_elements(layer.parameters()));
    }
  SAFDConvConfig tiny{1, 1, 1, 1, 2, 2, 1, false};
  const auto n = param_count(tiny);
  EXPECT_EQ(n.embed, 6u);
  EXPECT_EQ(n.qkv, 18u);
  EXPECT_EQ(n.output, 6u);
  EXPECT_EQ(n.feedforward, 12u);
  EXPECT_EQ(n.unembed, 6u);
  EXPECT_EQ(n.kernel, 3u);
  EXPECT_EQ(n.total(), count_elements(SAFDConvLayer<double>::init(tiny, rng).parameters()));
}

TEST(ParamCount, HeadsDoNotChangeCount) {
  SAFDConvConfig a{5, 1, 1, 1, 32, 8, 8, false}, b = a;
  b.heads = 4;
  EXPECT_EQ(param_count(a).total(), param_count(b).total());
}

TEST(ParamCount, DoublingEmbeddingQuadruplesAttentionMatrices) {
  SAFDConvConfig a{5, 1, 1, 4, 32, 16, 16, false}, b = a;
  b.embed_multiplier = 2;
  // Q, K, V and output projections: 4 D^2 weights plus 4 D biases
  auto matrices = [](const SAFDConvConfig& c) {
    const std::size_t d = std::size_t(c.embed_multiplier * c.in_channels);
    const auto n = param_count(c);
    return n.qkv + n.output - 4 * d;
  };
  EXPECT_EQ(matrices(b), 4 * matrices(a));
  const auto na = param_count(a), nb = param_count(b);
  EXPECT_GT(nb.qkv + nb.output, 3 * (na.qkv + na.output));
}

TEST(GradCheck, WarpOffsetSafdScopesPass) {
  for (const char* scope : {"warp", "offset", "safdconv"})
    for (const auto& r : run_gradcheck(scope)) {
      EXPECT_LE(r.worst, 1e-4) << r.op;
      EXPECT_GE(r.instances, 20) << r.op;
    }
}

TEST(GradCheck, SignFlipIsCaught) {
  GradCheckOptions o;
  o.inject_sign_flip = true;
  o.instances = 2;
  for (const auto& r : run_gradcheck("warp", o)) EXPECT_GT(r.worst, 1.0);
}
