#include <gtest/gtest.h>

#include "eraw/gradcheck.hpp"
#include "eraw/spectral.hpp"
#include "oracles.hpp"

using namespace eraw;
using TD = Tensor<double>;
using VD = Var<double>;
using Vars = std::vector<VD>;

namespace {

Rng rng_for(int seed) { return Rng(static_cast<std::uint64_t>(seed) * 7919u + 13u); }

void expect_grad_ok(const GradcheckReport& r, double tol = 1e-6) {
  EXPECT_TRUE(r.pass(tol)) << r.name << " worst " << r.worst.where << " analytic " << r.worst.analytic
                           << " numeric " << r.worst.numeric << " rel " << r.max_rel_err;
}

GradcheckOptions dense() {
  GradcheckOptions o;
  o.step = 1e-5;
  o.entries_per_tensor = 0;
  o.max_entries = 100000;
  return o;
}

}  // namespace

struct ConvCase {
  int cin, cout, k, stride, pad, dil, groups, h, w;
};

class Conv2dOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(Conv2dOracle, MatchesDirectLoopsAndFiniteDifferences) {
  const auto p = GetParam();
  Rng rng = rng_for(p.cin * 31 + p.k);
  TD x = randn<double>({p.cin, p.h, p.w}, rng);
  TD w = randn<double>({p.cout, p.cin / p.groups, p.k, p.k}, rng);
  TD b = randn<double>({p.cout}, rng);
  ConvOptions o;
  o.stride_h = o.stride_w = p.stride;
  o.pad_h = o.pad_w = p.pad;
  o.dilation_h = o.dilation_w = p.dil;
  o.groups = p.groups;
  auto bv = constant(b);
  auto y = conv2d(constant(x), constant(w), &bv, o);
  EXPECT_LT(max_abs_diff(y.value(), oracle::conv2d(x, w, &b, p.stride, p.pad, p.dil, p.groups)), 1e-12);

  auto proj = random_projection(y.shape(), rng);
  auto rep = gradcheck_inputs(
      "conv2d",
      [&](const Vars& v) {
        auto bb = v[2];
        return proj(conv2d(v[0], v[1], &bb, o));
      },
      {x, w, b}, rng, dense());
  expect_grad_ok(rep);
}

INSTANTIATE_TEST_SUITE_P(Shapes, Conv2dOracle,
                         ::testing::Values(ConvCase{3, 4, 3, 1, 1, 1, 1, 5, 6}, ConvCase{4, 6, 1, 1, 0, 1, 2, 4, 3},
                                           ConvCase{2, 3, 3, 2, 1, 1, 1, 7, 6}, ConvCase{4, 4, 3, 1, 2, 2, 2, 6, 5},
                                           ConvCase{3, 2, 7, 2, 3, 1, 1, 9, 8}, ConvCase{2, 2, 1, 2, 0, 1, 1, 6, 6}));

TEST(ConvTranspose, MatchesScatterOracleAndFiniteDifferences) {
  Rng rng = rng_for(2);
  TD x = randn<double>({3, 4, 5}, rng);
  TD w = randn<double>({3, 2, 4, 4}, rng);
  TD b = randn<double>({2}, rng);
  auto bv = constant(b);
  auto y = conv_transpose2d(constant(x), constant(w), &bv, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 8, 10}));
  EXPECT_LT(max_abs_diff(y.value(), oracle::conv_transpose2d(x, w, &b, 2, 1)), 1e-12);
  auto proj = random_projection(y.shape(), rng);
  expect_grad_ok(gradcheck_inputs(
      "conv_transpose2d",
      [&](const Vars& v) {
        auto bb = v[2];
        return proj(conv_transpose2d(v[0], v[1], &bb, 2, 1));
      },
      {x, w, b}, rng, dense()));
}

TEST(ConvTranspose, IsAdjointOfStridedConv) {
  Rng rng = rng_for(3);
  TD x = randn<double>({2, 8, 6}, rng), y = randn<double>({3, 4, 3}, rng);
  TD w = randn<double>({3, 2, 4, 4}, rng);
  auto cy = conv2d<double>(constant(x), constant(w), nullptr, ConvOptions::strided(2, 1));
  auto tx = conv_transpose2d<double>(constant(y), constant(w), nullptr, 2, 1);
  double lhs = 0, rhs = 0;
  for (std::int64_t i = 0; i < y.size(); ++i) lhs += cy.value()[i] * y[i];
  for (std::int64_t i = 0; i < x.size(); ++i) rhs += tx.value()[i] * x[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Conv2d, RejectsIncompatibleShapes) {
  TD x({3, 4, 4}), w({2, 2, 3, 3});
  EXPECT_THROW(conv2d<double>(constant(x), constant(w), nullptr, ConvOptions::same(3)), ShapeError);
  ConvOptions g;
  g.groups = 2;
  EXPECT_THROW(conv2d<double>(constant(x), constant(TD({2, 1, 1, 1})), nullptr, g), ShapeError);
}

TEST(Spectral, MatchesComplexDftOracle) {
  Rng rng = rng_for(4);
  TD x = randn<double>({2, 5, 6}, rng);
  auto s = dft2(x);
  for (int c = 0; c < 2; ++c) {
    auto ref = oracle::dft2(x, c);
    for (int i = 0; i < 30; ++i) {
      EXPECT_NEAR(s.re[c * 30 + i], ref[i].real(), 1e-10);
      EXPECT_NEAR(s.im[c * 30 + i], ref[i].imag(), 1e-10);
    }
  }
  auto back = idft2(s);
  EXPECT_LT(max_abs_diff(back.re, x), 1e-12);
  EXPECT_LT(max_abs(back.im), 1e-12);
}

TEST(Spectral, StackedForwardInverseRoundTrip) {
  Rng rng = rng_for(5);
  TD x = randn<double>({3, 8, 7}, rng);
  auto z = dft2_stacked(constant(x));
  ASSERT_EQ(z.shape(), (Shape{6, 8, 7}));
  EXPECT_LT(max_abs_diff(idft2_real(z).value(), x), 1e-12);

  Tensor<float> xf = x.cast<float>();
  auto zf = idft2_real(dft2_stacked(constant(xf)));
  EXPECT_LT(max_abs_diff(zf.value(), xf), 1e-5);
}

TEST(Spectral, InverseRealPartMatchesOracle) {
  Rng rng = rng_for(6);
  TD z = randn<double>({4, 3, 5}, rng);
  auto y = idft2_real(constant(z));
  for (int c = 0; c < 2; ++c) {
    std::vector<std::complex<double>> spec(15);
    for (int i = 0; i < 15; ++i) spec[i] = {z[c * 15 + i], z[(2 + c) * 15 + i]};
    auto ref = oracle::idft2(spec, 3, 5);
    for (int i = 0; i < 15; ++i) EXPECT_NEAR(y.value()[c * 15 + i], ref[i].real(), 1e-12);
  }
}

TEST(Spectral, GradientsMatchFiniteDifferences) {
  Rng rng = rng_for(7);
  TD x = randn<double>({2, 4, 6}, rng);
  auto p1 = random_projection({4, 4, 6}, rng);
  expect_grad_ok(gradcheck_inputs("dft2_stacked", [&](const Vars& v) { return p1(dft2_stacked(v[0])); }, {x}, rng,
                                  dense()));
  TD z = randn<double>({4, 5, 3}, rng);
  auto p2 = random_projection({2, 5, 3}, rng);
  expect_grad_ok(
      gradcheck_inputs("idft2_real", [&](const Vars& v) { return p2(idft2_real(v[0])); }, {z}, rng, dense()));
}

TEST(Resample, BilinearAndAdaptivePoolMatchOracles) {
  Rng rng = rng_for(8);
  TD x = randn<double>({2, 5, 7}, rng);
  EXPECT_LT(max_abs_diff(upsample_bilinear(constant(x), 10, 14).value(), oracle::upsample_bilinear(x, 10, 14)),
            1e-12);
  EXPECT_LT(max_abs_diff(upsample_bilinear(constant(x), 12, 9).value(), oracle::upsample_bilinear(x, 12, 9)), 1e-12);
  EXPECT_LT(max_abs_diff(adaptive_avg_pool2d(constant(x), 2, 3).value(), oracle::adaptive_avg_pool(x, 2, 3)), 1e-12);
  EXPECT_LT(max_abs_diff(resample_to(constant(x), 5, 7).value(), x), 0.0 + 1e-300);
  EXPECT_THROW(resample_to(constant(x), 10, 3), ShapeError);

  auto pu = random_projection({2, 9, 11}, rng);
  expect_grad_ok(gradcheck_inputs("upsample", [&](const Vars& v) { return pu(upsample_bilinear(v[0], 9, 11)); }, {x},
                                  rng, dense()));
  auto pp = random_projection({2, 3, 2}, rng);
  expect_grad_ok(gradcheck_inputs("adaptive_pool", [&](const Vars& v) { return pp(adaptive_avg_pool2d(v[0], 3, 2)); },
                                  {x}, rng, dense()));
}

TEST(Resample, BilinearPreservesConstants) {
  TD x({1, 3, 4}, 2.5);
  auto y = upsample_bilinear(constant(x), 7, 9);
  for (double v : y.value().vec()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Pooling, MaxPoolMatchesOracleAndRoutesGradient) {
  Rng rng = rng_for(9);
  TD x = randn<double>({2, 7, 6}, rng);
  EXPECT_LT(max_abs_diff(max_pool2d(constant(x), 3, 2, 1).value(), oracle::max_pool(x, 3, 2, 1)), 1e-15);
  auto p = random_projection(max_pool2d(constant(x), 3, 2, 1).shape(), rng);
  expect_grad_ok(
      gradcheck_inputs("max_pool", [&](const Vars& v) { return p(max_pool2d(v[0], 3, 2, 1)); }, {x}, rng, dense()));
}

TEST(Normalization, GroupNormMatchesOracleAndGradients) {
  Rng rng = rng_for(10);
  TD x = randn<double>({6, 3, 4}, rng, 2.0);
  EXPECT_LT(max_abs_diff(normalize_groups(constant(x), 3, 1e-5).value(), oracle::group_norm(x, 3, 1e-5)), 1e-12);
  auto p = random_projection(x.shape(), rng);
  expect_grad_ok(gradcheck_inputs("group_norm", [&](const Vars& v) { return p(normalize_groups(v[0], 3, 1e-5)); },
                                  {x}, rng, dense()));
}

TEST(Attention, SoftmaxAndMatmulMatchOracles) {
  Rng rng = rng_for(11);
  TD a = randn<double>({4, 5}, rng, 3.0), b = randn<double>({5, 3}, rng);
  auto s = softmax_rows(constant(a));
  EXPECT_LT(max_abs_diff(s.value(), oracle::softmax_rows(a)), 1e-14);
  for (int r = 0; r < 4; ++r) {
    double sum = 0;
    for (int c = 0; c < 5; ++c) sum += s.value().at(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  EXPECT_LT(max_abs_diff(matmul(constant(a), constant(b)).value(), oracle::matmul(a, b)), 1e-12);
  auto p = random_projection({4, 3}, rng);
  expect_grad_ok(gradcheck_inputs(
      "softmax_matmul", [&](const Vars& v) { return p(matmul(softmax_rows(v[0]), v[1])); }, {a, b}, rng, dense()));
}

TEST(Elementwise, BroadcastOpsAndReductionsHaveCorrectGradients) {
  Rng rng = rng_for(12);
  TD a = randn<double>({3, 4, 5}, rng), b = randn<double>({3, 1, 1}, rng), c = randn<double>({1, 4, 5}, rng);
  auto p = random_projection({3, 4, 5}, rng);
  expect_grad_ok(gradcheck_inputs(
      "broadcast",
      [&](const Vars& v) {
        auto y = mul(add(v[0], v[1]), sigmoid(v[2]));
        y = sub(tanh(y), scale(v[1], 0.5));
        return p(mul(y, add_scalar(global_avg_pool(v[0]), 1.0)));
      },
      {a, b, c}, rng, dense()));
  auto q = random_projection({2, 4, 5}, rng);
  expect_grad_ok(gradcheck_inputs(
      "channel_stats", [&](const Vars& v) { return q(concat<double>({channel_mean(v[0]), channel_max(v[0])})); },
      {a}, rng, dense()));
  auto r = random_projection({2, 2, 3}, rng);
  expect_grad_ok(gradcheck_inputs(
      "shape_ops",
      [&](const Vars& v) {
        auto s = slice(v[0], 1, 3);
        auto cr = crop2d(s, 1, 2, 2, 3);
        auto padded = pad2d(cr, 1, 1, 4, 5);
        return r(crop2d(padded, 0, 0, 2, 3));
      },
      {a}, rng, dense()));
}

TEST(Elementwise, StitchTilesReassemblesInRowMajorOrder) {
  std::vector<VD> tiles;
  for (int t = 0; t < 6; ++t) tiles.push_back(constant(TD({1, 2, 2}, double(t))));
  auto y = stitch_tiles(tiles, 2, 3);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 6}));
  EXPECT_EQ(y.value().at(0, 0, 0), 0.0);
  EXPECT_EQ(y.value().at(0, 1, 5), 2.0);
  EXPECT_EQ(y.value().at(0, 3, 0), 3.0);
  EXPECT_EQ(y.value().at(0, 2, 4), 5.0);
}

TEST(Autograd, SharedSubexpressionsAccumulateAndNoGradDropsGraph) {
  Parameter<double> w{"w", TD({2}, std::vector<double>{1.5, -2.0})};
  auto x = param(w);
  auto y = sum_all(mul(x, x));  // d/dw = 2w
  auto g = backward(y);
  ASSERT_EQ(g.count(&w), 1u);
  EXPECT_DOUBLE_EQ(g[&w][0], 3.0);
  EXPECT_DOUBLE_EQ(g[&w][1], -4.0);
  {
    NoGradGuard ng;
    auto z = mul(param(w), param(w));
    EXPECT_FALSE(z.requires_grad());
    EXPECT_TRUE(z.get()->inputs.empty());
  }
  EXPECT_TRUE(grad_enabled());
}
