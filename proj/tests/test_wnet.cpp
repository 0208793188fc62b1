#include <numeric>

#include "eraw/encoder.hpp"
#include "eraw/wnet.hpp"
#include "test_util.hpp"

using namespace eraw;
using namespace testutil;

namespace {

TD csha_oracle(const Csha<double>& u, const TD& deep, const TD& shallow) {
  const TD up = oracle::upsample_bilinear(conv(u.proj, deep), shallow.dim(1), shallow.dim(2));
  const TD s = oracle::sigmoid(conv(u.siu, oracle::cat(oracle::channel_stat(up, false), oracle::channel_stat(shallow, false))));
  return gate(ciu_oracle(u.ciu, up, shallow), s);
}

TD transpose2(const TD& a) {
  TD out({a.dim(1), a.dim(0)});
  for (int i = 0; i < a.dim(0); ++i)
    for (int j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

TD linear(const Linear<double>& l, const TD& x) {
  TD y = oracle::matmul(x, l.weight.value);
  if (l.bias)
    for (int i = 0; i < y.dim(0); ++i)
      for (int j = 0; j < y.dim(1); ++j) y.at(i, j) += (*l.bias).value[j];
  return y;
}

TD layer_norm(const LayerNorm<double>& n, const TD& x) {
  TD y = oracle::group_norm(x, x.dim(0), 1e-5);
  for (int i = 0; i < y.dim(0); ++i)
    for (int j = 0; j < y.dim(1); ++j) y.at(i, j) = y.at(i, j) * n.gamma.value[j] + n.beta.value[j];
  return y;
}

TD cols(const TD& a, int b, int e) {
  TD out({a.dim(0), e - b});
  for (int i = 0; i < a.dim(0); ++i)
    for (int j = b; j < e; ++j) out.at(i, j - b) = a.at(i, j);
  return out;
}

TD tokens_of(const TD& m) { return transpose2(m.reshaped({m.dim(0), m.dim(1) * m.dim(2)})); }

struct MhcaRef {
  std::vector<TD> weights;
  TD output;
};

MhcaRef mhca_oracle(const Mhca<double>& m, const TD& s_p, const TD& f_p) {
  const TD gs = conv(m.embed_s, s_p), gf = conv(m.embed_f, f_p);
  const TD se = oracle::add(tokens_of(gs), m.pos_s.value), fe = oracle::add(tokens_of(gf), m.pos_f.value);
  const TD q = linear(m.wq, layer_norm(m.norm_q, se));
  const TD kvn = layer_norm(m.norm_kv, fe);
  const TD k = linear(m.wk, kvn), v = linear(m.wv, kvn);
  const int dk = m.head_dim();
  MhcaRef r;
  TD ctx({se.dim(0), m.C});
  for (int h = 0; h < m.heads; ++h) {
    TD sc = oracle::matmul(cols(q, h * dk, (h + 1) * dk), transpose2(cols(k, h * dk, (h + 1) * dk)));
    sc *= 1.0 / std::sqrt(double(dk));
    const TD a = oracle::softmax_rows(sc);
    r.weights.push_back(a);
    const TD c = oracle::matmul(a, cols(v, h * dk, (h + 1) * dk));
    for (int i = 0; i < c.dim(0); ++i)
      for (int j = 0; j < dk; ++j) ctx.at(i, h * dk + j) = c.at(i, j);
  }
  TD x = oracle::add(se, linear(m.wo, ctx));
  x = oracle::add(x, linear(m.ffn2, oracle::relu(linear(m.ffn1, layer_norm(m.norm_ffn, x)))));
  const TD grid = transpose2(x).reshaped({m.C, gs.dim(1), gs.dim(2)});
  r.output = oracle::add(s_p, resample(grid, s_p.dim(1), s_p.dim(2)));
  return r;
}

TD gap(const TD& x) {
  const auto m = oracle::channel_means(x);
  return TD({x.dim(0), 1, 1}, m);
}

TD fusion_oracle(const FusionUnit<double>& u, const TD& s, const TD& f) {
  const TD fr = resample(f, s.dim(1), s.dim(2));
  if (u.op == "add") return oracle::add(s, fr);
  if (u.op == "conv") return conv(*u.conv, oracle::cat(s, fr));
  if (u.op == "se") {
    const TD m = conv(*u.conv, oracle::cat(s, fr));
    return gate(m, oracle::sigmoid(conv(*u.gate2, oracle::relu(conv(*u.gate1, gap(m))))));
  }
  const TD z = oracle::add(s, fr);
  const TD local = conv(*u.gate1, oracle::relu(conv(*u.conv, z)));
  const TD g = conv(*u.gate2, gap(z));
  TD out(s.shape());
  for (int c = 0; c < s.dim(0); ++c)
    for (int y = 0; y < s.dim(1); ++y)
      for (int x = 0; x < s.dim(2); ++x) {
        const double mm = 1.0 / (1.0 + std::exp(-(local.at(c, y, x) + g[c])));
        out.at(c, y, x) = mm * s.at(c, y, x) + (1.0 - mm) * fr.at(c, y, x);
      }
  return out;
}

TD eca_gate_oracle(const DecodingHead<double>& h, const TD& d) {
  const auto m = oracle::channel_means(d);
  const int C = d.dim(0);
  TD g({C, 1, 1});
  for (int c = 0; c < C; ++c) {
    double s = 0;
    for (int j = 0; j < 3; ++j)
      if (c - 1 + j >= 0 && c - 1 + j < C) s += h.eca.value[j] * m[c - 1 + j];
    g[c] = 1.0 / (1.0 + std::exp(-s));
  }
  return g;
}

TD tconv(const ConvTranspose2d<double>& m, const TD& x) {
  return oracle::conv_transpose2d(x, m.weight.value, m.bias ? &m.bias->value : nullptr, m.stride, m.pad);
}

TD head_oracle(const DecodingHead<double>& h, const TD& d) {
  const TD hr = tconv(h.up2, oracle::relu(tconv(h.up1, gate(d, eca_gate_oracle(h, d)))));
  return oracle::sigmoid(conv(h.ac_merge, oracle::cat(conv(h.ac_point, hr), conv(h.ac_spatial, hr))));
}

template <class M>
void shake(M& m, Rng& rng, double sd = 0.3) {
  ParamRefs<double> ps;
  m.collect(ps);
  randomize(ps, rng, sd);
}

}  // namespace

TEST(Csha, MergesDeepIntoShallowGeometry) {
  Rng rng = rng_for(1);
  Csha<float> u("csha", 128, 64, true, rng);
  NoGradGuard ng;
  auto out = u(constant(randn<float>({128, 7, 7}, rng)), constant(randn<float>({64, 14, 14}, rng)));
  EXPECT_EQ(out.shape(), (Shape{64, 14, 14}));
  EXPECT_THROW(u(constant(randn<float>({128, 7, 7}, rng)), constant(randn<float>({64, 14, 13}, rng))),
               std::invalid_argument);
  EXPECT_THROW(u(constant(randn<float>({64, 7, 7}, rng)), constant(randn<float>({64, 14, 14}, rng))),
               std::invalid_argument);
}

TEST(Csha, MatchesReferenceComposition) {
  Rng rng = rng_for(2);
  Csha<double> u("csha", 8, 4, true, rng);
  shake(u, rng);
  for (int t = 0; t < 3; ++t) {
    TD deep = randn({8, 3, 5}, rng), shallow = randn({4, 6, 10}, rng);
    EXPECT_LT(max_abs_diff(value(u(constant(deep), constant(shallow))), csha_oracle(u, deep, shallow)), 1e-6);
  }
}

TEST(Csha, SaturatedSpatialGatePassesCiuOutput) {
  Rng rng = rng_for(3);
  Csha<double> u("csha", 8, 4, true, rng);
  u.siu.weight.value.fill(0.0);
  u.siu.bias->value.fill(50.0);
  TD deep = randn({8, 3, 3}, rng), shallow = randn({4, 6, 6}, rng);
  const TD up = oracle::upsample_bilinear(conv(u.proj, deep), 6, 6);
  EXPECT_LT(max_abs_diff(value(u(constant(deep), constant(shallow))), ciu_oracle(u.ciu, up, shallow)), 1e-12);
  u.siu.bias->value.fill(-50.0);
  EXPECT_LT(max_abs(value(u(constant(deep), constant(shallow)))), 1e-18);
}

TEST(Csha, GradientMatchesFiniteDifferences) {
  Rng rng = rng_for(4);
  Csha<double> u("csha", 8, 4, true, rng);
  shake(u, rng, 0.1);
  TD deep = randn({8, 3, 3}, rng), shallow = randn({4, 6, 6}, rng);
  auto proj = random_projection({4, 6, 6}, rng);
  GradcheckOptions o;
  o.entries_per_tensor = 8;
  expect_grad_ok(gradcheck_params("csha", [&] { return proj(u(constant(deep), constant(shallow))); },
                                  [&] {
                                    ParamRefs<double> ps;
                                    u.collect(ps);
                                    return ps;
                                  }(),
                                  rng, o),
                 1e-3);
  expect_grad_ok(gradcheck_inputs("csha.inputs", [&](const std::vector<VD>& v) { return proj(u(v[0], v[1])); },
                                  {deep, shallow}, rng, o),
                 1e-3);
}

TEST(PartialDecode, TopLevelPassesThroughAndLowerLevelsChain) {
  Rng rng = rng_for(5);
  const std::array<int, 4> ch{4, 8, 8, 16};
  CshaCascade<double> cas("dec", ch, true, rng);
  ParamRefs<double> ps;
  cas.collect(ps);
  randomize(ps, rng);
  std::array<TD, 4> x;
  for (int i = 0; i < 4; ++i) x[i] = randn({ch[i], 16 >> i, 24 >> i}, rng);
  FeaturePyramid<double> in;
  for (int i = 0; i < 4; ++i) in[i] = constant(x[i]);
  const auto p = cas(in);
  EXPECT_EQ(max_abs_diff(p[3].value(), x[3]), 0.0);
  TD want = x[3];
  for (int i = 2; i >= 0; --i) {
    want = csha_oracle(cas.units[i], want, x[i]);
    EXPECT_LT(max_abs_diff(p[i].value(), want), 1e-6) << "level " << i + 1;
  }
  in[1] = Var<double>();
  EXPECT_THROW(cas(in), std::invalid_argument);
}

TEST(Mhca, MatchesReferenceBlock) {
  Rng rng = rng_for(6);
  for (int heads : {1, 2, 4}) {
    Mhca<double> m("mhca", 8, heads, 2, 1, {4, 6}, {3, 5}, rng);
    shake(m, rng, 0.2);
    TD s = randn({8, 3, 5}, rng), f = randn({8, 4, 6}, rng);
    const auto tr = m.trace(constant(s), constant(f));
    const auto ref = mhca_oracle(m, s, f);
    EXPECT_LT(max_abs_diff(tr.output.value(), ref.output), 1e-9) << heads << " heads";
    ASSERT_EQ(tr.weights.size(), static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) EXPECT_LT(max_abs_diff(tr.weights[h].value(), ref.weights[h]), 1e-12);
  }
}

TEST(Mhca, PatchedSceneTokensUpsampleBack) {
  Rng rng = rng_for(7);
  Mhca<double> m("mhca", 4, 2, 1, 2, {3, 3}, {4, 6}, rng);
  shake(m, rng, 0.2);
  TD s = randn({4, 4, 6}, rng), f = randn({4, 3, 3}, rng);
  EXPECT_EQ(m.scene_tokens(), 6);
  EXPECT_EQ(m.face_tokens(), 9);
  EXPECT_LT(max_abs_diff(value(m(constant(s), constant(f))), mhca_oracle(m, s, f).output), 1e-9);
}

TEST(Mhca, AttentionRowsAreDistributions) {
  Rng rng = rng_for(8);
  Mhca<double> m("mhca", 8, 4, 1, 1, {3, 4}, {2, 5}, rng);
  shake(m, rng, 0.5);
  for (int t = 0; t < 5; ++t) {
    const auto tr = m.trace(constant(randn({8, 2, 5}, rng, 3.0)), constant(randn({8, 3, 4}, rng, 3.0)));
    for (const auto& w : tr.weights) {
      const TD a = w.value();
      ASSERT_EQ(a.shape(), (Shape{10, 12}));
      for (int i = 0; i < a.dim(0); ++i) {
        double s = 0;
        for (int j = 0; j < a.dim(1); ++j) {
          EXPECT_GE(a.at(i, j), 0.0);
          s += a.at(i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
  }
}

TEST(Mhca, ZeroQueriesAverageTheValues) {
  Rng rng = rng_for(9);
  Mhca<double> m("mhca", 8, 2, 1, 1, {3, 3}, {2, 2}, rng);
  shake(m, rng, 0.2);
  m.wq.weight.value.fill(0.0);
  m.wq.bias->value.fill(0.0);
  TD s = randn({8, 2, 2}, rng), f = randn({8, 3, 3}, rng);
  const auto tr = m.trace(constant(s), constant(f));
  for (const auto& w : tr.weights)
    for (double a : w.value().vec()) EXPECT_NEAR(a, 1.0 / 9.0, 1e-15);
  const TD fe = oracle::add(tokens_of(conv(m.embed_f, f)), m.pos_f.value);
  const TD v = linear(m.wv, layer_norm(m.norm_kv, fe));
  const TD ctx = tr.context.value();
  for (int j = 0; j < 8; ++j) {
    double mean = 0;
    for (int n = 0; n < 9; ++n) mean += v.at(n, j) / 9.0;
    for (int i = 0; i < ctx.dim(0); ++i) EXPECT_NEAR(ctx.at(i, j), mean, 1e-12);
  }
}

TEST(Mhca, ToyPresetTokenCounts) {
  Rng rng = rng_for(10);
  const auto spec = PyramidSpec::from(toy_model_config().encoder);
  const auto& patch = toy_model_config().wnet.patch;
  const int want_face[4] = {64, 16, 16, 4}, want_scene[4] = {240, 60, 60, 15};
  for (int lv = 1; lv <= 4; ++lv) {
    const Shape fs = spec.face_level_shape(lv), ss = spec.scene_level_shape(lv);
    Mhca<float> m("mhca", fs[0], 4, patch[lv - 1], patch[lv - 1], {fs[1], fs[2]}, {ss[1], ss[2]}, rng);
    EXPECT_EQ(m.face_tokens(), want_face[lv - 1]) << "level " << lv;
    EXPECT_EQ(m.scene_tokens(), want_scene[lv - 1]) << "level " << lv;
    NoGradGuard ng;
    EXPECT_EQ(m(constant(randn<float>(ss, rng)), constant(randn<float>(fs, rng))).shape(), ss);
  }
}

TEST(Mhca, RejectsBadGeometry) {
  Rng rng = rng_for(11);
  EXPECT_THROW(Mhca<double>("m", 6, 4, 1, 1, {2, 2}, {2, 2}, rng), std::invalid_argument);
  EXPECT_THROW(Mhca<double>("m", 8, 4, 3, 1, {4, 4}, {2, 2}, rng), std::invalid_argument);
  Mhca<double> m("m", 8, 2, 2, 1, {4, 4}, {2, 2}, rng);
  EXPECT_THROW(m(constant(TD({8, 2, 2})), constant(TD({8, 6, 6}))), std::invalid_argument);
  EXPECT_THROW(m(constant(TD({4, 2, 2})), constant(TD({8, 4, 4}))), std::invalid_argument);
}

TEST(Mhca, GradientMatchesFiniteDifferences) {
  Rng rng = rng_for(12);
  Mhca<double> m("mhca", 4, 2, 2, 1, {4, 4}, {2, 3}, rng);
  shake(m, rng, 0.2);
  TD s = randn({4, 2, 3}, rng), f = randn({4, 4, 4}, rng);
  auto proj = random_projection({4, 2, 3}, rng);
  ParamRefs<double> ps;
  m.collect(ps);
  GradcheckOptions o;
  o.entries_per_tensor = 6;
  expect_grad_ok(gradcheck_params("mhca", [&] { return proj(m(constant(s), constant(f))); }, ps, rng, o), 1e-3);
  expect_grad_ok(gradcheck_inputs("mhca.inputs", [&](const std::vector<VD>& v) { return proj(m(v[0], v[1])); },
                                  {s, f}, rng, o),
                 1e-3);
}

class FusionOps : public ::testing::TestWithParam<std::string> {};

TEST_P(FusionOps, MatchReferenceAndKeepSceneGeometry) {
  Rng rng = rng_for(13);
  FusionUnit<double> u("fuse", GetParam(), 8, 2, 1, 1, {4, 4}, {6, 10}, true, rng);
  ParamRefs<double> ps;
  u.collect(ps);
  randomize(ps, rng);
  TD s = randn({8, 6, 10}, rng), f = randn({8, 4, 4}, rng);
  const TD out = value(u(constant(s), constant(f)));
  EXPECT_EQ(out.shape(), s.shape());
  EXPECT_LT(max_abs_diff(out, fusion_oracle(u, s, f)), 1e-9);
  if (!ps.empty()) {
    auto proj = random_projection(s.shape(), rng);
    GradcheckOptions o;
    o.entries_per_tensor = 6;
    o.step = 1e-6;  // keeps the ReLU inside the aff local branch off its kink
    expect_grad_ok(gradcheck_params("fuse." + GetParam(), [&] { return proj(u(constant(s), constant(f))); }, ps, rng, o),
                   1e-3);
  }
}

INSTANTIATE_TEST_SUITE_P(Light, FusionOps, ::testing::Values("add", "conv", "se", "aff"));

TEST(FusionUnit, AddHasNoParametersAndUnknownOpThrows) {
  Rng rng = rng_for(14);
  FusionUnit<double> u("fuse", "add", 8, 2, 1, 1, {4, 4}, {4, 4}, true, rng);
  ParamRefs<double> ps;
  u.collect(ps);
  EXPECT_TRUE(ps.empty());
  EXPECT_THROW(FusionUnit<double>("fuse", "concat", 8, 2, 1, 1, {4, 4}, {4, 4}, true, rng), std::invalid_argument);
  EXPECT_THROW(u(constant(TD({8, 4, 4})), constant(TD({4, 4, 4}))), std::invalid_argument);
}

TEST(DecodingHead, QuadruplesResolutionToOneChannel) {
  Rng rng = rng_for(15);
  DecodingHead<float> h("head", 16, 16, true, rng);
  NoGradGuard ng;
  const auto out = h(constant(randn<float>({16, 24, 40}, rng)));
  EXPECT_EQ(out.shape(), (Shape{1, 96, 160}));
  for (float v : out.value().vec()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(DecodingHead, MatchesReferenceComposition) {
  Rng rng = rng_for(16);
  DecodingHead<double> h("head", 6, 4, true, rng);
  shake(h, rng);
  TD d = randn({6, 3, 4}, rng);
  EXPECT_LT(max_abs_diff(value(h(constant(d))), head_oracle(h, d)), 1e-9);
}

TEST(DecodingHead, ZeroWeightsGiveHalf) {
  Rng rng = rng_for(17);
  DecodingHead<double> h("head", 6, 4, true, rng);
  ParamRefs<double> ps;
  h.collect(ps);
  zero_parameters(ps);
  TD d = randn({6, 3, 4}, rng);
  const TD out = value(h(constant(d))), gate = value(h.eca_gate(constant(d)));
  for (double v : out.vec()) EXPECT_EQ(v, 0.5);
  for (double g : gate.vec()) EXPECT_EQ(g, 0.5);
}

TEST(DecodingHead, EcaGateMatchesChannelAxisConvolution) {
  Rng rng = rng_for(18);
  DecodingHead<double> h("head", 7, 4, true, rng);
  TD d = randn({7, 3, 3}, rng);
  EXPECT_LT(max_abs_diff(value(h.eca_gate(constant(d))), eca_gate_oracle(h, d)), 1e-12);
}

TEST(DecodingHead, GradientMatchesFiniteDifferences) {
  Rng rng = rng_for(19);
  DecodingHead<double> h("head", 4, 4, true, rng);
  shake(h, rng, 0.1);
  TD d = randn({4, 2, 3}, rng);
  auto proj = random_projection({1, 8, 12}, rng);
  ParamRefs<double> ps;
  h.collect(ps);
  GradcheckOptions o;
  o.entries_per_tensor = 6;
  expect_grad_ok(gradcheck_params("head", [&] { return proj(h(constant(d))); }, ps, rng, o), 1e-3);
  expect_grad_ok(gradcheck_inputs("head.inputs", [&](const std::vector<VD>& v) { return proj(h(v[0])); }, {d}, rng, o),
                 1e-3);
}

TEST(Mhca, PermutingKeyValueTokensLeavesContextUnchanged) {
  Rng rng = rng_for(20);
  Mhca<double> m("mhca", 8, 2, 1, 1, {3, 4}, {2, 3}, rng);
  shake(m, rng, 0.3);
  const TD q = randn({6, 8}, rng), kv = randn({12, 8}, rng);
  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 5; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    TD kp(kv.shape());
    for (int n = 0; n < 12; ++n)
      for (int j = 0; j < 8; ++j) kp.at(n, j) = kv.at(perm[n], j);
    EXPECT_LT(max_abs_diff(value(m.attend(constant(q), constant(kv))), value(m.attend(constant(q), constant(kp)))),
              1e-12);
  }
}

TEST(DecodingHead, ZeroEcaKernelHalvesTheInput) {
  Rng rng = rng_for(21);
  DecodingHead<double> h("head", 6, 4, true, rng);
  shake(h, rng);
  h.eca.value.fill(0.0);
  const TD d = randn({6, 3, 4}, rng);
  TD half = d;
  half *= 0.5;
  const TD want = oracle::sigmoid(value(h.logits(constant(half))));
  EXPECT_LT(max_abs_diff(value(h(constant(d))), want), 1e-12);
}
