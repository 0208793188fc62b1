#pragma once

#include "eraw/gcs.hpp"

namespace eraw {

/// Channel-spatial hybrid attention decoding step: the deeper map is
/// upsampled x2 and projected to the shallow width, merged with the shallow
/// map by CIU, and gated by a spatial map built from both channel means.
template <class T>
struct Csha {
  Conv2d<T> proj;
  Ciu<T> ciu;
  Conv2d<T> siu;

  Csha() = default;
  Csha(const std::string& name, int c_deep, int c_shallow, bool bias, Rng& rng)
      : proj(name + ".proj", c_deep, c_shallow, 1, ConvOptions{}, bias, rng, 1.0),
        ciu(name + ".ciu", c_shallow, bias, rng),
        siu(name + ".siu", 2, 1, 7, ConvOptions::same(7), bias, rng, 1.0) {}

  Var<T> lift(const Var<T>& x_deep, const Var<T>& x_shallow) const {
    if (x_deep.rank() != 3 || x_shallow.rank() != 3 || x_deep.dim(0) != proj.in_channels() ||
        x_shallow.dim(0) != proj.out_channels() || 2 * x_deep.dim(1) != x_shallow.dim(1) ||
        2 * x_deep.dim(2) != x_shallow.dim(2))
      shape_fail("csha: cannot pair deep ", shape_str(x_deep.shape()), " with shallow ", shape_str(x_shallow.shape()));
    return upsample_bilinear(proj(x_deep), x_shallow.dim(1), x_shallow.dim(2));
  }

  Var<T> spatial_gate(const Var<T>& up, const Var<T>& x_shallow) const {
    return sigmoid(siu(concat<T>({channel_mean(up), channel_mean(x_shallow)})));
  }

  Var<T> operator()(const Var<T>& x_deep, const Var<T>& x_shallow) const {
    auto up = lift(x_deep, x_shallow);
    return mul(ciu(up, x_shallow), spatial_gate(up, x_shallow));
  }

  void collect(ParamRefs<T>& out) {
    proj.collect(out);
    ciu.collect(out);
    siu.collect(out);
  }
};

/// Cascade of three CSHA units from level 4 down to level 1.
template <class T>
struct CshaCascade {
  std::array<Csha<T>, 3> units;  // units[i] produces level i+1

  CshaCascade() = default;
  CshaCascade(const std::string& name, const std::array<int, 4>& channels, bool bias, Rng& rng) {
    for (int i = 0; i < 3; ++i)
      units[i] = Csha<T>(concat_msg(name, ".csha", i + 1), channels[i + 1], channels[i], bias, rng);
  }

  /// p4 = x4, p_i = csha(p_{i+1}, x_i).
  FeaturePyramid<T> operator()(const FeaturePyramid<T>& x) const {
    for (int i = 0; i < 4; ++i)
      if (!x[i].defined()) shape_fail("partial_decode needs 4 levels, level ", i + 1, " missing");
    FeaturePyramid<T> p;
    p[3] = x[3];
    for (int i = 2; i >= 0; --i) p[i] = units[i](p[i + 1], x[i]);
    return p;
  }

  void collect(ParamRefs<T>& out) {
    for (auto& u : units) u.collect(out);
  }
};

/// Attention internals exposed for inspection.
template <class T>
struct MhcaTrace {
  std::vector<Var<T>> weights;  // per head: Ns x Nf, rows sum to 1
  Var<T> context;               // Ns x C, heads concatenated before the output projection
  Var<T> output;
};

/// Multi-head cross-attention fusion of one level: scene tokens query face
/// tokens. Pre-norm transformer block (attention + FFN, both residual) over
/// patch embeddings with learned positions; the token grid is upsampled back
/// to the scene map and added to it.
template <class T>
struct Mhca {
  int C = 0, heads = 1, patch_f = 1, patch_s = 1;
  Conv2d<T> embed_f, embed_s;
  Parameter<T> pos_f, pos_s;  // N x C
  LayerNorm<T> norm_q, norm_kv, norm_ffn;
  Linear<T> wq, wk, wv, wo, ffn1, ffn2;

  Mhca() = default;
  Mhca(const std::string& name, int channels, int n_heads, int pf, int ps, std::array<int, 2> face_hw,
       std::array<int, 2> scene_hw, Rng& rng)
      : C(channels), heads(n_heads), patch_f(pf), patch_s(ps) {
    if (heads < 1 || C % heads) shape_fail(name, ": heads ", heads, " must divide width ", C);
    if (face_hw[0] % pf || face_hw[1] % pf || scene_hw[0] % ps || scene_hw[1] % ps)
      shape_fail(name, ": patch sizes ", pf, "/", ps, " must divide ", face_hw[0], "x", face_hw[1], " and ",
                 scene_hw[0], "x", scene_hw[1]);
    const int nf = (face_hw[0] / pf) * (face_hw[1] / pf), ns = (scene_hw[0] / ps) * (scene_hw[1] / ps);
    embed_f = Conv2d<T>(name + ".embed_f", C, C, pf, ConvOptions::strided(pf, 0), true, rng, 1.0);
    embed_s = Conv2d<T>(name + ".embed_s", C, C, ps, ConvOptions::strided(ps, 0), true, rng, 1.0);
    pos_f = {name + ".pos_f", randn<T>({nf, C}, rng, 0.02)};
    pos_s = {name + ".pos_s", randn<T>({ns, C}, rng, 0.02)};
    norm_q = LayerNorm<T>(name + ".norm_q", C);
    norm_kv = LayerNorm<T>(name + ".norm_kv", C);
    norm_ffn = LayerNorm<T>(name + ".norm_ffn", C);
    wq = Linear<T>(name + ".wq", C, C, true, rng);
    wk = Linear<T>(name + ".wk", C, C, true, rng);
    wv = Linear<T>(name + ".wv", C, C, true, rng);
    wo = Linear<T>(name + ".wo", C, C, true, rng);
    ffn1 = Linear<T>(name + ".ffn1", C, 2 * C, true, rng, 2.0);
    ffn2 = Linear<T>(name + ".ffn2", 2 * C, C, true, rng);
  }

  int head_dim() const { return C / heads; }
  int face_tokens() const { return pos_f.value.dim(0); }
  int scene_tokens() const { return pos_s.value.dim(0); }

  /// C x h x w map -> (h*w) x C tokens.
  static Var<T> tokens(const Var<T>& m) { return transpose(reshape(m, {m.dim(0), m.dim(1) * m.dim(2)})); }

  /// Scaled dot-product attention of query tokens over key/value tokens,
  /// split across heads. Returns the concatenated context (Nq x C).
  Var<T> attend(const Var<T>& q_tok, const Var<T>& kv_tok, std::vector<Var<T>>* weights = nullptr) const {
    const int dk = head_dim();
    auto qt = transpose(wq(q_tok));   // C x Nq
    auto kt = transpose(wk(kv_tok));  // C x Nk
    auto vt = transpose(wv(kv_tok));  // C x Nk
    const T inv = T(1) / std::sqrt(T(dk));
    std::vector<Var<T>> ctx;
    for (int h = 0; h < heads; ++h) {
      auto qh = transpose(slice(qt, h * dk, (h + 1) * dk));  // Nq x dk
      auto kh = slice(kt, h * dk, (h + 1) * dk);              // dk x Nk
      auto vh = slice(vt, h * dk, (h + 1) * dk);              // dk x Nk
      auto a = softmax_rows(scale(matmul(qh, kh), inv));      // Nq x Nk
      if (weights) weights->push_back(a);
      ctx.push_back(matmul(vh, transpose(a)));  // dk x Nq
    }
    return transpose(concat(ctx));
  }

  MhcaTrace<T> trace(const Var<T>& s_p, const Var<T>& f_p) const {
    if (s_p.dim(0) != C || f_p.dim(0) != C)
      shape_fail("mhca: expected ", C, " channels, got ", shape_str(s_p.shape()), " and ", shape_str(f_p.shape()));
    if (s_p.dim(1) % patch_s || s_p.dim(2) % patch_s || f_p.dim(1) % patch_f || f_p.dim(2) % patch_f)
      shape_fail("mhca: patch sizes do not divide ", shape_str(s_p.shape()), " / ", shape_str(f_p.shape()));
    auto ge_s = embed_s(s_p);
    auto ge_f = embed_f(f_p);
    if (ge_s.dim(1) * ge_s.dim(2) != scene_tokens() || ge_f.dim(1) * ge_f.dim(2) != face_tokens())
      shape_fail("mhca: token grid does not match the positional embeddings");
    auto s_e = add(tokens(ge_s), param(pos_s));
    auto f_e = add(tokens(ge_f), param(pos_f));
    MhcaTrace<T> tr;
    tr.context = attend(norm_q(s_e), norm_kv(f_e), &tr.weights);
    auto x = add(s_e, wo(tr.context));
    x = add(x, ffn2(relu(ffn1(norm_ffn(x)))));
    auto grid = reshape(transpose(x), {C, ge_s.dim(1), ge_s.dim(2)});
    tr.output = add(s_p, resample_to(grid, s_p.dim(1), s_p.dim(2)));
    return tr;
  }

  Var<T> operator()(const Var<T>& s_p, const Var<T>& f_p) const { return trace(s_p, f_p).output; }

  void collect(ParamRefs<T>& out) {
    embed_f.collect(out);
    embed_s.collect(out);
    out.push_back(&pos_f);
    out.push_back(&pos_s);
    for (auto* n : {&norm_q, &norm_kv, &norm_ffn}) n->collect(out);
    for (auto* l : {&wq, &wk, &wv, &wo, &ffn1, &ffn2}) l->collect(out);
  }
};

/// Per-level fusion of scene and face maps into the scene geometry. "mhca"
/// is the full cross-attention block; the others are light alternatives
/// operating on the face map resampled to the scene size.
template <class T>
struct FusionUnit {
  std::string op = "mhca";
  std::optional<Mhca<T>> mhca;
  std::optional<Conv2d<T>> conv;          // conv, se, aff: 2C -> C or C -> C merge
  std::optional<Conv2d<T>> gate1, gate2;  // se / aff channel gates

  FusionUnit() = default;
  FusionUnit(const std::string& name, const std::string& fusion_op, int C, int heads, int pf, int ps,
             std::array<int, 2> face_hw, std::array<int, 2> scene_hw, bool bias, Rng& rng)
      : op(fusion_op) {
    const int r = std::max(1, C / 4);
    if (op == "mhca") {
      mhca.emplace(name + ".mhca", C, heads, pf, ps, face_hw, scene_hw, rng);
    } else if (op == "add") {
    } else if (op == "conv") {
      conv.emplace(name + ".conv", 2 * C, C, 3, ConvOptions::same(3), bias, rng, 1.0);
    } else if (op == "se") {
      conv.emplace(name + ".merge", 2 * C, C, 1, ConvOptions{}, bias, rng, 1.0);
      gate1.emplace(name + ".se1", C, r, 1, ConvOptions{}, true, rng);
      gate2.emplace(name + ".se2", r, C, 1, ConvOptions{}, true, rng, 1.0);
    } else if (op == "aff") {
      conv.emplace(name + ".local1", C, r, 1, ConvOptions{}, true, rng);
      gate1.emplace(name + ".local2", r, C, 1, ConvOptions{}, true, rng, 1.0);
      gate2.emplace(name + ".global", C, C, 1, ConvOptions{}, true, rng, 1.0);
    } else {
      throw std::invalid_argument("wnet.fusion_op must be one of mhca, add, conv, se, aff; got " + op);
    }
  }

  Var<T> operator()(const Var<T>& s, const Var<T>& f) const {
    if (mhca) return (*mhca)(s, f);
    if (s.dim(0) != f.dim(0)) shape_fail("fusion: channel widths differ");
    auto fr = resample_to(f, s.dim(1), s.dim(2));
    if (op == "add") return add(s, fr);
    if (op == "conv") return (*conv)(concat<T>({s, fr}));
    if (op == "se") {
      auto m = (*conv)(concat<T>({s, fr}));
      return mul(m, sigmoid((*gate2)(relu((*gate1)(global_avg_pool(m))))));
    }
    // aff: z = s + f; M = sigmoid(local(z) + global(z)); out = M s + (1 - M) f
    auto z = add(s, fr);
    auto local = (*gate1)(relu((*conv)(z)));
    auto m = sigmoid(add(local, (*gate2)(global_avg_pool(z))));
    return add(mul(s, m), mul(fr, one_minus(m)));
  }

  void collect(ParamRefs<T>& out) {
    if (mhca) mhca->collect(out);
    for (auto* c : {&conv, &gate1, &gate2})
      if (*c) (*c)->collect(out);
  }
};

/// ECA gate, two x2 transposed convolutions, dual-path channel adjustment
/// and a sigmoid: C x H/4 x W/4 -> 1 x H x W.
template <class T>
struct DecodingHead {
  Parameter<T> eca;  // 1 x 1 x 3 x 1 kernel along the channel axis
  ConvTranspose2d<T> up1, up2;
  Conv2d<T> ac_point, ac_spatial, ac_merge;

  DecodingHead() = default;
  DecodingHead(const std::string& name, int C, int hidden, bool bias, Rng& rng)
      : eca{name + ".eca", he_normal<T>({1, 1, 3, 1}, 3, rng, 1.0)},
        up1(name + ".up1", C, hidden, 4, 2, 1, bias, rng),
        up2(name + ".up2", hidden, hidden, 4, 2, 1, bias, rng),
        ac_point(name + ".ac_point", hidden, hidden / 2, 1, ConvOptions{}, bias, rng, 1.0),
        ac_spatial(name + ".ac_spatial", hidden, hidden / 2, 3, ConvOptions::same(3), bias, rng, 1.0),
        ac_merge(name + ".ac_merge", 2 * (hidden / 2), 1, 3, ConvOptions::same(3), bias, rng, 1.0) {}

  /// Channel gate sigma(conv1d_3(GAP(d))) shaped C x 1 x 1.
  Var<T> eca_gate(const Var<T>& d) const {
    const int C = d.dim(0);
    ConvOptions o;
    o.pad_h = 1;
    auto pooled = reshape(global_avg_pool(d), {1, C, 1});
    return reshape(sigmoid(conv2d<T>(pooled, param(eca), nullptr, o)), {C, 1, 1});
  }

  /// Everything after the ECA gate, returning pre-sigmoid logits.
  Var<T> logits(const Var<T>& gated) const {
    auto hr = up2(relu(up1(gated)));
    return ac_merge(concat<T>({ac_point(hr), ac_spatial(hr)}));
  }

  Var<T> operator()(const Var<T>& d) const { return sigmoid(logits(mul(d, eca_gate(d)))); }

  void collect(ParamRefs<T>& out) {
    out.push_back(&eca);
    up1.collect(out);
    up2.collect(out);
    ac_point.collect(out);
    ac_spatial.collect(out);
    ac_merge.collect(out);
  }
};

}  // namespace eraw
