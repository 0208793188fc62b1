#pragma once

#include "eraw/encoder.hpp"

namespace eraw {

/// Channel integration: a per-channel gate from the pooled inputs scales a
/// 3x3 conv of their concatenation; the result is added to the first input.
template <class T>
struct Ciu {
  Parameter<T> w_prev, w_cur;  // C x 1 x 1
  Conv2d<T> conv;

  Ciu() = default;
  Ciu(const std::string& name, int C, bool bias, Rng& rng)
      : w_prev{name + ".w_prev", Tensor<T>({C, 1, 1}, T(1))},
        w_cur{name + ".w_cur", Tensor<T>({C, 1, 1}, T(1))},
        conv(name + ".conv", 2 * C, C, 3, ConvOptions::same(3), bias, rng, 1.0) {}

  int channels() const { return conv.out_channels(); }

  Var<T> gate(const Var<T>& x_prev, const Var<T>& x_cur) const {
    return sigmoid(add(mul(global_avg_pool(x_prev), param(w_prev)), mul(global_avg_pool(x_cur), param(w_cur))));
  }

  Var<T> operator()(const Var<T>& x_prev, const Var<T>& x_cur) const {
    if (x_prev.shape() != x_cur.shape()) shape_fail("ciu: inputs differ ", shape_str(x_prev.shape()), " vs ", shape_str(x_cur.shape()));
    if (x_prev.dim(0) != channels()) shape_fail("ciu: built for ", channels(), " channels, got ", x_prev.dim(0));
    return add(mul(conv(concat<T>({x_prev, x_cur})), gate(x_prev, x_cur)), x_prev);
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&w_prev);
    out.push_back(&w_cur);
    conv.collect(out);
  }
};

/// Intra-level aggregation: grouped pointwise split into k groups, dilated
/// 3x3 branches, adjacent branches fused by CIU, merged by a 3x3 conv and
/// added to the input.
template <class T>
struct Ila {
  int level = 1, k = 2, group_channels = 0;
  std::vector<int> dilations;
  Conv2d<T> split;
  std::vector<Conv2d<T>> branches;
  std::vector<Ciu<T>> fuse;  // fuse[n-2] merges branches n-1 and n
  Conv2d<T> merge;

  Ila() = default;
  Ila(const std::string& name, int lv, int C, std::vector<int> rates, bool bias, Rng& rng)
      : level(lv), k(groups_per_level(lv)) {
    if (C % k) shape_fail(name, ": channel count ", C, " not divisible by k=", k, " at level ", lv);
    group_channels = C / k;
    if (rates.empty())
      for (int n = 0; n < k; ++n) rates.push_back(1 << n);
    if (static_cast<int>(rates.size()) != k) shape_fail(name, ": expected ", k, " dilation rates, got ", rates.size());
    dilations = rates;
    ConvOptions g;
    g.groups = k;
    split = Conv2d<T>(name + ".split", C, C, 1, g, bias, rng, 1.0);
    for (int n = 0; n < k; ++n)
      branches.emplace_back(concat_msg(name, ".branch", n + 1), group_channels, group_channels, 3,
                            ConvOptions::same(3, dilations[n]), bias, rng, 1.0);
    for (int n = 2; n <= k; ++n) fuse.emplace_back(concat_msg(name, ".ciu", n), group_channels, bias, rng);
    merge = Conv2d<T>(name + ".merge", C, C, 3, ConvOptions::same(3), bias, rng, 1.0);
  }

  /// The k dilated branch outputs before fusion.
  std::vector<Var<T>> branch_outputs(const Var<T>& f_d) const {
    auto s = split(f_d);
    std::vector<Var<T>> out;
    for (int n = 0; n < k; ++n)
      out.push_back(branches[n](slice(s, n * group_channels, (n + 1) * group_channels)));
    return out;
  }

  Var<T> operator()(const Var<T>& f_d) const {
    if (f_d.rank() != 3 || f_d.dim(0) != k * group_channels)
      shape_fail("ila level ", level, ": expected ", k * group_channels, " channels, got ", shape_str(f_d.shape()));
    auto b = branch_outputs(f_d);
    std::vector<Var<T>> parts{b[0]};
    for (int n = 1; n < k; ++n) parts.push_back(fuse[n - 1](b[n - 1], b[n]));
    return add(f_d, merge(concat(parts)));
  }

  void collect(ParamRefs<T>& out) {
    split.collect(out);
    for (auto& b : branches) b.collect(out);
    for (auto& f : fuse) f.collect(out);
    merge.collect(out);
  }
};

/// Cross-level alignment: each anchor level receives its resampled,
/// 1x1-projected neighbours (level 1: {2}; 2,3: {i-1, i+1}; 4: {3}).
template <class T>
struct Cla {
  // proj[i][0] maps level i-1 into level i, proj[i][1] maps level i+1.
  std::array<std::array<std::optional<Conv2d<T>>, 2>, 4> proj;

  Cla() = default;
  Cla(const std::string& name, const std::array<int, 4>& channels, bool bias, Rng& rng) {
    for (int i = 0; i < 4; ++i) {
      if (i > 0)
        proj[i][0].emplace(concat_msg(name, ".l", i + 1, "_from", i), channels[i - 1], channels[i], 1, ConvOptions{},
                           bias, rng, 1.0);
      if (i < 3)
        proj[i][1].emplace(concat_msg(name, ".l", i + 1, "_from", i + 2), channels[i + 1], channels[i], 1,
                           ConvOptions{}, bias, rng, 1.0);
    }
  }

  static std::vector<int> neighbours(int level) {
    if (level == 1) return {2};
    if (level == 4) return {3};
    return {level - 1, level + 1};
  }

  FeaturePyramid<T> operator()(const FeaturePyramid<T>& m) const {
    for (int i = 0; i < 4; ++i)
      if (!m[i].defined()) shape_fail("cla: pyramid level ", i + 1, " missing");
    FeaturePyramid<T> out;
    for (int i = 0; i < 4; ++i) {
      Var<T> acc = m[i];
      const int H = m[i].dim(1), W = m[i].dim(2);
      for (int side = 0; side < 2; ++side) {
        if (!proj[i][side]) continue;
        const int j = side == 0 ? i - 1 : i + 1;
        acc = add(acc, (*proj[i][side])(resample_to(m[j], H, W)));
      }
      out[i] = acc;
    }
    return out;
  }

  void collect(ParamRefs<T>& out) {
    for (auto& lv : proj)
      for (auto& p : lv)
        if (p) p->collect(out);
  }
};

/// ILA on every level followed by CLA across levels (face branch only).
template <class T>
struct GcsModule {
  std::array<Ila<T>, 4> ila;
  Cla<T> cla;

  GcsModule() = default;
  GcsModule(const std::string& name, const std::array<int, 4>& channels, const GcsConfig& c, bool bias, Rng& rng) {
    if (!c.dilations.empty() && c.dilations.size() != 4) shape_fail("gcs.dilations must list 4 levels");
    for (int i = 0; i < 4; ++i)
      ila[i] = Ila<T>(concat_msg(name, ".ila", i + 1), i + 1, channels[i],
                      c.dilations.empty() ? std::vector<int>{} : c.dilations[i], bias, rng);
    cla = Cla<T>(name + ".cla", channels, bias, rng);
  }

  FeaturePyramid<T> intra(const FeaturePyramid<T>& f) const {
    FeaturePyramid<T> m;
    for (int i = 0; i < 4; ++i) m[i] = ila[i](f[i]);
    return m;
  }

  FeaturePyramid<T> operator()(const FeaturePyramid<T>& f) const { return cla(intra(f)); }

  void collect(ParamRefs<T>& out) {
    for (auto& l : ila) l.collect(out);
    cla.collect(out);
  }
};

}  // namespace eraw
