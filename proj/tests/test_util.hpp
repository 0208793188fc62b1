#pragma once

#include <gtest/gtest.h>

#include "eraw/gcs.hpp"
#include "eraw/gradcheck.hpp"
#include "oracles.hpp"

namespace testutil {

using eraw::Tensor;
using TD = Tensor<double>;
using VD = eraw::Var<double>;

inline eraw::Rng rng_for(int seed) { return eraw::Rng(static_cast<std::uint64_t>(seed) * 7919u + 13u); }

inline void expect_grad_ok(const eraw::GradcheckReport& r, double tol) {
  EXPECT_TRUE(r.pass(tol)) << r.name << " checked " << r.checked << " worst " << r.worst.where << " analytic "
                           << r.worst.analytic << " numeric " << r.worst.numeric << " rel " << r.max_rel_err
                           << (r.finite ? "" : " non-finite at " + r.non_finite_at);
}

/// Applies a Conv2d module through the loop oracle (square kernels, equal
/// stride/pad/dilation on both axes).
inline TD conv(const eraw::Conv2d<double>& m, const TD& x) {
  const TD* b = m.bias ? &m.bias->value : nullptr;
  return oracle::conv2d(x, m.weight.value, b, m.opt.stride_h, m.opt.pad_h, m.opt.dilation_h, m.opt.groups);
}

inline TD value(const VD& v) { return v.value(); }

inline TD apply_tanh(TD x) {
  for (auto& v : x.vec()) v = std::tanh(v);
  return x;
}

inline TD mul(TD a, const TD& b) {
  for (std::int64_t i = 0; i < a.size(); ++i) a[i] *= b[i];
  return a;
}

/// a (C x H x W) times a per-channel (C x 1 x 1) or per-pixel (1 x H x W) gate.
inline TD gate(const TD& a, const TD& g) {
  TD out = a;
  for (int c = 0; c < a.dim(0); ++c)
    for (int y = 0; y < a.dim(1); ++y)
      for (int x = 0; x < a.dim(2); ++x)
        out.at(c, y, x) *= g.dim(0) == 1 ? g.at(0, g.dim(1) == 1 ? 0 : y, g.dim(2) == 1 ? 0 : x) : g.at(c, 0, 0);
  return out;
}

inline TD slice_channels(const TD& x, int b, int e) {
  TD out({e - b, x.dim(1), x.dim(2)});
  for (int c = b; c < e; ++c)
    for (int y = 0; y < x.dim(1); ++y)
      for (int xx = 0; xx < x.dim(2); ++xx) out.at(c - b, y, xx) = x.at(c, y, xx);
  return out;
}

/// Resize as CLA and MHCA do: adaptive average pooling when shrinking,
/// bilinear when growing.
inline TD resample(const TD& x, int H, int W) {
  if (x.dim(1) == H && x.dim(2) == W) return x;
  if (H <= x.dim(1) && W <= x.dim(2)) return oracle::adaptive_avg_pool(x, H, W);
  return oracle::upsample_bilinear(x, H, W);
}

inline TD randn(eraw::Shape s, eraw::Rng& rng, double sd = 1.0) { return eraw::randn<double>(std::move(s), rng, sd); }

/// Makes every parameter nonzero (biases and gains start at 0 or 1) so that
/// oracle comparisons exercise every term.
inline void randomize(const eraw::ParamRefs<double>& ps, eraw::Rng& rng, double sd = 0.3) {
  std::normal_distribution<double> n(0.0, sd);
  for (auto* p : ps)
    for (auto& v : p->value.vec()) v += n(rng);
}

/// sigmoid(w_prev * mean(xp) + w_cur * mean(xc)) per channel.
inline TD ciu_gate_oracle(const eraw::Ciu<double>& u, const TD& xp, const TD& xc) {
  const auto mp = oracle::channel_means(xp), mc = oracle::channel_means(xc);
  TD g({xp.dim(0), 1, 1});
  for (int c = 0; c < xp.dim(0); ++c) g[c] = 1.0 / (1.0 + std::exp(-(u.w_prev.value[c] * mp[c] + u.w_cur.value[c] * mc[c])));
  return g;
}

inline TD ciu_oracle(const eraw::Ciu<double>& u, const TD& xp, const TD& xc) {
  return oracle::add(gate(conv(u.conv, oracle::cat(xp, xc)), ciu_gate_oracle(u, xp, xc)), xp);
}

}  // namespace testutil
