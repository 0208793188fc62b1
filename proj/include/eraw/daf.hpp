#pragma once

#include <set>

#include "eraw/encoder.hpp"
#include "eraw/spectral.hpp"

namespace eraw {

/// Correlation between two C x th x tw tiles: (th*tw) x (th*tw) matrix whose
/// (p, q) entry is <x1[:, p], x2[:, q]> / sqrt(C).
template <class T>
Var<T> local_correlation(const Var<T>& x1, const Var<T>& x2) {
  if (x1.shape() != x2.shape() || x1.rank() != 3)
    shape_fail("local_correlation: tiles differ ", shape_str(x1.shape()), " vs ", shape_str(x2.shape()));
  const int C = x1.dim(0), P = x1.dim(1) * x1.dim(2);
  auto a = transpose(reshape(x1, {C, P}));
  auto b = reshape(x2, {C, P});
  return scale(matmul(a, b), T(1) / std::sqrt(T(C)));
}

/// Local pixel coordinates of a tile: channel 0 holds x (column), channel 1 y (row).
template <class T>
Tensor<T> pixel_grid(int th, int tw) {
  Tensor<T> g({2, th, tw});
  for (int y = 0; y < th; ++y)
    for (int x = 0; x < tw; ++x) {
      g.at(0, y, x) = T(x);
      g.at(1, y, x) = T(y);
    }
  return g;
}

/// Expected target coordinate under softmax(corr) minus the source coordinate.
template <class T>
Var<T> soft_displacement(const Var<T>& corr, const Tensor<T>& grid) {
  const int th = grid.dim(1), tw = grid.dim(2), P = th * tw;
  if (corr.shape() != Shape{P, P}) shape_fail("soft_displacement: corr ", shape_str(corr.shape()), " vs tile ", th, "x", tw);
  auto g = constant(grid.reshaped({2, P}));
  auto expected = transpose(matmul(softmax_rows(corr), transpose(g)));  // 2 x P
  return reshape(sub(expected, g), {2, th, tw});
}

/// Displacement field between two C x H x W maps over non-overlapping tiles.
/// Maps whose sides are not multiples of the tile are zero-padded, then the
/// field is cropped back.
template <class T>
Var<T> tiled_displacement(const Var<T>& x1, const Var<T>& x2, int tile) {
  if (x1.shape() != x2.shape() || x1.rank() != 3)
    shape_fail("daf: frame features differ ", shape_str(x1.shape()), " vs ", shape_str(x2.shape()));
  if (tile < 1) shape_fail("daf: tile must be positive");
  const int H = x1.dim(1), W = x1.dim(2);
  const int rows = (H + tile - 1) / tile, cols = (W + tile - 1) / tile;
  const int Hp = rows * tile, Wp = cols * tile;
  auto a = (Hp == H && Wp == W) ? x1 : pad2d(x1, 0, 0, Hp, Wp);
  auto b = (Hp == H && Wp == W) ? x2 : pad2d(x2, 0, 0, Hp, Wp);
  const Tensor<T> grid = pixel_grid<T>(tile, tile);
  std::vector<Var<T>> tiles;
  tiles.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      auto ta = crop2d(a, r * tile, c * tile, tile, tile);
      auto tb = crop2d(b, r * tile, c * tile, tile, tile);
      tiles.push_back(soft_displacement(local_correlation(ta, tb), grid));
    }
  auto d = stitch_tiles(tiles, rows, cols);
  return (Hp == H && Wp == W) ? d : crop2d(d, 0, 0, H, W);
}

/// Learned 1x1 mixing of the stacked real/imaginary spectrum. The per-bin
/// variant adds an element-wise gain over (channel, frequency).
template <class T>
struct FrequencyFilter {
  Parameter<T> mix;  // 2C x 2C x 1 x 1
  std::optional<Parameter<T>> gain;

  FrequencyFilter() = default;
  FrequencyFilter(const std::string& name, int channels, bool per_bin, int H, int W) {
    Tensor<T> eye({2 * channels, 2 * channels, 1, 1});
    for (int i = 0; i < 2 * channels; ++i) eye[static_cast<std::int64_t>(i) * 2 * channels + i] = T(1);
    mix = {name + ".mix", eye};
    if (per_bin) gain = Parameter<T>{name + ".gain", Tensor<T>({2 * channels, H, W}, T(1))};
  }

  Var<T> operator()(const Var<T>& e) const {
    auto z = conv2d<T>(dft2_stacked(e), param(mix), nullptr, ConvOptions{});
    if (gain) {
      if (gain->value.dim(1) != e.dim(1) || gain->value.dim(2) != e.dim(2))
        shape_fail("frequency_filter: per-bin gain sized for ", shape_str(gain->value.shape()));
      z = mul(z, param(*gain));
    }
    return idft2_real(z);
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&mix);
    if (gain) out.push_back(&*gain);
  }
};

/// Channel mean and max -> 7x7 conv -> sigmoid.
template <class T>
struct SpatialAttention {
  Conv2d<T> conv;

  SpatialAttention() = default;
  SpatialAttention(const std::string& name, bool bias, Rng& rng)
      : conv(name + ".conv", 2, 1, 7, ConvOptions::same(7), bias, rng, 1.0) {}

  Var<T> operator()(const Var<T>& x) const { return sigmoid(conv(concat<T>({channel_mean(x), channel_max(x)}))); }

  void collect(ParamRefs<T>& out) { conv.collect(out); }
};

/// Intermediates of one enhancement, kept for inspection and tests.
template <class T>
struct DafTrace {
  Var<T> displacement, embedding, filtered, mask, output;
};

/// Displacement -> embedding -> frequency filter -> spatial gate for one level.
template <class T>
struct DafUnit {
  int tile = 8;
  Conv2d<T> enc1, enc2;
  FrequencyFilter<T> filter;
  SpatialAttention<T> attention;

  DafUnit() = default;
  DafUnit(const std::string& name, const DafConfig& c, int H, int W, bool bias, Rng& rng) : tile(c.tile) {
    if (c.freq_filter != "shared" && c.freq_filter != "per_bin")
      throw std::invalid_argument("daf.freq_filter must be shared or per_bin, got " + c.freq_filter);
    const int E = c.embed_channels;
    enc1 = Conv2d<T>(name + ".enc1", 2, E, 3, ConvOptions::same(3), bias, rng, 1.0);
    enc2 = Conv2d<T>(name + ".enc2", E, E, 3, ConvOptions::same(3), bias, rng, 1.0);
    filter = FrequencyFilter<T>(name + ".filter", E, c.freq_filter == "per_bin", H, W);
    attention = SpatialAttention<T>(name + ".attention", bias, rng);
  }

  Var<T> encode_displacement(const Var<T>& d) const {
    if (d.rank() != 3 || d.dim(0) != 2) shape_fail("encode_displacement: expected 2 x H x W, got ", shape_str(d.shape()));
    return enc2(tanh(enc1(d)));
  }

  DafTrace<T> trace(const Var<T>& x_t, const Var<T>& x_prev) const {
    DafTrace<T> tr;
    tr.displacement = tiled_displacement(x_t, x_prev, tile);
    tr.embedding = encode_displacement(tr.displacement);
    tr.filtered = filter(tr.embedding);
    tr.mask = attention(tr.filtered);
    tr.output = add(x_t, mul(x_t, tr.mask));
    return tr;
  }

  Var<T> operator()(const Var<T>& x_t, const Var<T>& x_prev) const { return trace(x_t, x_prev).output; }

  void collect(ParamRefs<T>& out) {
    enc1.collect(out);
    enc2.collect(out);
    filter.collect(out);
    attention.collect(out);
  }
};

/// Per-level enhancement of one branch. Levels outside the enabled set
/// (always including level 4) pass through unchanged.
template <class T>
struct DafModule {
  std::array<std::optional<DafUnit<T>>, 4> units;

  DafModule() = default;
  DafModule(const std::string& name, const DafConfig& c, const std::array<Shape, 4>& level_shapes, bool bias,
            Rng& rng) {
    for (int lv : c.enabled_levels) {
      if (lv < 1 || lv > 4) throw std::invalid_argument(concat_msg("daf.enabled_levels: invalid level ", lv));
      if (lv == 4) continue;
      units[lv - 1].emplace(concat_msg(name, ".level", lv), c, level_shapes[lv - 1][1], level_shapes[lv - 1][2],
                            bias, rng);
    }
  }

  bool active(int level) const { return units[level - 1].has_value(); }

  Var<T> enhance(int level, const Var<T>& x_t, const Var<T>& x_prev) const {
    if (level < 1 || level > 4) shape_fail("daf: level must be in 1..4");
    if (x_t.shape() != x_prev.shape())
      shape_fail("daf: frame features differ ", shape_str(x_t.shape()), " vs ", shape_str(x_prev.shape()));
    if (!units[level - 1]) return x_t;
    return (*units[level - 1])(x_t, x_prev);
  }

  FeaturePyramid<T> operator()(const FeaturePyramid<T>& cur, const FeaturePyramid<T>& prev) const {
    FeaturePyramid<T> out;
    for (int i = 0; i < 4; ++i) out[i] = enhance(i + 1, cur[i], prev[i]);
    return out;
  }

  void collect(ParamRefs<T>& out) {
    for (auto& u : units)
      if (u) u->collect(out);
  }
};

}  // namespace eraw
