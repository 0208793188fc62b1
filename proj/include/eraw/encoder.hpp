#pragma once

#include <array>

#include "eraw/layers.hpp"
#include "eraw/model_config.hpp"

namespace eraw {

template <class T>
using FeaturePyramid = std::array<Var<T>, 4>;

/// Level i (1-based) of a pyramid over an H x W input has H / 2^(i+1) rows.
inline int spatial_divisor(int level) { return 1 << (level + 1); }

/// Validated geometry of both encoder branches.
struct PyramidSpec {
  std::array<int, 4> face_channels{};
  std::array<int, 4> scene_channels_raw{};
  std::array<int, 2> face_hw{}, scene_hw{};

  static PyramidSpec from(const EncoderConfig& c) {
    if (c.face_channels.size() != 4) shape_fail("encoder: face_channels needs 4 entries, got ", c.face_channels.size());
    if (c.face_blocks.size() != 4 || c.scene_blocks.size() != 4) shape_fail("encoder: block counts need 4 entries");
    PyramidSpec s;
    for (int i = 0; i < 4; ++i) {
      if (c.face_channels[i] < 2) shape_fail("encoder: face channel width must be >= 2");
      s.face_channels[i] = c.face_channels[i];
      s.scene_channels_raw[i] = 4 * c.face_channels[i];
    }
    s.face_hw = c.face_hw;
    s.scene_hw = c.scene_hw;
    for (int d : {s.face_hw[0], s.face_hw[1], s.scene_hw[0], s.scene_hw[1]})
      if (d <= 0 || d % 32) shape_fail("encoder: image sides must be positive multiples of 32, got ", d);
    return s;
  }

  Shape face_level_shape(int level) const {
    const int d = spatial_divisor(level);
    return {face_channels[level - 1], face_hw[0] / d, face_hw[1] / d};
  }
  Shape scene_level_shape(int level) const {
    const int d = spatial_divisor(level);
    return {face_channels[level - 1], scene_hw[0] / d, scene_hw[1] / d};
  }
};

/// Two 3x3 convolutions with a projection shortcut when the shape changes.
template <class T>
struct BasicBlock {
  Conv2d<T> conv1, conv2;
  GroupNorm<T> norm1, norm2;
  std::optional<Conv2d<T>> proj;
  std::optional<GroupNorm<T>> proj_norm;

  BasicBlock(const std::string& name, int cin, int cout, int stride, Rng& rng) {
    ConvOptions o = ConvOptions::strided(stride, 1);
    conv1 = Conv2d<T>(name + ".conv1", cin, cout, 3, o, false, rng);
    norm1 = GroupNorm<T>(name + ".norm1", cout);
    conv2 = Conv2d<T>(name + ".conv2", cout, cout, 3, ConvOptions::same(3), false, rng);
    norm2 = GroupNorm<T>(name + ".norm2", cout);
    if (stride != 1 || cin != cout) {
      proj = Conv2d<T>(name + ".proj", cin, cout, 1, ConvOptions::strided(stride, 0), false, rng);
      proj_norm = GroupNorm<T>(name + ".proj_norm", cout);
    }
  }

  Var<T> operator()(const Var<T>& x) const {
    auto y = norm2(conv2(relu(norm1(conv1(x)))));
    auto skip = proj ? (*proj_norm)((*proj)(x)) : x;
    return relu(add(y, skip));
  }

  void collect(ParamRefs<T>& out) {
    conv1.collect(out);
    norm1.collect(out);
    conv2.collect(out);
    norm2.collect(out);
    if (proj) {
      proj->collect(out);
      proj_norm->collect(out);
    }
  }
};

/// 1x1 reduce, 3x3, 1x1 expand (x4) with a projection shortcut.
template <class T>
struct Bottleneck {
  Conv2d<T> reduce, conv, expand;
  GroupNorm<T> n1, n2, n3;
  std::optional<Conv2d<T>> proj;
  std::optional<GroupNorm<T>> proj_norm;

  Bottleneck(const std::string& name, int cin, int mid, int stride, Rng& rng) {
    const int cout = 4 * mid;
    reduce = Conv2d<T>(name + ".reduce", cin, mid, 1, ConvOptions{}, false, rng);
    n1 = GroupNorm<T>(name + ".n1", mid);
    conv = Conv2d<T>(name + ".conv", mid, mid, 3, ConvOptions::strided(stride, 1), false, rng);
    n2 = GroupNorm<T>(name + ".n2", mid);
    expand = Conv2d<T>(name + ".expand", mid, cout, 1, ConvOptions{}, false, rng);
    n3 = GroupNorm<T>(name + ".n3", cout);
    if (stride != 1 || cin != cout) {
      proj = Conv2d<T>(name + ".proj", cin, cout, 1, ConvOptions::strided(stride, 0), false, rng);
      proj_norm = GroupNorm<T>(name + ".proj_norm", cout);
    }
  }

  Var<T> operator()(const Var<T>& x) const {
    auto y = relu(n1(reduce(x)));
    y = relu(n2(conv(y)));
    y = n3(expand(y));
    auto skip = proj ? (*proj_norm)((*proj)(x)) : x;
    return relu(add(y, skip));
  }

  void collect(ParamRefs<T>& out) {
    for (auto* c : {&reduce, &conv, &expand}) c->collect(out);
    for (auto* n : {&n1, &n2, &n3}) n->collect(out);
    if (proj) {
      proj->collect(out);
      proj_norm->collect(out);
    }
  }
};

/// Stride-2 stem followed by 3x3/2 max pooling: H x W -> H/4 x W/4.
template <class T>
struct Stem {
  Conv2d<T> conv;
  GroupNorm<T> norm;

  Stem() = default;
  Stem(const std::string& name, int cout, int k, Rng& rng)
      : conv(name + ".conv", 3, cout, k, ConvOptions::strided(2, k / 2), false, rng), norm(name + ".norm", cout) {}

  Var<T> pre_activation(const Var<T>& x) const { return conv(x); }
  Var<T> operator()(const Var<T>& x) const { return max_pool2d(relu(norm(conv(x))), 3, 2, 1); }

  void collect(ParamRefs<T>& out) {
    conv.collect(out);
    norm.collect(out);
  }
};

template <class T, class Block>
struct Backbone {
  Stem<T> stem;
  std::array<std::vector<Block>, 4> stages;

  Var<T> stem_pre_activation(const Var<T>& x) const { return stem.pre_activation(x); }

  FeaturePyramid<T> operator()(const Var<T>& x) const {
    FeaturePyramid<T> p;
    Var<T> h = stem(x);
    for (int s = 0; s < 4; ++s) {
      for (const auto& b : stages[s]) h = b(h);
      p[s] = h;
    }
    return p;
  }

  void collect(ParamRefs<T>& out) {
    stem.collect(out);
    for (auto& st : stages)
      for (auto& b : st) b.collect(out);
  }
};

/// Channel reduction unit: cat[conv1x1(a), conv3x3(conv1x1(a))] merged by a
/// 3x3 convolution to the target width.
template <class T>
struct ChannelReduce {
  Conv2d<T> direct, pre, spatial, merge;

  ChannelReduce() = default;
  ChannelReduce(const std::string& name, int cin, int cout, bool bias, Rng& rng) {
    if (cout < 1 || cin < cout) shape_fail(name, ": channel reduction needs C_in >= C_out >= 1, got ", cin, "->", cout);
    direct = Conv2d<T>(name + ".direct", cin, cout, 1, ConvOptions{}, bias, rng, 1.0);
    pre = Conv2d<T>(name + ".pre", cin, cout, 1, ConvOptions{}, bias, rng, 1.0);
    spatial = Conv2d<T>(name + ".spatial", cout, cout, 3, ConvOptions::same(3), bias, rng, 1.0);
    merge = Conv2d<T>(name + ".merge", 2 * cout, cout, 3, ConvOptions::same(3), bias, rng, 1.0);
  }

  Var<T> operator()(const Var<T>& a) const {
    if (a.dim(0) != direct.in_channels())
      shape_fail("channel_reduce: expected ", direct.in_channels(), " channels, got ", shape_str(a.shape()));
    return merge(concat<T>({direct(a), spatial(pre(a))}));
  }

  void collect(ParamRefs<T>& out) {
    for (auto* c : {&direct, &pre, &spatial, &merge}) c->collect(out);
  }
};

namespace detail {

template <class T>
void check_image(const Var<T>& img, std::array<int, 2> hw, const char* what) {
  const Shape want{3, hw[0], hw[1]};
  if (img.shape() != want)
    shape_fail(what, ": expected image ", shape_str(want), ", got ", shape_str(img.shape()));
  if (!all_finite(img.value())) throw std::invalid_argument(concat_msg(what, ": image contains non-finite values"));
}

}  // namespace detail

/// Maps a [0,1] RGB image to the standardized network input.
template <class T>
Var<T> standardize(const Var<T>& img, const EncoderConfig& c) {
  Tensor<T> sub_t({3, 1, 1}), mul_t({3, 1, 1});
  for (int ch = 0; ch < 3; ++ch) {
    sub_t[ch] = T(c.mean[ch]);
    mul_t[ch] = T(1.0 / c.stddev[ch]);
  }
  return mul(sub(img, constant(sub_t)), constant(mul_t));
}

template <class T>
struct FaceEncoder {
  PyramidSpec spec;
  EncoderConfig cfg;
  Backbone<T, BasicBlock<T>> net;

  FaceEncoder(const EncoderConfig& c, Rng& rng) : spec(PyramidSpec::from(c)), cfg(c) {
    net.stem = Stem<T>("face.stem", spec.face_channels[0], c.stem_kernel, rng);
    int cin = spec.face_channels[0];
    for (int s = 0; s < 4; ++s) {
      const int cout = spec.face_channels[s];
      for (int b = 0; b < c.face_blocks[s]; ++b) {
        net.stages[s].emplace_back(concat_msg("face.stage", s + 1, ".", b), cin, cout, (b == 0 && s > 0) ? 2 : 1, rng);
        cin = cout;
      }
    }
  }

  FeaturePyramid<T> encode(const Var<T>& img) const {
    detail::check_image(img, spec.face_hw, "encode_face");
    auto p = net(standardize(img, cfg));
    for (int i = 1; i <= 4; ++i)
      if (p[i - 1].shape() != spec.face_level_shape(i)) shape_fail("face encoder produced ", shape_str(p[i - 1].shape()));
    return p;
  }

  std::pair<FeaturePyramid<T>, FeaturePyramid<T>> operator()(const Var<T>& img_t, const Var<T>& img_prev) const {
    return {encode(img_t), encode(img_prev)};
  }

  void collect(ParamRefs<T>& out) { net.collect(out); }
};

template <class T>
struct SceneEncoder {
  PyramidSpec spec;
  EncoderConfig cfg;
  Backbone<T, Bottleneck<T>> net;
  std::array<ChannelReduce<T>, 4> cru;

  SceneEncoder(const EncoderConfig& c, bool bias, Rng& rng) : spec(PyramidSpec::from(c)), cfg(c) {
    net.stem = Stem<T>("scene.stem", spec.face_channels[0], c.stem_kernel, rng);
    int cin = spec.face_channels[0];
    for (int s = 0; s < 4; ++s) {
      const int mid = spec.face_channels[s];
      for (int b = 0; b < c.scene_blocks[s]; ++b) {
        net.stages[s].emplace_back(concat_msg("scene.stage", s + 1, ".", b), cin, mid, (b == 0 && s > 0) ? 2 : 1, rng);
        cin = 4 * mid;
      }
      cru[s] = ChannelReduce<T>(concat_msg("scene.cru", s + 1), spec.scene_channels_raw[s], spec.face_channels[s],
                                bias, rng);
    }
  }

  FeaturePyramid<T> encode_raw(const Var<T>& img) const {
    detail::check_image(img, spec.scene_hw, "encode_scene");
    return net(standardize(img, cfg));
  }

  FeaturePyramid<T> encode(const Var<T>& img) const {
    auto raw = encode_raw(img);
    FeaturePyramid<T> p;
    for (int i = 0; i < 4; ++i) {
      p[i] = cru[i](raw[i]);
      raw[i] = Var<T>();
      if (p[i].shape() != spec.scene_level_shape(i + 1)) shape_fail("scene encoder produced ", shape_str(p[i].shape()));
    }
    return p;
  }

  std::pair<FeaturePyramid<T>, FeaturePyramid<T>> operator()(const Var<T>& img_t, const Var<T>& img_prev) const {
    return {encode(img_t), encode(img_prev)};
  }

  void collect(ParamRefs<T>& out) {
    net.collect(out);
    for (auto& c : cru) c.collect(out);
  }
};

}  // namespace eraw
