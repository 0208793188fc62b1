#pragma once

#include <optional>

#include "eraw/conv.hpp"

namespace eraw {


/// Fan-in scaled normal initialization (He) for ReLU-fed weights.
template <class T>
Tensor<T> he_normal(Shape s, int fan_in, Rng& rng, double gain = 2.0) {
  return randn<T>(std::move(s), rng, std::sqrt(gain / double(std::max(fan_in, 1))));
}

template <class T>
struct Conv2d {
  Parameter<T> weight;
  std::optional<Parameter<T>> bias;
  ConvOptions opt;

  Conv2d() = default;
  Conv2d(const std::string& name, int cin, int cout, int k, ConvOptions o, bool with_bias, Rng& rng,
         double gain = 2.0)
      : Conv2d(name, cin, cout, k, k, o, with_bias, rng, gain) {}
  Conv2d(const std::string& name, int cin, int cout, int kh, int kw, ConvOptions o, bool with_bias, Rng& rng,
         double gain = 2.0)
      : opt(o) {
    if (cin % o.groups || cout % o.groups) shape_fail(name, ": groups must divide channels");
    const int cg = cin / o.groups;
    weight = {name + ".weight", he_normal<T>({cout, cg, kh, kw}, cg * kh * kw, rng, gain)};
    if (with_bias) bias = Parameter<T>{name + ".bias", Tensor<T>({cout})};
  }

  int out_channels() const { return weight.value.dim(0); }
  int in_channels() const { return weight.value.dim(1) * opt.groups; }

  Var<T> operator()(const Var<T>& x) const {
    auto w = param(weight);
    if (bias) {
      auto b = param(*bias);
      return conv2d(x, w, &b, opt);
    }
    return conv2d<T>(x, w, nullptr, opt);
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight);
    if (bias) out.push_back(&*bias);
  }
};

template <class T>
struct ConvTranspose2d {
  Parameter<T> weight;
  std::optional<Parameter<T>> bias;
  int stride = 2, pad = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int cin, int cout, int k, int stride_, int pad_, bool with_bias, Rng& rng)
      : stride(stride_), pad(pad_) {
    // Each output pixel receives (k/stride)^2 taps per input channel.
    const int taps = std::max(1, (k / stride) * (k / stride));
    weight = {name + ".weight", he_normal<T>({cin, cout, k, k}, cin * taps, rng)};
    if (with_bias) bias = Parameter<T>{name + ".bias", Tensor<T>({cout})};
  }

  Var<T> operator()(const Var<T>& x) const {
    auto w = param(weight);
    if (bias) {
      auto b = param(*bias);
      return conv_transpose2d(x, w, &b, stride, pad);
    }
    return conv_transpose2d<T>(x, w, nullptr, stride, pad);
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight);
    if (bias) out.push_back(&*bias);
  }
};

/// Token-wise affine map: N x Din -> N x Dout.
template <class T>
struct Linear {
  Parameter<T> weight;  // Din x Dout
  std::optional<Parameter<T>> bias;

  Linear() = default;
  Linear(const std::string& name, int din, int dout, bool with_bias, Rng& rng, double gain = 1.0) {
    weight = {name + ".weight", he_normal<T>({din, dout}, din, rng, gain)};
    if (with_bias) bias = Parameter<T>{name + ".bias", Tensor<T>({1, dout})};
  }

  Var<T> operator()(const Var<T>& x) const {
    auto y = matmul(x, param(weight));
    return bias ? add(y, param(*bias)) : y;
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight);
    if (bias) out.push_back(&*bias);
  }
};

/// GroupNorm over a C x H x W map with per-channel affine.
template <class T>
struct GroupNorm {
  int groups = 1;
  Parameter<T> gamma, beta;

  GroupNorm() = default;
  GroupNorm(const std::string& name, int channels, int max_groups = 32) {
    groups = std::min(max_groups, std::max(1, channels / 2));
    while (channels % groups) --groups;
    gamma = {name + ".gamma", Tensor<T>({channels, 1, 1}, T(1))};
    beta = {name + ".beta", Tensor<T>({channels, 1, 1})};
  }

  Var<T> operator()(const Var<T>& x) const {
    return add(mul(normalize_groups(x, groups), param(gamma)), param(beta));
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

/// LayerNorm over the feature axis of N x D tokens.
template <class T>
struct LayerNorm {
  Parameter<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim)
      : gamma{name + ".gamma", Tensor<T>({1, dim}, T(1))}, beta{name + ".beta", Tensor<T>({1, dim})} {}

  Var<T> operator()(const Var<T>& x) const {
    return add(mul(normalize_groups(x, x.dim(0)), param(gamma)), param(beta));
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

template <class T>
std::int64_t count_parameters(const ParamRefs<T>& ps) {
  std::int64_t n = 0;
  for (auto* p : ps) n += p->value.size();
  return n;
}

/// Zeroes every parameter in the list.
template <class T>
void zero_parameters(const ParamRefs<T>& ps) {
  for (auto* p : ps) p->value.fill(T(0));
}

}  // namespace eraw
