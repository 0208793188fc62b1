#pragma once

#include "eraw/ops.hpp"

namespace eraw {

struct ConvOptions {
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
  int dilation_h = 1, dilation_w = 1;
  int groups = 1;

  static ConvOptions same(int k, int dilation = 1) {
    ConvOptions o;
    o.pad_h = o.pad_w = dilation * (k - 1) / 2;
    o.dilation_h = o.dilation_w = dilation;
    return o;
  }
  static ConvOptions strided(int stride, int pad) {
    ConvOptions o;
    o.stride_h = o.stride_w = stride;
    o.pad_h = o.pad_w = pad;
    return o;
  }
};

namespace detail {

struct ConvGeom {
  int C, H, W;     // input channels handled by one group, input spatial size
  int kh, kw;
  ConvOptions o;
  int Ho, Wo;
  int K() const { return C * kh * kw; }
  int P() const { return Ho * Wo; }
};

inline ConvGeom conv_geom(int C, int H, int W, int kh, int kw, const ConvOptions& o) {
  ConvGeom g{C, H, W, kh, kw, o, 0, 0};
  g.Ho = (H + 2 * o.pad_h - o.dilation_h * (kh - 1) - 1) / o.stride_h + 1;
  g.Wo = (W + 2 * o.pad_w - o.dilation_w * (kw - 1) - 1) / o.stride_w + 1;
  if (g.Ho <= 0 || g.Wo <= 0) shape_fail("convolution output would be empty for input ", H, "x", W);
  return g;
}

inline bool is_pointwise(const ConvGeom& g) {
  return g.kh == 1 && g.kw == 1 && g.o.stride_h == 1 && g.o.stride_w == 1 && g.o.pad_h == 0 && g.o.pad_w == 0;
}

// x: C x H x W (one group's channels) -> col: (C*kh*kw) x (Ho*Wo)
template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const int P = g.P();
  for (int c = 0; c < g.C; ++c)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        T* row = col + static_cast<std::int64_t>((c * g.kh + ky) * g.kw + kx) * P;
        const T* xc = x + static_cast<std::int64_t>(c) * g.H * g.W;
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int y = oy * g.o.stride_h - g.o.pad_h + ky * g.o.dilation_h;
          T* dst = row + oy * g.Wo;
          if (y < 0 || y >= g.H) {
            std::fill(dst, dst + g.Wo, T(0));
            continue;
          }
          const T* src = xc + y * g.W;
          const int x0 = -g.o.pad_w + kx * g.o.dilation_w;
          if (g.o.stride_w == 1) {
            for (int ox = 0; ox < g.Wo; ++ox) {
              const int xx = x0 + ox;
              dst[ox] = (xx >= 0 && xx < g.W) ? src[xx] : T(0);
            }
          } else {
            for (int ox = 0; ox < g.Wo; ++ox) {
              const int xx = ox * g.o.stride_w + x0;
              dst[ox] = (xx >= 0 && xx < g.W) ? src[xx] : T(0);
            }
          }
        }
      }
}

// Adjoint of im2col: scatter-add col back into x.
template <class T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  const int P = g.P();
  for (int c = 0; c < g.C; ++c)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* row = col + static_cast<std::int64_t>((c * g.kh + ky) * g.kw + kx) * P;
        T* xc = x + static_cast<std::int64_t>(c) * g.H * g.W;
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int y = oy * g.o.stride_h - g.o.pad_h + ky * g.o.dilation_h;
          if (y < 0 || y >= g.H) continue;
          T* dst = xc + y * g.W;
          const T* src = row + oy * g.Wo;
          const int x0 = -g.o.pad_w + kx * g.o.dilation_w;
          for (int ox = 0; ox < g.Wo; ++ox) {
            const int xx = ox * g.o.stride_w + x0;
            if (xx >= 0 && xx < g.W) dst[xx] += src[ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation. x: Cin x H x W, w: Cout x (Cin/groups) x kh x kw,
/// optional bias of Cout elements (any shape).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, const ConvOptions& o) {
  detail::require_rank(x.shape(), 3, "conv2d input");
  detail::require_rank(w.shape(), 4, "conv2d weight");
  const int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Cout = w.dim(0), G = o.groups;
  if (Cin % G || Cout % G) shape_fail("conv2d: groups ", G, " must divide channels ", Cin, "->", Cout);
  if (w.dim(1) != Cin / G)
    shape_fail("conv2d: weight ", shape_str(w.shape()), " incompatible with ", Cin, " input channels");
  const int Cg = Cin / G, Cog = Cout / G;
  const auto g = detail::conv_geom(Cg, H, W, w.dim(2), w.dim(3), o);
  const int K = g.K(), P = g.P();
  if (bias && bias->size() != Cout) shape_fail("conv2d: bias size ", bias->size(), " != ", Cout);

  Tensor<T> out({Cout, g.Ho, g.Wo});
  const bool pw = detail::is_pointwise(g);
  std::vector<T> col(pw ? 0 : static_cast<std::size_t>(K) * P);
  for (int gi = 0; gi < G; ++gi) {
    const T* xg = x.value().data() + static_cast<std::int64_t>(gi) * Cg * H * W;
    const T* colp = xg;
    if (!pw) {
      detail::im2col(xg, g, col.data());
      colp = col.data();
    }
    MapRM<T>(out.data() + static_cast<std::int64_t>(gi) * Cog * P, Cog, P).noalias() =
        CMapRM<T>(w.value().data() + static_cast<std::int64_t>(gi) * Cog * K, Cog, K) * CMapRM<T>(colp, K, P);
  }
  if (bias)
    for (int c = 0; c < Cout; ++c) {
      const T b = bias->value()[c];
      T* oc = out.data() + static_cast<std::int64_t>(c) * P;
      for (int p = 0; p < P; ++p) oc[p] += b;
    }

  std::vector<Var<T>> ins{x, w};
  if (bias) ins.push_back(*bias);
  return make_result<T>(std::move(out), std::move(ins), [g, G, Cg, Cog, K, P, H, W, pw](Node<T>& n) {
    const auto& xv = n.input_value(0);
    const auto& wv = n.input_value(1);
    std::vector<T> col(pw ? 0 : static_cast<std::size_t>(K) * P);
    for (int gi = 0; gi < G; ++gi) {
      CMapRM<T> go(n.grad.data() + static_cast<std::int64_t>(gi) * Cog * P, Cog, P);
      const T* xg = xv.data() + static_cast<std::int64_t>(gi) * Cg * H * W;
      if (n.input_needs_grad(1)) {
        const T* colp = xg;
        if (!pw) {
          detail::im2col(xg, g, col.data());
          colp = col.data();
        }
        MapRM<T>(n.input_grad(1).data() + static_cast<std::int64_t>(gi) * Cog * K, Cog, K).noalias() +=
            go * CMapRM<T>(colp, K, P).transpose();
      }
      if (n.input_needs_grad(0)) {
        CMapRM<T> wg(wv.data() + static_cast<std::int64_t>(gi) * Cog * K, Cog, K);
        T* gx = n.input_grad(0).data() + static_cast<std::int64_t>(gi) * Cg * H * W;
        if (pw) {
          MapRM<T>(gx, K, P).noalias() += wg.transpose() * go;
        } else {
          MapRM<T>(col.data(), K, P).noalias() = wg.transpose() * go;
          detail::col2im(col.data(), g, gx);
        }
      }
    }
    if (n.inputs.size() > 2 && n.input_needs_grad(2)) {
      auto& gb = n.input_grad(2);
      for (int c = 0; c < G * Cog; ++c) {
        T s = 0;
        const T* gc = n.grad.data() + static_cast<std::int64_t>(c) * P;
        for (int p = 0; p < P; ++p) s += gc[p];
        gb[c] += s;
      }
    }
  });
}

/// Transposed convolution (adjoint of a strided conv). x: Cin x H x W,
/// w: Cin x Cout x k x k. Output size (H-1)*stride - 2*pad + k.
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, int stride, int pad) {
  detail::require_rank(x.shape(), 3, "conv_transpose2d input");
  detail::require_rank(w.shape(), 4, "conv_transpose2d weight");
  const int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (w.dim(0) != Cin) shape_fail("conv_transpose2d: weight ", shape_str(w.shape()), " vs ", Cin, " channels");
  const int Cout = w.dim(1), k = w.dim(2);
  const int Ho = (H - 1) * stride - 2 * pad + k, Wo = (W - 1) * stride - 2 * pad + w.dim(3);
  // Geometry of the forward conv that maps the output back onto the input.
  const auto g = detail::conv_geom(Cout, Ho, Wo, k, w.dim(3), ConvOptions::strided(stride, pad));
  if (g.Ho != H || g.Wo != W) shape_fail("conv_transpose2d: inconsistent geometry");
  const int K = g.K(), P = H * W;

  Tensor<T> out({Cout, Ho, Wo});
  std::vector<T> col(static_cast<std::size_t>(K) * P);
  MapRM<T>(col.data(), K, P).noalias() =
      CMapRM<T>(w.value().data(), Cin, K).transpose() * CMapRM<T>(x.value().data(), Cin, P);
  detail::col2im(col.data(), g, out.data());
  if (bias) {
    if (bias->size() != Cout) shape_fail("conv_transpose2d: bias size mismatch");
    for (int c = 0; c < Cout; ++c)
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(Ho) * Wo; ++p)
        out[static_cast<std::int64_t>(c) * Ho * Wo + p] += bias->value()[c];
  }
  std::vector<Var<T>> ins{x, w};
  if (bias) ins.push_back(*bias);
  return make_result<T>(std::move(out), std::move(ins), [g, Cin, Cout, K, P, Ho, Wo](Node<T>& n) {
    std::vector<T> col(static_cast<std::size_t>(K) * P);
    detail::im2col(n.grad.data(), g, col.data());
    CMapRM<T> gc(col.data(), K, P);
    if (n.input_needs_grad(0))
      MapRM<T>(n.input_grad(0).data(), Cin, P).noalias() += CMapRM<T>(n.input_value(1).data(), Cin, K) * gc;
    if (n.input_needs_grad(1))
      MapRM<T>(n.input_grad(1).data(), Cin, K).noalias() +=
          CMapRM<T>(n.input_value(0).data(), Cin, P) * gc.transpose();
    if (n.inputs.size() > 2 && n.input_needs_grad(2)) {
      auto& gb = n.input_grad(2);
      for (int c = 0; c < Cout; ++c) {
        T s = 0;
        for (std::int64_t p = 0; p < static_cast<std::int64_t>(Ho) * Wo; ++p)
          s += n.grad[static_cast<std::int64_t>(c) * Ho * Wo + p];
        gb[c] += s;
      }
    }
  });
}

}  // namespace eraw
