#pragma once

#include <numbers>

#include "eraw/ops.hpp"

namespace eraw {

/// Dense n x n cosine / sine tables of the DFT kernel exp(-2πi jk/n).
/// Both are symmetric, which the adjoint passes below rely on.
template <class T>
struct DftBasis {
  int n = 0;
  MatRM<T> cos, sin;

  explicit DftBasis(int size) : n(size), cos(size, size), sin(size, size) {
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const long long r = (static_cast<long long>(j) * k) % n;  // exact phase reduction
        const double th = 2.0 * std::numbers::pi * double(r) / double(n);
        cos(j, k) = T(std::cos(th));
        sin(j, k) = T(std::sin(th));
      }
  }
};

/// Complex 2-D spectrum as separate real and imaginary planes.
template <class T>
struct Spectrum {
  Tensor<T> re, im;
};

namespace detail {

// Forward 2-D DFT of one real H x W plane.
template <class T>
void dft2_plane(const DftBasis<T>& bh, const DftBasis<T>& bw, const T* x, T* re, T* im) {
  const int H = bh.n, W = bw.n;
  CMapRM<T> a(x, H, W);
  MatRM<T> ac = a * bw.cos, as = a * bw.sin;
  MapRM<T>(re, H, W).noalias() = bh.cos * ac - bh.sin * as;
  MapRM<T>(im, H, W).noalias() = -(bh.cos * as) - bh.sin * ac;
}

// Real part of the inverse 2-D DFT of (re + i im), including the 1/HW factor.
template <class T>
void idft2_real_plane(const DftBasis<T>& bh, const DftBasis<T>& bw, const T* re, const T* im, T* y) {
  const int H = bh.n, W = bw.n;
  CMapRM<T> r(re, H, W), i(im, H, W);
  MatRM<T> rc = r * bw.cos, rs = r * bw.sin, ic = i * bw.cos, is = i * bw.sin;
  MapRM<T>(y, H, W).noalias() = (bh.cos * rc - bh.sin * ic - bh.cos * is - bh.sin * rs) / T(H * W);
}

// Imaginary part of the inverse 2-D DFT.
template <class T>
void idft2_imag_plane(const DftBasis<T>& bh, const DftBasis<T>& bw, const T* re, const T* im, T* y) {
  const int H = bh.n, W = bw.n;
  CMapRM<T> r(re, H, W), i(im, H, W);
  MatRM<T> rc = r * bw.cos, rs = r * bw.sin, ic = i * bw.cos, is = i * bw.sin;
  MapRM<T>(y, H, W).noalias() = (bh.cos * ic + bh.sin * rc + bh.cos * rs - bh.sin * is) / T(H * W);
}

}  // namespace detail

/// Plain per-channel 2-D DFT of a real C x H x W map.
template <class T>
Spectrum<T> dft2(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 3, "dft2");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  DftBasis<T> bh(H), bw(W);
  Spectrum<T> s{Tensor<T>(x.shape()), Tensor<T>(x.shape())};
  for (int c = 0; c < C; ++c) {
    const std::int64_t off = static_cast<std::int64_t>(c) * H * W;
    detail::dft2_plane(bh, bw, x.data() + off, s.re.data() + off, s.im.data() + off);
  }
  return s;
}

/// Plain per-channel inverse 2-D DFT, both parts.
template <class T>
Spectrum<T> idft2(const Spectrum<T>& s) {
  const int C = s.re.dim(0), H = s.re.dim(1), W = s.re.dim(2);
  DftBasis<T> bh(H), bw(W);
  Spectrum<T> out{Tensor<T>(s.re.shape()), Tensor<T>(s.re.shape())};
  for (int c = 0; c < C; ++c) {
    const std::int64_t off = static_cast<std::int64_t>(c) * H * W;
    detail::idft2_real_plane(bh, bw, s.re.data() + off, s.im.data() + off, out.re.data() + off);
    detail::idft2_imag_plane(bh, bw, s.re.data() + off, s.im.data() + off, out.im.data() + off);
  }
  return out;
}

/// Differentiable DFT: C x H x W real map -> 2C x H x W with the real parts
/// in channels [0, C) and the imaginary parts in [C, 2C).
template <class T>
Var<T> dft2_stacked(const Var<T>& x) {
  detail::require_rank(x.shape(), 3, "dft2_stacked");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
  auto bh = std::make_shared<DftBasis<T>>(H);
  auto bw = std::make_shared<DftBasis<T>>(W);
  Tensor<T> out({2 * C, H, W});
  for (int c = 0; c < C; ++c)
    detail::dft2_plane(*bh, *bw, x.value().data() + c * HW, out.data() + c * HW, out.data() + (C + c) * HW);
  return make_result<T>(std::move(out), {x}, [bh, bw, C, H, W, HW](Node<T>& n) {
    T* gx = n.input_grad(0).data();
    const auto &ch = bh->cos, &sh = bh->sin, &cw = bw->cos, &sw = bw->sin;
    for (int c = 0; c < C; ++c) {
      CMapRM<T> gr(n.grad.data() + c * HW, H, W), gi(n.grad.data() + (C + c) * HW, H, W);
      MapRM<T>(gx + c * HW, H, W).noalias() +=
          ch * (gr * cw) - sh * (gr * sw) - ch * (gi * sw) - sh * (gi * cw);
    }
  });
}

/// Differentiable inverse DFT keeping the real part: 2C x H x W stacked
/// spectrum -> C x H x W.
template <class T>
Var<T> idft2_real(const Var<T>& z) {
  detail::require_rank(z.shape(), 3, "idft2_real");
  if (z.dim(0) % 2) shape_fail("idft2_real: channel count must be even, got ", z.dim(0));
  const int C = z.dim(0) / 2, H = z.dim(1), W = z.dim(2);
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
  auto bh = std::make_shared<DftBasis<T>>(H);
  auto bw = std::make_shared<DftBasis<T>>(W);
  Tensor<T> out({C, H, W});
  for (int c = 0; c < C; ++c)
    detail::idft2_real_plane(*bh, *bw, z.value().data() + c * HW, z.value().data() + (C + c) * HW,
                             out.data() + c * HW);
  return make_result<T>(std::move(out), {z}, [bh, bw, C, H, W, HW](Node<T>& n) {
    T* gz = n.input_grad(0).data();
    const auto &ch = bh->cos, &sh = bh->sin, &cw = bw->cos, &sw = bw->sin;
    const T inv = T(1) / T(HW);
    for (int c = 0; c < C; ++c) {
      CMapRM<T> gy(n.grad.data() + c * HW, H, W);
      MatRM<T> gc = gy * cw, gs = gy * sw;
      MapRM<T>(gz + c * HW, H, W).noalias() += (ch * gc - sh * gs) * inv;
      MapRM<T>(gz + (C + c) * HW, H, W).noalias() += -(sh * gc + ch * gs) * inv;
    }
  });
}

}  // namespace eraw
