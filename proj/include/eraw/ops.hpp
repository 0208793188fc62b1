#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>

#include "eraw/autograd.hpp"

namespace eraw {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapRM = Eigen::Map<const MatRM<T>>;

namespace detail {

// Calls fn(ia, ib) for every flat index ia of `as` and the matching flat
// index ib of `bs`, where every dim of bs is either 1 or equal to as.
template <class Fn>
void for_each_broadcast(const Shape& as, const Shape& bs, Fn&& fn) {
  if (as.size() != bs.size()) shape_fail("broadcast rank mismatch ", shape_str(as), " vs ", shape_str(bs));
  const int r = static_cast<int>(as.size());
  for (int i = 0; i < r; ++i)
    if (bs[i] != 1 && bs[i] != as[i]) shape_fail("cannot broadcast ", shape_str(bs), " to ", shape_str(as));
  if (as == bs) {
    const std::int64_t n = shape_numel(as);
    for (std::int64_t i = 0; i < n; ++i) fn(i, i);
    return;
  }
  std::vector<std::int64_t> bstride(r, 0);
  std::int64_t s = 1;
  for (int i = r - 1; i >= 0; --i) {
    bstride[i] = bs[i] == 1 ? 0 : s;
    s *= bs[i];
  }
  // Innermost dim handled as a run for speed.
  const int inner = as[r - 1];
  const std::int64_t inner_stride = bstride[r - 1];
  std::vector<int> idx(r, 0);
  const std::int64_t outer = shape_numel(as) / std::max(inner, 1);
  std::int64_t ia = 0;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::int64_t ib = 0;
    for (int i = 0; i < r - 1; ++i) ib += idx[i] * bstride[i];
    for (int j = 0; j < inner; ++j) fn(ia++, ib + j * inner_stride);
    for (int i = r - 2; i >= 0; --i) {
      if (++idx[i] < as[i]) break;
      idx[i] = 0;
    }
  }
}

inline void require_rank(const Shape& s, int r, const char* op) {
  if (static_cast<int>(s.size()) != r) shape_fail(op, ": expected rank ", r, ", got ", shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

/// a + b, with b broadcast to a's shape.
template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  T* o = out.data();
  detail::for_each_broadcast(a.shape(), b.shape(), [&](std::int64_t i, std::int64_t j) { o[i] += bv[j]; });
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.input_needs_grad(0)) n.input_grad(0) += n.grad;
    if (n.input_needs_grad(1)) {
      auto& gb = n.input_grad(1);
      T* g = gb.data();
      const T* go = n.grad.data();
      detail::for_each_broadcast(n.value.shape(), gb.shape(), [&](std::int64_t i, std::int64_t j) { g[j] += go[i]; });
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  T* o = out.data();
  detail::for_each_broadcast(a.shape(), b.shape(), [&](std::int64_t i, std::int64_t j) { o[i] -= bv[j]; });
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.input_needs_grad(0)) n.input_grad(0) += n.grad;
    if (n.input_needs_grad(1)) {
      auto& gb = n.input_grad(1);
      T* g = gb.data();
      const T* go = n.grad.data();
      detail::for_each_broadcast(n.value.shape(), gb.shape(), [&](std::int64_t i, std::int64_t j) { g[j] -= go[i]; });
    }
  });
}

/// a * b (Hadamard), with b broadcast to a's shape.
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  T* o = out.data();
  detail::for_each_broadcast(a.shape(), b.shape(), [&](std::int64_t i, std::int64_t j) { o[i] *= bv[j]; });
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const T* go = n.grad.data();
    const T* av = n.input_value(0).data();
    const T* bv = n.input_value(1).data();
    const Shape& bs = n.input_value(1).shape();
    if (n.input_needs_grad(0)) {
      T* g = n.input_grad(0).data();
      detail::for_each_broadcast(n.value.shape(), bs, [&](std::int64_t i, std::int64_t j) { g[i] += go[i] * bv[j]; });
    }
    if (n.input_needs_grad(1)) {
      T* g = n.input_grad(1).data();
      detail::for_each_broadcast(n.value.shape(), bs, [&](std::int64_t i, std::int64_t j) { g[j] += go[i] * av[i]; });
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  out *= s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v += s;
  return make_result<T>(std::move(out), {a}, [](Node<T>& n) { n.input_grad(0) += n.grad; });
}

template <class T, class F, class DF>
Var<T> unary(const Var<T>& a, F f, DF df_from_x_y) {
  Tensor<T> out(a.shape());
  const auto& x = a.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result<T>(std::move(out), {a}, [df_from_x_y](Node<T>& n) {
    auto& g = n.input_grad(0);
    const auto& x = n.input_value(0);
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * df_from_x_y(x[i], n.value[i]);
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(
      a, [](T x) { return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return unary(a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

/// 1 - a
template <class T>
Var<T> one_minus(const Var<T>& a) {
  return add_scalar(scale(a, T(-1)), T(1));
}

// ---------------------------------------------------------------- reductions

template <class T>
Var<T> sum_all(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().vec()) s += v;
  return make_result<T>(Tensor<T>({1}, {s}), {a}, [](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (auto& v : g.vec()) v += n.grad[0];
  });
}

/// Σ a ⊙ r for a constant weight tensor r (random projections in gradchecks).
template <class T>
Var<T> weighted_sum(const Var<T>& a, const Tensor<T>& r) {
  if (r.shape() != a.shape()) shape_fail("weighted_sum shape mismatch");
  T s = 0;
  for (std::int64_t i = 0; i < r.size(); ++i) s += a.value()[i] * r[i];
  return make_result<T>(Tensor<T>({1}, {s}), {a}, [r](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[0] * r[i];
  });
}

/// Mean over channels: C x H x W -> 1 x H x W.
template <class T>
Var<T> channel_mean(const Var<T>& a) {
  detail::require_rank(a.shape(), 3, "channel_mean");
  const int C = a.dim(0), HW = a.dim(1) * a.dim(2);
  Tensor<T> out({1, a.dim(1), a.dim(2)});
  const T* x = a.value().data();
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < HW; ++p) out[p] += x[c * HW + p];
  out *= T(1) / T(C);
  return make_result<T>(std::move(out), {a}, [C, HW](Node<T>& n) {
    T* g = n.input_grad(0).data();
    const T inv = T(1) / T(C);
    for (int c = 0; c < C; ++c)
      for (int p = 0; p < HW; ++p) g[c * HW + p] += n.grad[p] * inv;
  });
}

/// Max over channels: C x H x W -> 1 x H x W (gradient routed to the first maximizer).
template <class T>
Var<T> channel_max(const Var<T>& a) {
  detail::require_rank(a.shape(), 3, "channel_max");
  const int C = a.dim(0), HW = a.dim(1) * a.dim(2);
  Tensor<T> out({1, a.dim(1), a.dim(2)});
  std::vector<int> arg(HW, 0);
  const T* x = a.value().data();
  for (int p = 0; p < HW; ++p) {
    T best = x[p];
    for (int c = 1; c < C; ++c)
      if (x[c * HW + p] > best) {
        best = x[c * HW + p];
        arg[p] = c;
      }
    out[p] = best;
  }
  return make_result<T>(std::move(out), {a}, [arg = std::move(arg), HW](Node<T>& n) {
    T* g = n.input_grad(0).data();
    for (int p = 0; p < HW; ++p) g[arg[p] * HW + p] += n.grad[p];
  });
}

/// Global average pooling: C x H x W -> C x 1 x 1.
template <class T>
Var<T> global_avg_pool(const Var<T>& a) {
  detail::require_rank(a.shape(), 3, "global_avg_pool");
  const int C = a.dim(0), HW = a.dim(1) * a.dim(2);
  Tensor<T> out({C, 1, 1});
  const T* x = a.value().data();
  for (int c = 0; c < C; ++c) {
    T s = 0;
    for (int p = 0; p < HW; ++p) s += x[c * HW + p];
    out[c] = s / T(HW);
  }
  return make_result<T>(std::move(out), {a}, [C, HW](Node<T>& n) {
    T* g = n.input_grad(0).data();
    for (int c = 0; c < C; ++c) {
      const T v = n.grad[c] / T(HW);
      for (int p = 0; p < HW; ++p) g[c * HW + p] += v;
    }
  });
}

// ---------------------------------------------------------------- shape ops

template <class T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tensor<T> out = a.value().reshaped(std::move(s));
  return make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

/// N x M -> M x N
template <class T>
Var<T> transpose(const Var<T>& a) {
  detail::require_rank(a.shape(), 2, "transpose");
  const int N = a.dim(0), M = a.dim(1);
  Tensor<T> out({M, N});
  MapRM<T>(out.data(), M, N) = CMapRM<T>(a.value().data(), N, M).transpose();
  return make_result<T>(std::move(out), {a}, [N, M](Node<T>& n) {
    MapRM<T>(n.input_grad(0).data(), N, M) += CMapRM<T>(n.grad.data(), M, N).transpose();
  });
}

/// Concatenation along the leading axis.
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) shape_fail("concat of zero tensors");
  Shape s = parts[0].shape();
  int lead = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != s.size()) shape_fail("concat rank mismatch");
    for (std::size_t i = 1; i < s.size(); ++i)
      if (ps[i] != s[i]) shape_fail("concat trailing dims mismatch ", shape_str(ps), " vs ", shape_str(s));
    lead += ps[0];
  }
  s[0] = lead;
  Tensor<T> out(s);
  std::int64_t off = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().data(), p.value().data() + p.size(), out.data() + off);
    off += p.size();
  }
  return make_result<T>(std::move(out), parts, [offsets = std::move(offsets)](Node<T>& n) {
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!n.input_needs_grad(k)) continue;
      auto& g = n.input_grad(k);
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[offsets[k] + i];
    }
  });
}

/// Rows [begin, end) of the leading axis.
template <class T>
Var<T> slice(const Var<T>& a, int begin, int end) {
  if (begin < 0 || end > a.dim(0) || begin >= end)
    shape_fail("slice [", begin, ",", end, ") out of range for ", shape_str(a.shape()));
  Shape s = a.shape();
  const std::int64_t inner = a.size() / s[0];
  s[0] = end - begin;
  Tensor<T> out(s);
  std::copy(a.value().data() + begin * inner, a.value().data() + end * inner, out.data());
  return make_result<T>(std::move(out), {a}, [begin, inner](Node<T>& n) {
    T* g = n.input_grad(0).data() + begin * inner;
    for (std::int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

/// Places a C x H x W map at (top, left) inside a zero C x Hn x Wn canvas.
template <class T>
Var<T> pad2d(const Var<T>& a, int top, int left, int Hn, int Wn) {
  detail::require_rank(a.shape(), 3, "pad2d");
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (top < 0 || left < 0 || top + H > Hn || left + W > Wn) shape_fail("pad2d target too small");
  Tensor<T> out({C, Hn, Wn});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) out.at(c, h + top, w + left) = a.value().at(c, h, w);
  return make_result<T>(std::move(out), {a}, [=](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) g.at(c, h, w) += n.grad.at(c, h + top, w + left);
  });
}

/// Window [top, top+h) x [left, left+w) of a C x H x W map.
template <class T>
Var<T> crop2d(const Var<T>& a, int top, int left, int h, int w) {
  detail::require_rank(a.shape(), 3, "crop2d");
  const int C = a.dim(0);
  if (top < 0 || left < 0 || top + h > a.dim(1) || left + w > a.dim(2)) shape_fail("crop2d window out of range");
  Tensor<T> out({C, h, w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = a.value().at(c, y + top, x + left);
  return make_result<T>(std::move(out), {a}, [=](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) g.at(c, y + top, x + left) += n.grad.at(c, y, x);
  });
}

/// Reassembles a rows x cols grid of equally sized C x th x tw tiles
/// (row-major tile order) into one C x (rows*th) x (cols*tw) map.
template <class T>
Var<T> stitch_tiles(const std::vector<Var<T>>& tiles, int rows, int cols) {
  if (static_cast<int>(tiles.size()) != rows * cols) shape_fail("stitch_tiles: expected ", rows * cols, " tiles");
  const int C = tiles[0].dim(0), th = tiles[0].dim(1), tw = tiles[0].dim(2);
  Tensor<T> out({C, rows * th, cols * tw});
  for (int t = 0; t < rows * cols; ++t) {
    if (tiles[t].shape() != tiles[0].shape()) shape_fail("stitch_tiles: ragged tiles");
    const int r0 = (t / cols) * th, c0 = (t % cols) * tw;
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x) out.at(c, r0 + y, c0 + x) = tiles[t].value().at(c, y, x);
  }
  return make_result<T>(std::move(out), tiles, [=](Node<T>& n) {
    for (int t = 0; t < rows * cols; ++t) {
      if (!n.input_needs_grad(t)) continue;
      auto& g = n.input_grad(t);
      const int r0 = (t / cols) * th, c0 = (t % cols) * tw;
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < th; ++y)
          for (int x = 0; x < tw; ++x) g.at(c, y, x) += n.grad.at(c, r0 + y, c0 + x);
    }
  });
}

// ---------------------------------------------------------------- linear algebra

/// A (N x K) · B (K x M)
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  const int N = a.dim(0), K = a.dim(1), M = b.dim(1);
  if (b.dim(0) != K) shape_fail("matmul inner dims ", shape_str(a.shape()), " x ", shape_str(b.shape()));
  Tensor<T> out({N, M});
  MapRM<T>(out.data(), N, M).noalias() = CMapRM<T>(a.value().data(), N, K) * CMapRM<T>(b.value().data(), K, M);
  return make_result<T>(std::move(out), {a, b}, [N, K, M](Node<T>& n) {
    CMapRM<T> g(n.grad.data(), N, M);
    if (n.input_needs_grad(0))
      MapRM<T>(n.input_grad(0).data(), N, K).noalias() += g * CMapRM<T>(n.input_value(1).data(), K, M).transpose();
    if (n.input_needs_grad(1))
      MapRM<T>(n.input_grad(1).data(), K, M).noalias() += CMapRM<T>(n.input_value(0).data(), N, K).transpose() * g;
  });
}

template <class T>
void softmax_rows_inplace(T* x, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    T* row = x + static_cast<std::int64_t>(r) * cols;
    T m = *std::max_element(row, row + cols);
    T s = 0;
    for (int c = 0; c < cols; ++c) s += (row[c] = std::exp(row[c] - m));
    for (int c = 0; c < cols; ++c) row[c] /= s;
  }
}

/// Row-wise softmax of an N x M matrix.
template <class T>
Var<T> softmax_rows(const Var<T>& a) {
  detail::require_rank(a.shape(), 2, "softmax_rows");
  const int N = a.dim(0), M = a.dim(1);
  Tensor<T> out = a.value();
  softmax_rows_inplace(out.data(), N, M);
  return make_result<T>(std::move(out), {a}, [N, M](Node<T>& n) {
    T* g = n.input_grad(0).data();
    for (int r = 0; r < N; ++r) {
      const T* y = n.value.data() + static_cast<std::int64_t>(r) * M;
      const T* go = n.grad.data() + static_cast<std::int64_t>(r) * M;
      T dot = 0;
      for (int c = 0; c < M; ++c) dot += go[c] * y[c];
      for (int c = 0; c < M; ++c) g[static_cast<std::int64_t>(r) * M + c] += y[c] * (go[c] - dot);
    }
  });
}

/// Standardizes each of `groups` contiguous blocks to zero mean, unit
/// variance. Covers GroupNorm on C x H x W maps and LayerNorm on N x D rows.
template <class T>
Var<T> normalize_groups(const Var<T>& a, int groups, T eps = T(1e-5)) {
  if (groups <= 0 || a.size() % groups != 0) shape_fail("normalize_groups: ", groups, " does not divide ", a.size());
  const std::int64_t m = a.size() / groups;
  Tensor<T> out(a.shape());
  std::vector<T> inv_std(groups);
  const T* x = a.value().data();
  for (int g = 0; g < groups; ++g) {
    const T* xg = x + g * m;
    double mean = 0, var = 0;
    for (std::int64_t i = 0; i < m; ++i) mean += xg[i];
    mean /= double(m);
    for (std::int64_t i = 0; i < m; ++i) var += (xg[i] - mean) * (xg[i] - mean);
    var /= double(m);
    const T is = T(1.0 / std::sqrt(var + double(eps)));
    inv_std[g] = is;
    for (std::int64_t i = 0; i < m; ++i) out[g * m + i] = (xg[i] - T(mean)) * is;
  }
  return make_result<T>(std::move(out), {a}, [groups, m, inv_std = std::move(inv_std)](Node<T>& n) {
    T* gx = n.input_grad(0).data();
    for (int g = 0; g < groups; ++g) {
      const T* go = n.grad.data() + g * m;
      const T* y = n.value.data() + g * m;
      T mg = 0, mgy = 0;
      for (std::int64_t i = 0; i < m; ++i) {
        mg += go[i];
        mgy += go[i] * y[i];
      }
      mg /= T(m);
      mgy /= T(m);
      for (std::int64_t i = 0; i < m; ++i) gx[g * m + i] += inv_std[g] * (go[i] - mg - y[i] * mgy);
    }
  });
}

// ---------------------------------------------------------------- pooling / resampling

template <class T>
Var<T> max_pool2d(const Var<T>& a, int k, int stride, int pad) {
  detail::require_rank(a.shape(), 3, "max_pool2d");
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  const int Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  Tensor<T> out({C, Ho, Wo});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(out.size()));
  const T* x = a.value().data();
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t bi = -1;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int y = oy * stride - pad + ky, xx = ox * stride - pad + kx;
            if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
            const std::int64_t i = (static_cast<std::int64_t>(c) * H + y) * W + xx;
            if (x[i] > best) {
              best = x[i];
              bi = i;
            }
          }
        const std::int64_t o = (static_cast<std::int64_t>(c) * Ho + oy) * Wo + ox;
        out[o] = best;
        arg[o] = bi;
      }
  return make_result<T>(std::move(out), {a}, [arg = std::move(arg)](Node<T>& n) {
    T* g = n.input_grad(0).data();
    for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += n.grad[static_cast<std::int64_t>(o)];
  });
}

namespace detail {
struct PoolWindow {
  int begin, end;
};
inline std::vector<PoolWindow> adaptive_windows(int in, int out) {
  std::vector<PoolWindow> w(out);
  for (int i = 0; i < out; ++i) {
    w[i].begin = (i * in) / out;
    w[i].end = ((i + 1) * in + out - 1) / out;
  }
  return w;
}

struct LerpTap {
  int i0, i1;
  double l1;  // weight of i1; i0 gets 1 - l1
};
// Half-pixel-centre convention (align_corners = false).
inline std::vector<LerpTap> bilinear_taps(int in, int out) {
  std::vector<LerpTap> taps(out);
  const double s = double(in) / double(out);
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * s - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[i] = {i0, i1, src - i0};
  }
  return taps;
}
}  // namespace detail

/// Adaptive average pooling of C x H x W to C x Ho x Wo.
template <class T>
Var<T> adaptive_avg_pool2d(const Var<T>& a, int Ho, int Wo) {
  detail::require_rank(a.shape(), 3, "adaptive_avg_pool2d");
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  auto wy = detail::adaptive_windows(H, Ho), wx = detail::adaptive_windows(W, Wo);
  Tensor<T> out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        T s = 0;
        for (int y = wy[oy].begin; y < wy[oy].end; ++y)
          for (int x = wx[ox].begin; x < wx[ox].end; ++x) s += a.value().at(c, y, x);
        out.at(c, oy, ox) = s / T((wy[oy].end - wy[oy].begin) * (wx[ox].end - wx[ox].begin));
      }
  return make_result<T>(std::move(out), {a}, [=](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const T v = n.grad.at(c, oy, ox) / T((wy[oy].end - wy[oy].begin) * (wx[ox].end - wx[ox].begin));
          for (int y = wy[oy].begin; y < wy[oy].end; ++y)
            for (int x = wx[ox].begin; x < wx[ox].end; ++x) g.at(c, y, x) += v;
        }
  });
}

/// Bilinear resize of C x H x W to C x Ho x Wo (half-pixel centres).
template <class T>
Var<T> upsample_bilinear(const Var<T>& a, int Ho, int Wo) {
  detail::require_rank(a.shape(), 3, "upsample_bilinear");
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  auto ty = detail::bilinear_taps(H, Ho), tx = detail::bilinear_taps(W, Wo);
  Tensor<T> out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy) {
      const auto& py = ty[oy];
      for (int ox = 0; ox < Wo; ++ox) {
        const auto& px = tx[ox];
        const auto& v = a.value();
        const double top = (1 - px.l1) * v.at(c, py.i0, px.i0) + px.l1 * v.at(c, py.i0, px.i1);
        const double bot = (1 - px.l1) * v.at(c, py.i1, px.i0) + px.l1 * v.at(c, py.i1, px.i1);
        out.at(c, oy, ox) = T((1 - py.l1) * top + py.l1 * bot);
      }
    }
  return make_result<T>(std::move(out), {a}, [=](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < Ho; ++oy) {
        const auto& py = ty[oy];
        for (int ox = 0; ox < Wo; ++ox) {
          const auto& px = tx[ox];
          const double go = n.grad.at(c, oy, ox);
          g.at(c, py.i0, px.i0) += T(go * (1 - py.l1) * (1 - px.l1));
          g.at(c, py.i0, px.i1) += T(go * (1 - py.l1) * px.l1);
          g.at(c, py.i1, px.i0) += T(go * py.l1 * (1 - px.l1));
          g.at(c, py.i1, px.i1) += T(go * py.l1 * px.l1);
        }
      }
  });
}

/// Resamples to (Ho, Wo): adaptive average pooling when shrinking, bilinear
/// interpolation when growing, identity when equal.
template <class T>
Var<T> resample_to(const Var<T>& a, int Ho, int Wo) {
  const int H = a.dim(1), W = a.dim(2);
  if (H == Ho && W == Wo) return a;
  if (Ho <= H && Wo <= W) return adaptive_avg_pool2d(a, Ho, Wo);
  if (Ho >= H && Wo >= W) return upsample_bilinear(a, Ho, Wo);
  shape_fail("resample_to: mixed shrink/grow from ", H, "x", W, " to ", Ho, "x", Wo);
}

}  // namespace eraw
