#pragma once

// Direct-loop reference implementations used as test oracles. They share no
// code with the library beyond the Tensor container.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "eraw/tensor.hpp"

namespace oracle {

using eraw::Tensor;
using TD = Tensor<double>;

inline double at_or_zero(const TD& x, int c, int y, int xx) {
  if (y < 0 || y >= x.dim(1) || xx < 0 || xx >= x.dim(2)) return 0.0;
  return x.at(c, y, xx);
}

inline TD conv2d(const TD& x, const TD& w, const TD* bias, int stride, int pad, int dil = 1, int groups = 1) {
  const int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Cout = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int Ho = (H + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
  const int Wo = (W + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
  const int og = Cout / groups;
  (void)Cin;
  TD out({Cout, Ho, Wo});
  for (int o = 0; o < Cout; ++o) {
    const int g = o / og;
    for (int y = 0; y < Ho; ++y)
      for (int xo = 0; xo < Wo; ++xo) {
        double s = bias ? (*bias)[o] : 0.0;
        for (int c = 0; c < cg; ++c)
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j)
              s += w[((static_cast<std::int64_t>(o) * cg + c) * kh + i) * kw + j] *
                   at_or_zero(x, g * cg + c, y * stride - pad + i * dil, xo * stride - pad + j * dil);
        out.at(o, y, xo) = s;
      }
  }
  return out;
}

// Scatter form: every input pixel spreads its kernel over the output.
inline TD conv_transpose2d(const TD& x, const TD& w, const TD* bias, int stride, int pad) {
  const int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Cout = w.dim(1), k = w.dim(2);
  const int Ho = (H - 1) * stride - 2 * pad + k, Wo = (W - 1) * stride - 2 * pad + k;
  TD out({Cout, Ho, Wo});
  for (int c = 0; c < Cin; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int o = 0; o < Cout; ++o)
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
              const int oy = y * stride - pad + i, ox = xx * stride - pad + j;
              if (oy < 0 || oy >= Ho || ox < 0 || ox >= Wo) continue;
              out.at(o, oy, ox) += x.at(c, y, xx) * w[((static_cast<std::int64_t>(c) * Cout + o) * k + i) * k + j];
            }
  if (bias)
    for (int o = 0; o < Cout; ++o)
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx) out.at(o, y, xx) += (*bias)[o];
  return out;
}

inline std::vector<std::complex<double>> dft2(const TD& x, int c) {
  const int H = x.dim(1), W = x.dim(2);
  std::vector<std::complex<double>> out(static_cast<std::size_t>(H) * W);
  for (int u = 0; u < H; ++u)
    for (int v = 0; v < W; ++v) {
      std::complex<double> s = 0;
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          const double ph = -2.0 * std::numbers::pi * (double(u) * y / H + double(v) * xx / W);
          s += x.at(c, y, xx) * std::complex<double>(std::cos(ph), std::sin(ph));
        }
      out[static_cast<std::size_t>(u) * W + v] = s;
    }
  return out;
}

inline std::vector<std::complex<double>> idft2(const std::vector<std::complex<double>>& z, int H, int W) {
  std::vector<std::complex<double>> out(z.size());
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx) {
      std::complex<double> s = 0;
      for (int u = 0; u < H; ++u)
        for (int v = 0; v < W; ++v) {
          const double ph = 2.0 * std::numbers::pi * (double(u) * y / H + double(v) * xx / W);
          s += z[static_cast<std::size_t>(u) * W + v] * std::complex<double>(std::cos(ph), std::sin(ph));
        }
      out[static_cast<std::size_t>(y) * W + xx] = s / double(H * W);
    }
  return out;
}

// Bilinear resize with half-pixel centers and edge clamping.
inline TD upsample_bilinear(const TD& x, int Ho, int Wo) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  TD out({C, Ho, Wo});
  auto src = [](int o, int in, int out_n) {
    double s = (o + 0.5) * double(in) / double(out_n) - 0.5;
    return std::max(s, 0.0);
  };
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx) {
        const double sy = src(y, H, Ho), sx = src(xx, W, Wo);
        const int y0 = std::min(int(std::floor(sy)), H - 1), x0 = std::min(int(std::floor(sx)), W - 1);
        const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
        const double fy = sy - y0, fx = sx - x0;
        out.at(c, y, xx) = (1 - fy) * ((1 - fx) * x.at(c, y0, x0) + fx * x.at(c, y0, x1)) +
                           fy * ((1 - fx) * x.at(c, y1, x0) + fx * x.at(c, y1, x1));
      }
  return out;
}

// Adaptive average pooling with windows [floor(i*in/out), ceil((i+1)*in/out)).
inline TD adaptive_avg_pool(const TD& x, int Ho, int Wo) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  TD out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j) {
        const int y0 = i * H / Ho, y1 = ((i + 1) * H + Ho - 1) / Ho;
        const int x0 = j * W / Wo, x1 = ((j + 1) * W + Wo - 1) / Wo;
        double s = 0;
        for (int y = y0; y < y1; ++y)
          for (int xx = x0; xx < x1; ++xx) s += x.at(c, y, xx);
        out.at(c, i, j) = s / double((y1 - y0) * (x1 - x0));
      }
  return out;
}

inline TD max_pool(const TD& x, int k, int stride, int pad) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  TD out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx) {
        double m = -1e300;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            const int yy = y * stride - pad + i, xi = xx * stride - pad + j;
            if (yy >= 0 && yy < H && xi >= 0 && xi < W) m = std::max(m, x.at(c, yy, xi));
          }
        out.at(c, y, xx) = m;
      }
  return out;
}

inline TD group_norm(const TD& x, int groups, double eps) {
  TD out(x.shape());
  const std::int64_t m = x.size() / groups;
  for (int g = 0; g < groups; ++g) {
    double mean = 0, var = 0;
    for (std::int64_t i = 0; i < m; ++i) mean += x[g * m + i];
    mean /= double(m);
    for (std::int64_t i = 0; i < m; ++i) var += (x[g * m + i] - mean) * (x[g * m + i] - mean);
    var /= double(m);
    for (std::int64_t i = 0; i < m; ++i) out[g * m + i] = (x[g * m + i] - mean) / std::sqrt(var + eps);
  }
  return out;
}

inline TD softmax_rows(const TD& a) {
  TD out(a.shape());
  for (int r = 0; r < a.dim(0); ++r) {
    double z = 0;
    for (int c = 0; c < a.dim(1); ++c) z += std::exp(a.at(r, c));
    for (int c = 0; c < a.dim(1); ++c) out.at(r, c) = std::exp(a.at(r, c)) / z;
  }
  return out;
}

inline TD matmul(const TD& a, const TD& b) {
  TD out({a.dim(0), b.dim(1)});
  for (int i = 0; i < a.dim(0); ++i)
    for (int j = 0; j < b.dim(1); ++j) {
      double s = 0;
      for (int k = 0; k < a.dim(1); ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

inline TD sigmoid(TD x) {
  for (auto& v : x.vec()) v = 1.0 / (1.0 + std::exp(-v));
  return x;
}

inline TD relu(TD x) {
  for (auto& v : x.vec()) v = std::max(v, 0.0);
  return x;
}

inline TD add(TD a, const TD& b) {
  for (std::int64_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline TD cat(const TD& a, const TD& b) {
  TD out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.vec().begin(), a.vec().end(), out.vec().begin());
  std::copy(b.vec().begin(), b.vec().end(), out.vec().begin() + a.size());
  return out;
}

inline TD channel_stat(const TD& x, bool take_max) {
  TD out({1, x.dim(1), x.dim(2)});
  for (int y = 0; y < x.dim(1); ++y)
    for (int xx = 0; xx < x.dim(2); ++xx) {
      double s = take_max ? -1e300 : 0.0;
      for (int c = 0; c < x.dim(0); ++c) s = take_max ? std::max(s, x.at(c, y, xx)) : s + x.at(c, y, xx);
      out.at(0, y, xx) = take_max ? s : s / x.dim(0);
    }
  return out;
}

inline std::vector<double> channel_means(const TD& x) {
  std::vector<double> m(x.dim(0), 0.0);
  for (int c = 0; c < x.dim(0); ++c) {
    for (int y = 0; y < x.dim(1); ++y)
      for (int xx = 0; xx < x.dim(2); ++xx) m[c] += x.at(c, y, xx);
    m[c] /= double(x.dim(1) * x.dim(2));
  }
  return m;
}

// Saliency metrics, written from their textbook definitions.

inline double nss(const std::vector<double>& e, const std::vector<double>& g) {
  const double n = double(e.size());
  double mean = 0;
  for (double v : e) mean += v / n;
  double ss = 0;
  for (double v : e) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  if (sd == 0) return 0;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    num += g[i] * ((e[i] - mean) / sd);
    den += g[i];
  }
  return num / den;
}

inline std::vector<double> normalized(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v;
  std::vector<double> out;
  for (double v : x) out.push_back(v / s);
  return out;
}

inline double kl_canonical(const std::vector<double>& e, const std::vector<double>& g, double delta) {
  const auto q = normalized(e), p = normalized(g);
  double out = 0;
  for (std::size_t i = 0; i < p.size(); ++i) out += p[i] * std::log(delta + p[i] / (delta + q[i]));
  return out;
}

inline double kl_literal(const std::vector<double>& e, const std::vector<double>& g, double delta) {
  double out = 0;
  for (std::size_t i = 0; i < e.size(); ++i) out += g[i] * std::log(e[i] / (e[i] + delta) + delta);
  return out;
}

inline double sim(const std::vector<double>& e, const std::vector<double>& g, double delta) {
  double se = 0, sg = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    se += e[i];
    sg += g[i];
  }
  double out = 0;
  for (std::size_t i = 0; i < e.size(); ++i) out += std::min(e[i] / (se + delta), g[i] / (sg + delta));
  return out;
}

inline double cc(const std::vector<double>& e, const std::vector<double>& g) {
  const double n = double(e.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    sx += e[i];
    sy += g[i];
  }
  double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    cov += (e[i] - sx / n) * (g[i] - sy / n);
    vx += (e[i] - sx / n) * (e[i] - sx / n);
    vy += (g[i] - sy / n) * (g[i] - sy / n);
  }
  return (cov / n) / (std::sqrt(vx / n) * std::sqrt(vy / n));
}

}  // namespace oracle
