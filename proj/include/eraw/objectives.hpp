#pragma once

#include <array>
#include <optional>

#include "eraw/ops.hpp"

namespace eraw {

inline constexpr double kDelta = 1e-7;

enum class KlVariant { canonical, paper_literal };

inline KlVariant parse_kl_variant(const std::string& s) {
  if (s == "canonical") return KlVariant::canonical;
  if (s == "paper_literal") return KlVariant::paper_literal;
  throw std::invalid_argument("kl variant must be canonical or paper_literal, got " + s);
}

inline std::string to_string(KlVariant v) { return v == KlVariant::canonical ? "canonical" : "paper_literal"; }

class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// KL, CC, SIM and NSS for one prediction / ground-truth pair.
struct MetricReport {
  double kl = 0, cc = 0, sim = 0, nss = 0;
  double delta = kDelta;
};

namespace detail {

// Every metric evaluates in double on flat arrays; when `grad` is non-null
// it receives d(metric)/dE.

template <class T>
double sum_nonneg(const T* x, std::int64_t n, const char* what) {
  double s = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (!(x[i] >= 0)) throw MetricError(concat_msg(what, ": map must be nonnegative and finite"));
    s += double(x[i]);
  }
  if (s <= 0) throw MetricError(concat_msg(what, ": all-zero map cannot be normalized"));
  return s;
}

template <class T>
double nss_eval(const T* e, const T* g, std::int64_t n, double* grad) {
  double mu = 0, var = 0, gs = 0;
  for (std::int64_t i = 0; i < n; ++i) mu += double(e[i]);
  mu /= double(n);
  for (std::int64_t i = 0; i < n; ++i) var += (double(e[i]) - mu) * (double(e[i]) - mu);
  const double sd = std::sqrt(var / double(n));
  for (std::int64_t i = 0; i < n; ++i) gs += double(g[i]);
  if (gs <= 0) throw MetricError("nss: ground truth has no mass");
  if (grad) std::fill(grad, grad + n, 0.0);
  if (!(sd > 1e-12 * std::abs(mu))) return 0.0;  // constant prediction, up to rounding
  double v = 0;
  for (std::int64_t i = 0; i < n; ++i) v += double(g[i]) * (double(e[i]) - mu) / sd;
  v /= gs;
  if (grad)
    for (std::int64_t i = 0; i < n; ++i) {
      const double eh = (double(e[i]) - mu) / sd;
      grad[i] = (double(g[i]) / gs - 1.0 / double(n) - v * eh / double(n)) / sd;
    }
  return v;
}

template <class T>
double kl_eval(const T* e, const T* g, std::int64_t n, KlVariant variant, double* grad) {
  if (variant == KlVariant::paper_literal) {
    double v = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double E = e[i], G = g[i];
      const double r = E / (E + kDelta) + kDelta;
      v += G * std::log(r);
      if (grad) grad[i] = G * (kDelta / ((E + kDelta) * (E + kDelta))) / r;
    }
    return v;
  }
  const double se = sum_nonneg(e, n, "kl"), sg = sum_nonneg(g, n, "kl");
  double v = 0, aq = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double P = double(g[i]) / sg, Q = double(e[i]) / se;
    const double r = kDelta + P / (kDelta + Q);
    v += P * std::log(r);
    if (grad) {
      const double a = -P * P / ((kDelta + Q) * (kDelta + Q) * r);  // d/dQ
      grad[i] = a;
      aq += a * Q;
    }
  }
  if (grad)
    for (std::int64_t i = 0; i < n; ++i) grad[i] = (grad[i] - aq) / se;
  return v;
}

template <class T>
double sim_eval(const T* e, const T* g, std::int64_t n, double* grad) {
  const double se = sum_nonneg(e, n, "sim"), sg = sum_nonneg(g, n, "sim");
  const double de = se + kDelta, dg = sg + kDelta;
  double v = 0, mass_e = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double a = double(e[i]) / de, b = double(g[i]) / dg;
    const bool take_e = a <= b;
    v += take_e ? a : b;
    if (grad) {
      grad[i] = take_e ? 1.0 / de : 0.0;
      if (take_e) mass_e += double(e[i]);
    }
  }
  if (grad)
    for (std::int64_t i = 0; i < n; ++i) grad[i] -= mass_e / (de * de);
  return v;
}

template <class T>
double cc_eval(const T* e, const T* g, std::int64_t n, double* grad) {
  double me = 0, mg = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    me += double(e[i]);
    mg += double(g[i]);
  }
  me /= double(n);
  mg /= double(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double a = double(e[i]) - me, b = double(g[i]) - mg;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (!(sxx > 0) || !(syy > 0)) throw MetricError("cc: correlation undefined for a constant map");
  const double den = std::sqrt(sxx * syy), v = sxy / den;
  if (grad)
    for (std::int64_t i = 0; i < n; ++i) grad[i] = (double(g[i]) - mg) / den - v * (double(e[i]) - me) / sxx;
  return v;
}

template <class T>
void check_pair(const Tensor<T>& e, const Tensor<T>& g) {
  if (e.shape() != g.shape()) shape_fail("metric: map shapes differ ", shape_str(e.shape()), " vs ", shape_str(g.shape()));
  if (e.size() == 0) shape_fail("metric: empty maps");
}

}  // namespace detail

template <class T>
double nss(const Tensor<T>& E, const Tensor<T>& G) {
  detail::check_pair(E, G);
  return detail::nss_eval(E.data(), G.data(), E.size(), nullptr);
}

template <class T>
double kl_div(const Tensor<T>& E, const Tensor<T>& G, KlVariant v = KlVariant::canonical) {
  detail::check_pair(E, G);
  return detail::kl_eval(E.data(), G.data(), E.size(), v, nullptr);
}

template <class T>
double sim(const Tensor<T>& E, const Tensor<T>& G) {
  detail::check_pair(E, G);
  return detail::sim_eval(E.data(), G.data(), E.size(), nullptr);
}

template <class T>
double cc(const Tensor<T>& E, const Tensor<T>& G) {
  detail::check_pair(E, G);
  return detail::cc_eval(E.data(), G.data(), E.size(), nullptr);
}

template <class T>
MetricReport compute_metrics(const Tensor<T>& E, const Tensor<T>& G, KlVariant v = KlVariant::canonical) {
  return {kl_div(E, G, v), cc(E, G), sim(E, G), nss(E, G), kDelta};
}

/// Weights of the composite loss rho1*NSS + rho2*KL + rho3*SIM + rho4*CC.
struct LossWeights {
  double nss = -0.005, kl = 1.0, sim = -0.2, cc = -0.1;

  static LossWeights parse(const std::string& csv) {
    std::array<double, 4> w{};
    std::stringstream ss(csv);
    std::string tok;
    int i = 0;
    while (std::getline(ss, tok, ',')) {
      if (i >= 4) throw std::invalid_argument("loss weights: expected 4 comma-separated values");
      std::size_t used = 0;
      w[i++] = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument("loss weights: bad number '" + tok + "'");
    }
    if (i != 4) throw std::invalid_argument("loss weights: expected 4 comma-separated values");
    return {w[0], w[1], w[2], w[3]};
  }

  /// Names of the terms with nonzero weight, in the order NSS, KL, SIM, CC.
  std::vector<std::string> active_terms() const {
    std::vector<std::string> t;
    if (nss != 0) t.push_back("NSS");
    if (kl != 0) t.push_back("KL");
    if (sim != 0) t.push_back("SIM");
    if (cc != 0) t.push_back("CC");
    return t;
  }
};

/// The seven loss-combination settings of the loss ablation: default
/// weights with the unused terms zeroed.
inline std::vector<std::pair<std::string, LossWeights>> loss_ablation_configs() {
  const LossWeights d;
  auto pick = [&](bool n, bool k, bool s, bool c) {
    return LossWeights{n ? d.nss : 0.0, k ? d.kl : 0.0, s ? d.sim : 0.0, c ? d.cc : 0.0};
  };
  return {{"CC", pick(false, false, false, true)},       {"NSS", pick(true, false, false, false)},
          {"SIM", pick(false, false, true, false)},      {"SIM+NSS", pick(true, false, true, false)},
          {"KL+NSS", pick(true, true, false, false)},    {"CC+SIM+KL", pick(false, true, true, true)},
          {"CC+SIM+KL+NSS", pick(true, true, true, true)}};
}

/// Per-term values of the last composite evaluation (inactive terms unset).
struct LossBreakdown {
  double total = 0;
  std::optional<double> nss, kl, sim, cc;
};

/// Differentiable composite loss of a predicted map E against a fixed G.
/// Only terms with nonzero weight are evaluated.
template <class T>
Var<T> composite_loss(const Var<T>& E, const Tensor<T>& G, const LossWeights& w,
                      KlVariant variant = KlVariant::canonical, LossBreakdown* parts = nullptr) {
  detail::check_pair(E.value(), G);
  const std::int64_t n = G.size();
  const T* e = E.value().data();
  const T* g = G.data();
  std::vector<double> total_grad(static_cast<std::size_t>(n), 0.0), tmp(static_cast<std::size_t>(n));
  LossBreakdown b;
  auto term = [&](double weight, auto&& eval, std::optional<double>& slot) {
    if (weight == 0) return;
    const double v = eval(tmp.data());
    slot = v;
    b.total += weight * v;
    for (std::int64_t i = 0; i < n; ++i) total_grad[i] += weight * tmp[i];
  };
  term(w.nss, [&](double* gr) { return detail::nss_eval(e, g, n, gr); }, b.nss);
  term(w.kl, [&](double* gr) { return detail::kl_eval(e, g, n, variant, gr); }, b.kl);
  term(w.sim, [&](double* gr) { return detail::sim_eval(e, g, n, gr); }, b.sim);
  term(w.cc, [&](double* gr) { return detail::cc_eval(e, g, n, gr); }, b.cc);
  if (parts) *parts = b;
  return make_result<T>(Tensor<T>({1}, {T(b.total)}), {E}, [total_grad = std::move(total_grad)](Node<T>& nd) {
    auto& gx = nd.input_grad(0);
    const double s = nd.grad[0];
    for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += T(s * total_grad[i]);
  });
}

}  // namespace eraw
