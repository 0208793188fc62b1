#pragma once

#include <functional>

#include "eraw/layers.hpp"

namespace eraw {

struct GradcheckEntry {
  std::string where;
  double analytic = 0, numeric = 0, rel_err = 0;
};

struct GradcheckReport {
  std::string name;
  int checked = 0;
  double max_rel_err = 0;
  GradcheckEntry worst;
  bool finite = true;
  std::string non_finite_at;

  bool pass(double tol) const { return finite && checked > 0 && max_rel_err < tol; }
};

struct GradcheckOptions {
  double step = 1e-3;
  int entries_per_tensor = 6;  // random coordinates probed per tensor; <= 0 means all
  int max_entries = 400;       // cap across all tensors
  double abs_floor = 1e-6;     // denominator floor of the relative error
};

inline double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

namespace detail {

inline std::vector<std::int64_t> probe_indices(std::int64_t n, int k, Rng& rng) {
  std::vector<std::int64_t> idx;
  if (k <= 0 || k >= n) {
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  for (int i = 0; i < k; ++i) idx.push_back(static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n)));
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

inline void record(GradcheckReport& r, const std::string& where, double a, double n, double floor) {
  ++r.checked;
  if (!std::isfinite(a) || !std::isfinite(n)) {
    if (r.finite) r.non_finite_at = where;
    r.finite = false;
    return;
  }
  const double e = relative_error(a, n, floor);
  if (e >= r.max_rel_err) {
    r.max_rel_err = e;
    r.worst = {where, a, n, e};
  }
}

}  // namespace detail

/// Compares backward() against central differences for a scalar loss that
/// reads the given parameters. `loss` must rebuild the graph on each call.
inline GradcheckReport gradcheck_params(const std::string& name, const std::function<Var<double>()>& loss,
                                        const ParamRefs<double>& params, Rng& rng, GradcheckOptions opt = {}) {
  GradcheckReport rep;
  rep.name = name;
  GradMap<double> grads = backward(loss());
  int budget = opt.max_entries;
  for (auto* p : params) {
    if (budget <= 0) break;
    auto it = grads.find(p);
    for (std::int64_t i : detail::probe_indices(p->value.size(), opt.entries_per_tensor, rng)) {
      if (budget-- <= 0) break;
      const double a = it == grads.end() ? 0.0 : it->second[i];
      const double orig = p->value[i];
      NoGradGuard ng;
      p->value[i] = orig + opt.step;
      const double up = loss().value()[0];
      p->value[i] = orig - opt.step;
      const double dn = loss().value()[0];
      p->value[i] = orig;
      detail::record(rep, concat_msg(p->name, "[", i, "]"), a, (up - dn) / (2 * opt.step), opt.abs_floor);
    }
  }
  return rep;
}

/// Same check with respect to input tensors fed through `loss(inputs)`.
inline GradcheckReport gradcheck_inputs(const std::string& name,
                                        const std::function<Var<double>(const std::vector<Var<double>>&)>& loss,
                                        std::vector<Tensor<double>> inputs, Rng& rng, GradcheckOptions opt = {}) {
  GradcheckReport rep;
  rep.name = name;
  std::vector<Var<double>> vars;
  for (auto& t : inputs) vars.push_back(variable(t));
  backward(loss(vars));
  auto eval = [&] {
    NoGradGuard ng;
    std::vector<Var<double>> cs;
    for (auto& t : inputs) cs.push_back(constant(t));
    return loss(cs).value()[0];
  };
  int budget = opt.max_entries;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double>& g = vars[k].grad();
    for (std::int64_t i : detail::probe_indices(inputs[k].size(), opt.entries_per_tensor, rng)) {
      if (budget-- <= 0) break;
      const double a = g.size() ? g[i] : 0.0;
      const double orig = inputs[k][i];
      inputs[k][i] = orig + opt.step;
      const double up = eval();
      inputs[k][i] = orig - opt.step;
      const double dn = eval();
      inputs[k][i] = orig;
      detail::record(rep, concat_msg("input", k, "[", i, "]"), a, (up - dn) / (2 * opt.step), opt.abs_floor);
    }
  }
  return rep;
}

/// Scalar test loss Σ y ⊙ r with a fixed random projection r.
struct RandomProjection {
  Tensor<double> r;
  Var<double> operator()(const Var<double>& y) const {
    if (r.shape() != y.shape()) shape_fail("projection shape mismatch");
    return weighted_sum(y, r);
  }
};

inline RandomProjection random_projection(const Shape& s, Rng& rng) { return {randn<double>(s, rng)}; }

}  // namespace eraw
