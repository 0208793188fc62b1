#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>

#include "eraw/checkpoint.hpp"
#include "eraw/code_hash.hpp"
#include "eraw/config.hpp"
#include "eraw/gradcheck.hpp"
#include "eraw/model.hpp"

namespace eraw {

using Logger = std::function<void(const std::string&)>;

// ---------------------------------------------------------------- evaluation

/// Fixed central Gaussian, peak 1, with standard deviations `frac`·H and `frac`·W.
inline Tensor<float> center_bias_map(int H, int W, double frac = 0.2) {
  Tensor<float> m({1, H, W});
  const double cy = 0.5 * (H - 1), cx = 0.5 * (W - 1), sy = frac * H, sx = frac * W;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      m.at(0, y, x) = float(std::exp(-0.5 * ((y - cy) * (y - cy) / (sy * sy) + (x - cx) * (x - cx) / (sx * sx))));
  return m;
}

struct MetricRow {
  std::string name;
  int samples = 0;
  double kl = 0, cc = 0, sim = 0, nss = 0;
};

struct Evaluation {
  MetricRow row;
  std::vector<MetricReport> per_sample;
};

inline Tensor<float> predict(const EraWNet<float>& m, const FramePair& p) {
  NoGradGuard ng;
  return m(p.input<float>()).value();
}

/// Averages the four metrics of `predict(pair)` against each pair's target.
inline Evaluation evaluate_with(const std::string& name, const Dataset& d,
                                const std::function<Tensor<float>(const FramePair&)>& predict_fn,
                                KlVariant variant = KlVariant::canonical) {
  if (d.empty()) throw std::invalid_argument("evaluate: no samples");
  Evaluation ev;
  ev.row.name = name;
  for (const auto& p : d) {
    const MetricReport r = compute_metrics(predict_fn(p), p.gt, variant);
    ev.per_sample.push_back(r);
    ev.row.kl += r.kl;
    ev.row.cc += r.cc;
    ev.row.sim += r.sim;
    ev.row.nss += r.nss;
  }
  const double n = double(d.size());
  ev.row.samples = int(d.size());
  ev.row.kl /= n;
  ev.row.cc /= n;
  ev.row.sim /= n;
  ev.row.nss /= n;
  return ev;
}

inline Evaluation evaluate(const EraWNet<float>& m, const Dataset& d, KlVariant v = KlVariant::canonical,
                           const std::string& name = "model") {
  return evaluate_with(name, d, [&](const FramePair& p) { return predict(m, p); }, v);
}

inline Evaluation evaluate_center_bias(const Dataset& d, KlVariant v = KlVariant::canonical) {
  if (d.empty()) throw std::invalid_argument("evaluate: no samples");
  const Tensor<float> cb = center_bias_map(d[0].gt.dim(1), d[0].gt.dim(2));
  return evaluate_with("center-bias", d, [&](const FramePair&) { return cb; }, v);
}

/// Number of metrics on which `a` is strictly better than `b` (KL lower, others higher).
inline int metrics_beaten(const MetricRow& a, const MetricRow& b) {
  return int(a.kl < b.kl) + int(a.cc > b.cc) + int(a.sim > b.sim) + int(a.nss > b.nss);
}

inline std::string format_table(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  std::size_t w = 12;
  for (const auto& r : rows) w = std::max(w, r.name.size() + 2);
  os << std::left << std::setw(int(w)) << "model" << std::right << std::setw(8) << "n" << std::setw(10) << "KL"
     << std::setw(10) << "CC" << std::setw(10) << "SIM" << std::setw(10) << "NSS" << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& r : rows)
    os << std::left << std::setw(int(w)) << r.name << std::right << std::setw(8) << r.samples << std::setw(10) << r.kl
       << std::setw(10) << r.cc << std::setw(10) << r.sim << std::setw(10) << r.nss << '\n';
  return os.str();
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "model,samples,kl,cc,sim,nss\n" << std::setprecision(17);
  for (const auto& r : rows) os << r.name << ',' << r.samples << ',' << r.kl << ',' << r.cc << ',' << r.sim << ',' << r.nss << '\n';
}

// ------------------------------------------------------------------ run dirs

inline Json run_info(const RunConfig& c) {
  return Json{{"seed", c.train.seed}, {"code_hash", kCodeHash}, {"preset", c.preset}};
}

/// Writes config.json (full resolved configuration) and run.json (seed, code hash).
inline void write_run_files(const std::filesystem::path& dir, const RunConfig& c) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "config.json") << to_json(c).dump(2) << '\n';
  std::ofstream(dir / "run.json") << run_info(c).dump(2) << '\n';
}

inline Json checkpoint_meta(const RunConfig& c) { return Json{{"config", to_json(c)}, {"run", run_info(c)}}; }

/// Rebuilds the model described by a checkpoint and loads its weights.
inline std::pair<RunConfig, EraWNet<float>> load_model(const std::filesystem::path& ckpt) {
  const Checkpoint c = load_checkpoint(ckpt);
  if (!c.meta.contains("config")) throw std::runtime_error("checkpoint has no embedded config");
  RunConfig cfg = from_json(c.meta["config"]);
  Rng rng(cfg.train.seed);
  EraWNet<float> m(cfg.model, rng);
  restore(c, m.parameters());
  return {cfg, std::move(m)};
}

// ------------------------------------------------------------------ training

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double loss = 0, lr = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0, val_kl = 0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_kl = std::numeric_limits<double>::infinity();
  bool aborted = false;
  std::string abort_reason;
};

struct TrainHooks {
  std::optional<std::filesystem::path> run_dir;
  Logger log;
  std::function<void(long step, const ParamRefs<float>&)> after_step;
};

inline bool all_finite(const GradMap<float>& g) {
  for (const auto& [p, t] : g)
    if (!all_finite(t)) return false;
  return true;
}

/// Mean composite loss of the listed samples and the matching mean gradient.
inline double batch_gradient(const EraWNet<float>& m, const Dataset& d, const std::vector<std::size_t>& idx,
                             const TrainConfig& tc, GradMap<float>& grad) {
  grad.clear();
  double total = 0;
  const float scale = 1.0f / float(idx.size());
  for (std::size_t i : idx) {
    Var<float> loss;
    try {
      loss = composite_loss(m(d[i].input<float>()), d[i].gt, tc.loss, tc.kl_variant);
    } catch (const MetricError&) {
      return std::numeric_limits<double>::quiet_NaN();  // prediction left the valid range (NaN or negative)
    }
    total += double(loss.value()[0]);
    if (!std::isfinite(total)) return total;
    accumulate(grad, backward(loss), scale);
  }
  return total / double(idx.size());
}

inline CyclicLr schedule(const TrainConfig& tc, long steps_per_epoch) {
  CyclicLr lr{tc.lr_low, tc.lr_high, tc.lr_step_size > 0 ? tc.lr_step_size : int(2 * steps_per_epoch)};
  lr.validate();
  return lr;
}

inline double mean_kl(const EraWNet<float>& m, const Dataset& d, KlVariant v) { return evaluate(m, d, v).row.kl; }

/// Mini-batch AdamW under the cyclic schedule. After every epoch the model is
/// scored by mean KL on `val`; the best weights are kept, checkpointed to
/// run_dir/best.ckpt and restored into `m` at the end. A non-finite loss or
/// gradient stops training; the weights from before the last update are then
/// saved to run_dir/last_good.ckpt and restored.
inline TrainResult train(EraWNet<float>& m, const Dataset& tr, const Dataset& val, const RunConfig& cfg,
                         const TrainHooks& hooks = {}) {
  validate(cfg);
  if (tr.empty()) throw std::invalid_argument("train: no training samples");
  const TrainConfig& tc = cfg.train;
  const long per_epoch = long((tr.size() + std::size_t(tc.batch) - 1) / std::size_t(tc.batch));
  const CyclicLr lr = schedule(tc, per_epoch);
  ParamRefs<float> ps = m.parameters();
  AdamW<float> opt;
  opt.weight_decay = tc.weight_decay;
  Rng shuffle(synth::mix(tc.seed ^ 0x7261696eull));
  TrainResult res;
  auto log = [&](const std::string& s) {
    if (hooks.log) hooks.log(s);
  };
  std::ofstream curve;
  if (hooks.run_dir) {
    write_run_files(*hooks.run_dir, cfg);
    curve.open(*hooks.run_dir / "loss_curve.csv");
    curve << "step,epoch,loss,lr\n" << std::setprecision(10);
  }
  std::vector<Tensor<float>> best = snapshot(ps), last_good = best;
  long step = 0;
  GradMap<float> grad;
  for (int epoch = 0; epoch < tc.epochs && !res.aborted; ++epoch) {
    std::vector<std::size_t> order(tr.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::shuffle(order.begin(), order.end(), shuffle);
    double epoch_loss = 0;
    int epoch_steps = 0;
    for (std::size_t b = 0; b < order.size(); b += std::size_t(tc.batch)) {
      if (tc.max_steps > 0 && step >= tc.max_steps) break;
      std::vector<std::size_t> idx(order.begin() + long(b), order.begin() + long(std::min(order.size(), b + std::size_t(tc.batch))));
      const double loss = batch_gradient(m, tr, idx, tc, grad);
      if (!std::isfinite(loss) || !all_finite(grad)) {
        res.aborted = true;
        res.abort_reason = concat_msg("non-finite ", std::isfinite(loss) ? "gradient" : "loss", " at step ", step);
        break;
      }
      const double rate = lr(step);
      last_good = snapshot(ps);
      opt.step(ps, grad, rate);
      res.steps.push_back({step, epoch, loss, rate});
      if (curve.is_open()) curve << step << ',' << epoch << ',' << loss << ',' << rate << '\n' << std::flush;
      if (hooks.after_step) hooks.after_step(step, ps);
      epoch_loss += loss;
      ++epoch_steps;
      ++step;
    }
    if (res.aborted || epoch_steps == 0) break;
    EpochRecord er{epoch, epoch_loss / epoch_steps, val.empty() ? epoch_loss / epoch_steps : mean_kl(m, val, tc.kl_variant)};
    res.epochs.push_back(er);
    log(concat_msg("epoch ", epoch + 1, "/", tc.epochs, " step ", step, " loss ", er.train_loss, " val_kl ", er.val_kl));
    if (std::isfinite(er.val_kl) && er.val_kl < res.best_val_kl) {
      res.best_val_kl = er.val_kl;
      res.best_epoch = epoch;
      best = snapshot(ps);
      if (hooks.run_dir) save_checkpoint(*hooks.run_dir / "best.ckpt", ps, checkpoint_meta(cfg));
    }
    if (tc.max_steps > 0 && step >= tc.max_steps) break;
  }
  if (res.aborted) {
    log("aborted: " + res.abort_reason);
    restore(last_good, ps);
    if (hooks.run_dir) save_checkpoint(*hooks.run_dir / "last_good.ckpt", ps, checkpoint_meta(cfg));
  }
  if (res.best_epoch >= 0) restore(best, ps);
  if (hooks.run_dir) {
    std::ofstream os(*hooks.run_dir / "epochs.csv");
    os << "epoch,train_loss,val_kl\n" << std::setprecision(10);
    for (const auto& e : res.epochs) os << e.epoch << ',' << e.train_loss << ',' << e.val_kl << '\n';
  }
  return res;
}

/// Repeated AdamW steps at a fixed rate on one batch; returns the loss before each step.
inline std::vector<double> overfit(EraWNet<float>& m, const Dataset& batch, const TrainConfig& tc, int steps, double rate) {
  ParamRefs<float> ps = m.parameters();
  AdamW<float> opt;
  opt.weight_decay = tc.weight_decay;
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  std::vector<double> losses;
  GradMap<float> grad;
  for (int s = 0; s < steps; ++s) {
    losses.push_back(batch_gradient(m, batch, idx, tc, grad));
    if (!std::isfinite(losses.back())) break;
    opt.step(ps, grad, rate);
  }
  return losses;
}

// ------------------------------------------------------------------ ablation

struct Variant {
  std::string name;
  ModelConfig model;
};

inline ModelConfig with_components(ModelConfig m, const std::string& strategy, bool partial, bool daf, bool gcs) {
  m.wnet.strategy = strategy;
  m.wnet.partial_decode = partial;
  m.daf.enabled = daf;
  m.gcs.enabled = gcs;
  return m;
}

/// Component ablation: U-shaped baseline (single-stage decoding) and W-Net,
/// each alone, with DAF, and with DAF and GCS.
inline std::vector<Variant> ablation_variants(const ModelConfig& base) {
  std::vector<Variant> v;
  for (const bool partial : {false, true}) {
    const std::string stem = partial ? "W-Net" : "U-Baseline";
    v.push_back({stem, with_components(base, "wnet", partial, false, false)});
    v.push_back({stem + "+DAF", with_components(base, "wnet", partial, true, false)});
    v.push_back({stem + "+DAF+GCS", with_components(base, "wnet", partial, true, true)});
  }
  return v;
}

/// Fusion strategies compared against W-Net, all without DAF and GCS.
inline std::vector<Variant> strategy_variants(const ModelConfig& base) {
  std::vector<Variant> v;
  for (const char* s : {"decision", "late", "hierarchical"}) v.push_back({s, with_components(base, s, true, false, false)});
  return v;
}

/// Configurations that build the same network share one key: W-Net without
/// the partial decoders is the hierarchical strategy.
inline std::string variant_key(const ModelConfig& m) {
  RunConfig c;
  c.model = m;
  if (c.model.wnet.strategy == "wnet" && !c.model.wnet.partial_decode) c.model.wnet.strategy = "hierarchical";
  if (c.model.wnet.strategy != "wnet") c.model.wnet.partial_decode = true;
  Json j = to_json(c);
  return j["encoder"].dump() + j["daf"].dump() + j["gcs"].dump() + j["wnet"].dump() + j["conv_bias"].dump();
}

struct AblationRow {
  std::string name, key;
  std::vector<MetricRow> per_seed;
  MetricRow mean;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  MetricRow center_bias;

  const AblationRow& row(const std::string& name) const {
    for (const auto& r : rows)
      if (r.name == name) return r;
    throw std::out_of_range("no ablation row " + name);
  }
};

inline MetricRow mean_row(const std::string& name, const std::vector<MetricRow>& rs) {
  MetricRow m;
  m.name = name;
  for (const auto& r : rs) {
    m.samples += r.samples;
    m.kl += r.kl / double(rs.size());
    m.cc += r.cc / double(rs.size());
    m.sim += r.sim / double(rs.size());
    m.nss += r.nss / double(rs.size());
  }
  return m;
}

/// Trains every variant once per seed (identical networks are trained once)
/// and scores the selected weights on `test`.
inline AblationResult run_ablation(const RunConfig& base, const std::vector<Variant>& variants,
                                   const std::vector<std::uint64_t>& seeds, const Dataset& tr, const Dataset& val,
                                   const Dataset& test, const std::optional<std::filesystem::path>& out_dir = {},
                                   const Logger& log = {}) {
  AblationResult res;
  res.center_bias = evaluate_center_bias(test, base.train.kl_variant).row;
  std::map<std::string, std::vector<MetricRow>> cache;
  int trained = 0;
  for (const auto& v : variants) {
    AblationRow row{v.name, variant_key(v.model), {}, {}};
    auto hit = cache.find(row.key);
    if (hit != cache.end()) {
      if (log) log(v.name + ": same network as an earlier row, reusing its runs");
      row.per_seed = hit->second;
    } else {
      for (std::uint64_t seed : seeds) {
        RunConfig c = base;
        c.model = v.model;
        c.train.seed = seed;
        Rng rng(seed);
        EraWNet<float> m(c.model, rng);
        TrainHooks hooks;
        if (out_dir) hooks.run_dir = *out_dir / concat_msg("run_", trained, "_seed", seed);
        hooks.log = [&](const std::string& s) {
          if (log) log(concat_msg(v.name, " seed ", seed, ": ", s));
        };
        const auto t0 = std::chrono::steady_clock::now();
        train(m, tr, val, c, hooks);
        MetricRow r = evaluate(m, test, c.train.kl_variant, v.name).row;
        if (log)
          log(concat_msg(v.name, " seed ", seed, " test KL ", r.kl, " CC ", r.cc, " (",
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), " s)"));
        row.per_seed.push_back(r);
      }
      ++trained;
      cache[row.key] = row.per_seed;
    }
    for (auto& r : row.per_seed) r.name = v.name;
    row.mean = mean_row(v.name, row.per_seed);
    res.rows.push_back(row);
  }
  if (out_dir) {
    std::vector<MetricRow> table{res.center_bias};
    for (const auto& r : res.rows) table.push_back(r.mean);
    write_metrics_csv(*out_dir / "ablation.csv", table);
  }
  return res;
}

struct OrderingCheck {
  std::string claim;
  double better = 0, worse = 0;  // mean KL of the two rows
  bool pass() const { return better <= worse; }
};

/// KL orderings between rows that are present in `r` (lower KL is better):
/// W-Net vs U-Baseline, each base vs its +DAF row, W-Net vs every strategy.
inline std::vector<OrderingCheck> ablation_checks(const AblationResult& r) {
  std::vector<OrderingCheck> out;
  auto has = [&](const std::string& n) {
    return std::any_of(r.rows.begin(), r.rows.end(), [&](const AblationRow& x) { return x.name == n; });
  };
  auto check = [&](const std::string& better, const std::string& worse) {
    if (has(better) && has(worse))
      out.push_back({better + " <= " + worse + " (KL)", r.row(better).mean.kl, r.row(worse).mean.kl});
  };
  check("W-Net", "U-Baseline");
  check("U-Baseline+DAF", "U-Baseline");
  check("W-Net+DAF", "W-Net");
  for (const char* s : {"decision", "late", "hierarchical"}) check("W-Net", s);
  return out;
}

// ------------------------------------------------------------- gradchecks

struct GradcheckResult {
  GradcheckReport report;
  double tol = 1e-3;
  bool pass() const { return report.pass(tol); }
};

namespace detail {

inline void perturb(const ParamRefs<double>& ps, Rng& rng, double sd) {
  std::normal_distribution<double> n(0.0, sd);
  for (auto* p : ps)
    for (auto& v : p->value.vec()) v += n(rng);
}

template <class M>
ParamRefs<double> params_of(M& m) {
  ParamRefs<double> ps;
  m.collect(ps);
  return ps;
}

}  // namespace detail

/// Finite-difference checks (double precision) of every differentiable
/// component on small random instances: parameters and inputs.
inline std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed = 1) {
  using TD = Tensor<double>;
  using VD = Var<double>;
  std::vector<GradcheckResult> out;
  Rng rng(seed);
  GradcheckOptions o;
  auto add = [&](GradcheckReport r, double tol = 1e-3) { out.push_back({std::move(r), tol}); };

  for (const std::string filter : {"shared", "per_bin"}) {
    DafConfig c;
    c.tile = 8;
    c.freq_filter = filter;
    DafUnit<double> u("daf", c, 6, 10, true, rng);
    auto ps = detail::params_of(u);
    detail::perturb(ps, rng, 0.1);
    TD x1 = randn<double>({4, 6, 10}, rng), x2 = randn<double>({4, 6, 10}, rng);
    auto proj = random_projection({4, 6, 10}, rng);
    add(gradcheck_params("daf." + filter, [&] { return proj(u(constant(x1), constant(x2))); }, ps, rng, o));
    add(gradcheck_inputs("daf." + filter + ".inputs", [&](const std::vector<VD>& v) { return proj(u(v[0], v[1])); },
                         {x1, x2}, rng, o));
  }
  {
    const std::array<int, 4> ch{8, 16, 32, 64};
    GcsModule<double> g("gcs", ch, GcsConfig{}, true, rng);
    auto ps = detail::params_of(g);
    detail::perturb(ps, rng, 0.1);
    std::vector<TD> p;
    std::array<RandomProjection, 4> proj;
    for (int i = 0; i < 4; ++i) {
      p.push_back(randn<double>({ch[i], 8 >> i, 8 >> i}, rng));
      proj[i] = random_projection(p[i].shape(), rng);
    }
    auto loss = [&](const std::vector<VD>& in) {
      const auto y = g({in[0], in[1], in[2], in[3]});
      VD l = proj[0](y[0]);
      for (int i = 1; i < 4; ++i) l = eraw::add(l, proj[i](y[i]));
      return l;
    };
    GradcheckOptions og = o;
    og.entries_per_tensor = 3;
    add(gradcheck_params("gcs", [&] { return loss({constant(p[0]), constant(p[1]), constant(p[2]), constant(p[3])}); }, ps,
                         rng, og));
    add(gradcheck_inputs("gcs.inputs", loss, p, rng, og));
  }
  {
    Csha<double> u("csha", 8, 4, true, rng);
    auto ps = detail::params_of(u);
    detail::perturb(ps, rng, 0.1);
    TD deep = randn<double>({8, 3, 3}, rng), shallow = randn<double>({4, 6, 6}, rng);
    auto proj = random_projection({4, 6, 6}, rng);
    add(gradcheck_params("csha", [&] { return proj(u(constant(deep), constant(shallow))); }, ps, rng, o));
    add(gradcheck_inputs("csha.inputs", [&](const std::vector<VD>& v) { return proj(u(v[0], v[1])); }, {deep, shallow}, rng, o));
  }
  {
    Mhca<double> m("mhca", 4, 2, 2, 1, {4, 4}, {2, 3}, rng);
    auto ps = detail::params_of(m);
    detail::perturb(ps, rng, 0.2);
    TD s = randn<double>({4, 2, 3}, rng), f = randn<double>({4, 4, 4}, rng);
    auto proj = random_projection({4, 2, 3}, rng);
    add(gradcheck_params("mhca", [&] { return proj(m(constant(s), constant(f))); }, ps, rng, o));
    add(gradcheck_inputs("mhca.inputs", [&](const std::vector<VD>& v) { return proj(m(v[0], v[1])); }, {s, f}, rng, o));
  }
  {
    DecodingHead<double> h("head", 4, 4, true, rng);
    auto ps = detail::params_of(h);
    detail::perturb(ps, rng, 0.1);
    TD d = randn<double>({4, 2, 3}, rng);
    auto proj = random_projection({1, 8, 12}, rng);
    add(gradcheck_params("head", [&] { return proj(h(constant(d))); }, ps, rng, o));
    add(gradcheck_inputs("head.inputs", [&](const std::vector<VD>& v) { return proj(h(v[0])); }, {d}, rng, o));
  }
  {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    GradcheckOptions ol = o;
    ol.step = 1e-6;
    ol.entries_per_tensor = 0;
    for (const auto& [label, variant] :
         {std::pair<std::string, KlVariant>{"canonical", KlVariant::canonical}, {"paper_literal", KlVariant::paper_literal}}) {
      TD e({1, 8, 8}), g({1, 8, 8});
      for (auto& v : e.vec()) v = u(rng);
      for (auto& v : g.vec()) v = u(rng);
      add(gradcheck_inputs("objectives." + label,
                           [&, variant = variant](const std::vector<VD>& v) { return composite_loss(v[0], g, LossWeights{}, variant); },
                           {e}, rng, ol),
          1e-4);
    }
  }
  {
    // Whole network on a reduced geometry, ten parameter tensors spread over
    // the registration order, one coordinate each.
    ModelConfig c;
    c.encoder.face_hw = {32, 32};
    c.encoder.scene_hw = {32, 64};
    c.encoder.face_channels = {2, 4, 4, 8};
    c.encoder.face_blocks = c.encoder.scene_blocks = {1, 1, 1, 1};
    c.daf.embed_channels = 4;
    c.wnet.heads = 2;
    c.wnet.head_channels = 4;
    EraWNet<double> m(c, rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto image = [&](int h, int w) {
      TD t({3, h, w});
      for (auto& v : t.vec()) v = u(rng);
      return t;
    };
    const TD f1 = image(32, 32), f0 = image(32, 32), s1 = image(32, 64), s0 = image(32, 64);
    const auto all = m.parameters();
    ParamRefs<double> slice;
    for (std::size_t i = 0; i < 10; ++i) slice.push_back(all[i * (all.size() - 1) / 9]);
    auto proj = random_projection({1, 32, 64}, rng);
    GradcheckOptions om;
    om.step = 1e-6;
    om.entries_per_tensor = 1;
    om.max_entries = 10;
    add(gradcheck_params("model.slice",
                         [&] { return proj(m(ModelInput<double>{constant(f1), constant(f0), constant(s1), constant(s0)})); },
                         slice, rng, om));
  }
  return out;
}

// ----------------------------------------------------------------- rendering

/// 8-bit overlay of a heatmap on its scene frame: the scene is shown as dimmed
/// gray in green and blue, red carries the heatmap scaled to its own peak
/// (0..254), and the peak pixel alone is set to 255 so that 8-bit rounding
/// cannot create a tie for the maximum.
inline Image8 render_overlay(const Image8& scene, const Tensor<float>& heat) {
  if (heat.rank() != 3 || heat.dim(0) != 1 || heat.dim(1) != scene.height || heat.dim(2) != scene.width)
    shape_fail("overlay: heatmap ", shape_str(heat.shape()), " does not match scene ", scene.height, "x", scene.width);
  const std::int64_t top = argmax(heat);
  const double peak = heat[top];
  Image8 out(scene.height, scene.width, 3);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      const double luma = 0.299 * scene.at(y, x, 0) + 0.587 * scene.at(y, x, 1) + 0.114 * scene.at(y, x, 2);
      const auto gray = static_cast<std::uint8_t>(std::lround(0.5 * luma));
      const double h = peak > 0 ? std::clamp(double(heat.at(0, y, x)) / peak, 0.0, 1.0) : 0.0;
      out.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(254.0 * h));
      out.at(y, x, 1) = gray;
      out.at(y, x, 2) = gray;
    }
  out.at(int(top / scene.width), int(top % scene.width), 0) = 255;
  return out;
}

/// Index of the strongest heat in an overlay written by render_overlay.
inline std::int64_t overlay_argmax(const Image8& overlay) {
  std::int64_t best = 0;
  int v = -1;
  for (int y = 0; y < overlay.height; ++y)
    for (int x = 0; x < overlay.width; ++x)
      if (overlay.at(y, x, 0) > v) {
        v = overlay.at(y, x, 0);
        best = std::int64_t(y) * overlay.width + x;
      }
  return best;
}

/// Writes `stem`.png (overlay) and `stem`.f32 (raw map) and returns the map.
inline Tensor<float> render_heatmap(const EraWNet<float>& m, const FramePair& p, const std::filesystem::path& stem) {
  Tensor<float> heat = predict(m, p);
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  write_png(std::filesystem::path(stem.string() + ".png"), render_overlay(p.scene_t, heat));
  write_map_f32(std::filesystem::path(stem.string() + ".f32"), heat);
  return heat;
}

}  // namespace eraw
