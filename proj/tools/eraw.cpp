#include <CLI11.hpp>

#include <iostream>

#include "eraw/eraw.hpp"

using namespace eraw;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string preset;
  std::string kl_variant;
  std::string loss_weights;
  std::string precision;

  void add_to(CLI::App* app) {
    app->add_option("-c,--config", config_file, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override a config value, e.g. --set daf.enabled=false");
    app->add_option("--preset", preset, "toy or paper");
    app->add_option("--kl-variant", kl_variant, "canonical or paper_literal");
    app->add_option("--loss-weights", loss_weights, "rho1,rho2,rho3,rho4 for NSS,KL,SIM,CC");
    app->add_option("--precision", precision, "fp32 (mixed is rejected)");
  }

  RunConfig resolve() const {
    std::vector<std::string> all;
    if (!preset.empty()) all.push_back("preset=" + preset);
    all.insert(all.end(), sets.begin(), sets.end());
    if (!kl_variant.empty()) all.push_back("train.kl_variant=" + kl_variant);
    if (!precision.empty()) all.push_back("train.precision=" + precision);
    if (!loss_weights.empty()) {
      const LossWeights w = LossWeights::parse(loss_weights);
      all.push_back(concat_msg("train.loss_weights=[", w.nss, ",", w.kl, ",", w.sim, ",", w.cc, "]"));
    }
    return load_config(config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file), all);
  }
};

void say(const std::string& s) { std::cerr << s << std::endl; }

Dataset dataset_for(const RunConfig& c, const std::string& dir) {
  if (dir.empty()) return to_dataset(generate_sequences(c.data));
  LoadReport rep = load_dataset(dir);
  if (rep.skipped) {
    say(concat_msg("skipped ", rep.skipped, " corrupt record(s)"));
    for (const auto& p : rep.problems) say("  " + p);
  }
  return std::move(rep.pairs);
}

Dataset split_or_all(const Dataset& d, const std::string& split) {
  if (split == "all") return d;
  Dataset s = select_split(d, split);
  if (s.empty()) throw std::runtime_error("dataset has no '" + split + "' pairs");
  return s;
}

std::string describe(const RunConfig& c) {
  const auto& w = c.model.wnet;
  return concat_msg("preset ", c.preset, ", strategy ", w.strategy, ", fusion ", w.fusion_op, ", partial decode ",
                    w.partial_decode ? "on" : "off", ", daf ", c.model.daf.enabled ? "on" : "off", ", gcs ",
                    c.model.gcs.enabled ? "on" : "off", ", seed ", c.train.seed);
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoull(tok));
  if (out.empty()) throw std::invalid_argument("--seeds needs at least one value");
  return out;
}

int cmd_gen_data(const Common& com, const std::string& out) {
  const RunConfig c = com.resolve();
  const auto seqs = generate_sequences(c.data);
  save_dataset(seqs, out);
  int clamped = 0;
  for (const auto& s : seqs) clamped += s.clamped;
  const Dataset d = to_dataset(seqs);
  int bad = 0;
  for (const auto& p : d) bad += !validate_pair(p).empty();
  std::cout << "wrote " << seqs.size() << " sequences, " << d.size() << " pairs to " << out << '\n';
  if (clamped) say(concat_msg("warning: ", clamped, " object position(s) clamped to stay in view"));
  if (bad) say(concat_msg("error: ", bad, " pair(s) violate the target invariants"));
  return bad ? 1 : 0;
}

int cmd_train(const Common& com, const std::string& out, const std::string& data) {
  const RunConfig c = com.resolve();
  say(describe(c));
  const Dataset d = dataset_for(c, data);
  const Dataset tr = select_split(d, "train"), val = select_split(d, "val"), te = select_split(d, "test");
  Rng rng(c.train.seed);
  EraWNet<float> m(c.model, rng);
  const TrainResult r = train(m, tr, val, c, {fs::path(out), say, {}});
  const Dataset& held = te.empty() ? val : te;
  if (!held.empty()) {
    const std::vector<MetricRow> rows{evaluate_center_bias(held, c.train.kl_variant).row,
                                      evaluate(m, held, c.train.kl_variant, "model").row};
    write_metrics_csv(fs::path(out) / "metrics.csv", rows);
    std::cout << format_table(rows);
  }
  if (r.aborted) {
    say("training aborted: " + r.abort_reason);
    return 1;
  }
  return 0;
}

int cmd_eval(const Common& com, const std::string& ckpt, const std::string& data, const std::string& split,
             const std::string& out) {
  auto [c, m] = load_model(ckpt);
  if (!com.kl_variant.empty()) c.train.kl_variant = parse_kl_variant(com.kl_variant);
  const Dataset d = split_or_all(dataset_for(c, data), split);
  const std::vector<MetricRow> rows{evaluate_center_bias(d, c.train.kl_variant).row,
                                    evaluate(m, d, c.train.kl_variant, "model").row};
  std::cout << format_table(rows);
  if (!out.empty()) write_metrics_csv(out, rows);
  return 0;
}

int cmd_ablate(const Common& com, const std::string& out, const std::string& data, const std::string& seeds,
               bool strategies, bool check) {
  const RunConfig c = com.resolve();
  const Dataset d = dataset_for(c, data);
  std::vector<Variant> vs = ablation_variants(c.model);
  if (strategies)
    for (auto& v : strategy_variants(c.model)) vs.push_back(v);
  fs::create_directories(out);
  write_run_files(out, c);
  const AblationResult r = run_ablation(c, vs, parse_seeds(seeds), select_split(d, "train"), select_split(d, "val"),
                                        select_split(d, "test"), fs::path(out), say);
  std::vector<MetricRow> rows{r.center_bias};
  for (const auto& row : r.rows) rows.push_back(row.mean);
  std::cout << format_table(rows);
  write_metrics_csv(fs::path(out) / "metrics.csv", rows);
  int failed = 0;
  for (const auto& k : ablation_checks(r)) {
    std::cout << (k.pass() ? "PASS " : "FAIL ") << k.claim << ": " << k.better << " vs " << k.worse << '\n';
    failed += !k.pass();
  }
  return check && failed ? 1 : 0;
}

int cmd_gradcheck(const std::vector<std::string>& modules, std::uint64_t seed) {
  int failed = 0, shown = 0;
  for (const auto& r : gradcheck_suite(seed)) {
    const std::string group = r.report.name.substr(0, r.report.name.find('.'));
    if (!modules.empty() && std::find(modules.begin(), modules.end(), group) == modules.end()) continue;
    ++shown;
    std::cout << (r.pass() ? "PASS " : "FAIL ") << r.report.name << ": " << r.report.checked << " entries, max rel err "
              << r.report.max_rel_err << " (tol " << r.tol << ")";
    if (!r.report.finite) std::cout << ", non-finite at " << r.report.non_finite_at;
    else if (!r.pass()) std::cout << ", worst at " << r.report.worst.where;
    std::cout << '\n';
    failed += !r.pass();
  }
  if (!shown) throw std::invalid_argument("no gradient check matches the requested modules");
  return failed ? 1 : 0;
}

int cmd_heatmap(const std::string& ckpt, const std::string& data, const std::string& split, int index,
                const std::string& out) {
  auto [c, m] = load_model(ckpt);
  const Dataset d = split_or_all(dataset_for(c, data), split);
  if (index < 0 || index >= int(d.size())) throw std::out_of_range(concat_msg("--index must be in [0, ", d.size(), ")"));
  const FramePair& p = d[std::size_t(index)];
  const Tensor<float> h = render_heatmap(m, p, out);
  const auto am = argmax(h);
  std::cout << "sequence " << p.seq << " frame " << p.frame << ": peak at (" << am % h.dim(2) << ", " << am / h.dim(2)
            << "), gaze at (" << p.gaze.x << ", " << p.gaze.y << "); wrote " << out << ".png and " << out << ".f32\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-view driver attention estimation: data, training, evaluation and checks"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, ablate_c;
  std::string out, data, ckpt, split = "test", seeds = "1,2,3";
  bool no_strategies = false, check = false;
  int index = 0;
  std::uint64_t gc_seed = 1;
  std::vector<std::string> modules;

  auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset to disk");
  gen_c.add_to(gen);
  gen->add_option("-o,--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train one model; writes a run directory");
  train_c.add_to(tr);
  tr->add_option("-o,--out", out, "Run directory")->required();
  tr->add_option("-d,--data", data, "Dataset directory (default: generate from the config)");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint against the center-bias baseline");
  eval_c.add_to(ev);
  ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("-d,--data", data, "Dataset directory (default: generate from the checkpoint config)");
  ev->add_option("--split", split, "train, val, test or all");
  ev->add_option("-o,--out", out, "Write the table as CSV");

  auto* ab = app.add_subcommand("ablate", "Component and fusion-strategy ablation over several seeds");
  ablate_c.add_to(ab);
  ab->add_option("-o,--out", out, "Output directory")->required();
  ab->add_option("-d,--data", data, "Dataset directory (default: generate from the config)");
  ab->add_option("--seeds", seeds, "Comma-separated seeds");
  ab->add_flag("--no-strategies", no_strategies, "Skip the decision/late/hierarchical rows");
  ab->add_flag("--check", check, "Exit 1 if a KL ordering does not hold");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks in double precision");
  gc->add_option("-m,--module", modules, "daf, gcs, csha, mhca, head, objectives, model (default: all)");
  gc->add_option("--seed", gc_seed, "Random instance seed");

  auto* hm = app.add_subcommand("gen-heatmap", "Render a predicted heatmap over its scene frame");
  hm->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  hm->add_option("-d,--data", data, "Dataset directory (default: generate from the checkpoint config)");
  hm->add_option("--split", split, "train, val, test or all");
  hm->add_option("--index", index, "Pair index within the split");
  hm->add_option("-o,--out", out, "Output path without extension")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_gen_data(gen_c, out);
    if (tr->parsed()) return cmd_train(train_c, out, data);
    if (ev->parsed()) return cmd_eval(eval_c, ckpt, data, split, out);
    if (ab->parsed()) return cmd_ablate(ablate_c, out, data, seeds, !no_strategies, check);
    if (gc->parsed()) return cmd_gradcheck(modules, gc_seed);
    if (hm->parsed()) return cmd_heatmap(ckpt, data, split, index, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
