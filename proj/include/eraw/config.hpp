#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>

#include "eraw/model_config.hpp"
#include "eraw/objectives.hpp"
#include "eraw/optim.hpp"
#include "eraw/synthdata.hpp"

namespace eraw {

using Json = nlohmann::json;

struct TrainConfig {
  int epochs = 30;
  int batch = 8;
  int max_steps = 0;  // 0: no cap beyond epochs
  double lr_low = 2e-4, lr_high = 1e-3;
  int lr_step_size = 0;  // half cycle in steps; 0 selects two epochs
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  std::string precision = "fp32";  // fp32 | mixed (rejected)
  LossWeights loss;
  KlVariant kl_variant = KlVariant::canonical;
};

struct RunConfig {
  std::string preset = "toy";
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

inline RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "toy") {
    c.model = toy_model_config();
  } else if (name == "paper") {
    c.model = paper_model_config();
    c.train.batch = 32;
    c.train.lr_low = 2e-6;
    c.train.lr_high = 1e-5;
    c.data.script.scene_hw = c.model.encoder.scene_hw;
    c.data.script.face_hw = c.model.encoder.face_hw;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "' (expected toy or paper)");
  }
  return c;
}

inline Json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  const auto& s = c.data.script;
  return Json{
      {"preset", c.preset},
      {"conv_bias", m.conv_bias},
      {"encoder",
       {{"face_hw", m.encoder.face_hw},
        {"scene_hw", m.encoder.scene_hw},
        {"face_channels", m.encoder.face_channels},
        {"face_blocks", m.encoder.face_blocks},
        {"scene_blocks", m.encoder.scene_blocks},
        {"stem_kernel", m.encoder.stem_kernel},
        {"mean", m.encoder.mean},
        {"stddev", m.encoder.stddev}}},
      {"daf",
       {{"enabled", m.daf.enabled},
        {"tile", m.daf.tile},
        {"freq_filter", m.daf.freq_filter},
        {"enabled_levels", m.daf.enabled_levels},
        {"embed_channels", m.daf.embed_channels}}},
      {"gcs", {{"enabled", m.gcs.enabled}, {"dilations", m.gcs.dilations}}},
      {"wnet",
       {{"strategy", m.wnet.strategy},
        {"fusion_op", m.wnet.fusion_op},
        {"partial_decode", m.wnet.partial_decode},
        {"heads", m.wnet.heads},
        {"patch", m.wnet.patch},
        {"head_channels", m.wnet.head_channels}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch", t.batch},
        {"max_steps", t.max_steps},
        {"lr_low", t.lr_low},
        {"lr_high", t.lr_high},
        {"lr_step_size", t.lr_step_size},
        {"weight_decay", t.weight_decay},
        {"seed", t.seed},
        {"precision", t.precision},
        {"loss_weights", {t.loss.nss, t.loss.kl, t.loss.sim, t.loss.cc}},
        {"kl_variant", to_string(t.kl_variant)}}},
      {"data",
       {{"sequences", c.data.sequences},
        {"frames", c.data.frames},
        {"seed", c.data.seed},
        {"objects", s.n_objects},
        {"segment", s.segment},
        {"drift", s.drift},
        {"speed_min", s.speed_min},
        {"speed_max", s.speed_max},
        {"fps", s.fps}}}};
}

namespace detail {

/// Reads every key of `j` through `fields`, rejecting unknown ones.
inline void read_object(const Json& j, const std::string& where,
                        const std::map<std::string, std::function<void(const Json&)>>& fields) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    auto it = fields.find(k);
    if (it == fields.end()) throw std::invalid_argument("config: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
    try {
      it->second(v);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config: bad value for '" + (where.empty() ? k : where + "." + k) + "': " + e.what());
    }
  }
}

template <class T>
std::function<void(const Json&)> into(T& dst) {
  return [&dst](const Json& v) { dst = v.get<T>(); };
}

}  // namespace detail

/// Builds a configuration from JSON: the preset named in `j` (default toy)
/// supplies every value that `j` leaves out.
inline RunConfig from_json(const Json& j) {
  RunConfig c = preset_config(j.value("preset", std::string("toy")));
  auto& m = c.model;
  auto& t = c.train;
  auto& s = c.data.script;
  std::string kl = to_string(t.kl_variant);
  std::vector<double> lw{t.loss.nss, t.loss.kl, t.loss.sim, t.loss.cc};
  using detail::into;
  detail::read_object(
      j, "",
      {{"preset", [](const Json&) {}},
       {"conv_bias", into(m.conv_bias)},
       {"encoder",
        [&](const Json& v) {
          detail::read_object(v, "encoder",
                              {{"face_hw", into(m.encoder.face_hw)},
                               {"scene_hw", into(m.encoder.scene_hw)},
                               {"face_channels", into(m.encoder.face_channels)},
                               {"face_blocks", into(m.encoder.face_blocks)},
                               {"scene_blocks", into(m.encoder.scene_blocks)},
                               {"stem_kernel", into(m.encoder.stem_kernel)},
                               {"mean", into(m.encoder.mean)},
                               {"stddev", into(m.encoder.stddev)}});
        }},
       {"daf",
        [&](const Json& v) {
          detail::read_object(v, "daf",
                              {{"enabled", into(m.daf.enabled)},
                               {"tile", into(m.daf.tile)},
                               {"freq_filter", into(m.daf.freq_filter)},
                               {"enabled_levels", into(m.daf.enabled_levels)},
                               {"embed_channels", into(m.daf.embed_channels)}});
        }},
       {"gcs",
        [&](const Json& v) {
          detail::read_object(v, "gcs", {{"enabled", into(m.gcs.enabled)}, {"dilations", into(m.gcs.dilations)}});
        }},
       {"wnet",
        [&](const Json& v) {
          detail::read_object(v, "wnet",
                              {{"strategy", into(m.wnet.strategy)},
                               {"fusion_op", into(m.wnet.fusion_op)},
                               {"partial_decode", into(m.wnet.partial_decode)},
                               {"heads", into(m.wnet.heads)},
                               {"patch", into(m.wnet.patch)},
                               {"head_channels", into(m.wnet.head_channels)}});
        }},
       {"train",
        [&](const Json& v) {
          detail::read_object(v, "train",
                              {{"epochs", into(t.epochs)},
                               {"batch", into(t.batch)},
                               {"max_steps", into(t.max_steps)},
                               {"lr_low", into(t.lr_low)},
                               {"lr_high", into(t.lr_high)},
                               {"lr_step_size", into(t.lr_step_size)},
                               {"weight_decay", into(t.weight_decay)},
                               {"seed", into(t.seed)},
                               {"precision", into(t.precision)},
                               {"loss_weights", into(lw)},
                               {"kl_variant", into(kl)}});
        }},
       {"data", [&](const Json& v) {
          detail::read_object(v, "data",
                              {{"sequences", into(c.data.sequences)},
                               {"frames", into(c.data.frames)},
                               {"seed", into(c.data.seed)},
                               {"objects", into(s.n_objects)},
                               {"segment", into(s.segment)},
                               {"drift", into(s.drift)},
                               {"speed_min", into(s.speed_min)},
                               {"speed_max", into(s.speed_max)},
                               {"fps", into(s.fps)}});
        }}});
  if (lw.size() != 4) throw std::invalid_argument("config: train.loss_weights needs 4 values");
  t.loss = {lw[0], lw[1], lw[2], lw[3]};
  t.kl_variant = parse_kl_variant(kl);
  s.scene_hw = m.encoder.scene_hw;
  s.face_hw = m.encoder.face_hw;
  return c;
}

/// Rejects settings that cannot run.
inline void validate(const RunConfig& c) {
  CyclicLr{c.train.lr_low, c.train.lr_high, 1}.validate();
  if (c.train.epochs < 1 || c.train.batch < 1 || c.train.max_steps < 0 || c.train.lr_step_size < 0)
    throw std::invalid_argument("config: epochs and batch must be >= 1, max_steps and lr_step_size >= 0");
  if (c.train.precision == "mixed")
    throw std::invalid_argument("config: mixed precision is not supported; use fp32 (gradchecks always run in double)");
  if (c.train.precision != "fp32") throw std::invalid_argument("config: precision must be fp32");
  PyramidSpec::from(c.model.encoder);
  if (c.model.daf.freq_filter != "shared" && c.model.daf.freq_filter != "per_bin")
    throw std::invalid_argument("config: daf.freq_filter must be shared or per_bin");
}

/// Parses a `--set` value: JSON when it parses, otherwise a plain string.
inline Json parse_override_value(const std::string& v) {
  Json j = Json::parse(v, nullptr, false);
  return j.is_discarded() ? Json(v) : j;
}

/// Applies `key=value` with a dotted key (e.g. daf.enabled=false).
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw std::invalid_argument("--set: empty key component in '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = parse_override_value(assignment.substr(eq + 1));
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

/// File (optional) + overrides -> validated configuration. Overrides may
/// change the preset; the file and remaining overrides then patch it.
inline RunConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& sets) {
  Json j = Json::object();
  if (file) {
    std::ifstream is(*file);
    if (!is) throw std::runtime_error("cannot open config " + file->string());
    try {
      j = Json::parse(is, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument("config " + file->string() + ": " + e.what());
    }
  }
  for (const auto& s : sets) apply_override(j, s);
  RunConfig c = from_json(j);
  validate(c);
  return c;
}

}  // namespace eraw
