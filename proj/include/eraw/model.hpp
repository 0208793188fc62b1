#pragma once

#include "eraw/daf.hpp"
#include "eraw/wnet.hpp"

namespace eraw {

/// Two consecutive face frames and scene frames, RGB in [0,1].
template <class T>
struct ModelInput {
  Var<T> face_t, face_prev, scene_t, scene_prev;
};

inline const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names{"wnet", "decision", "late", "hierarchical"};
  return names;
}

/// Full dual-view attention estimator with its baseline fusion strategies.
/// Components that a configuration disables are not constructed and own no
/// parameters.
template <class T>
struct EraWNet {
  ModelConfig cfg;
  PyramidSpec spec;
  FaceEncoder<T> face;
  SceneEncoder<T> scene;
  std::optional<DafModule<T>> daf_face, daf_scene;
  std::optional<GcsModule<T>> gcs;
  std::optional<CshaCascade<T>> decode_face, decode_scene;
  std::array<std::optional<FusionUnit<T>>, 4> fusion;
  std::optional<CshaCascade<T>> decode_fused;
  DecodingHead<T> head;
  std::optional<DecodingHead<T>> head_face;

  EraWNet(const ModelConfig& c, Rng& rng)
      : cfg(c), spec(PyramidSpec::from(c.encoder)), face(c.encoder, rng), scene(c.encoder, c.conv_bias, rng) {
    const auto& st = strategy_names();
    if (std::find(st.begin(), st.end(), c.wnet.strategy) == st.end())
      throw std::invalid_argument("unknown fusion strategy '" + c.wnet.strategy +
                                  "' (expected wnet, decision, late or hierarchical)");
    if (c.wnet.patch.size() != 4) throw std::invalid_argument("wnet.patch must list 4 levels");
    const bool bias = c.conv_bias;
    std::array<Shape, 4> face_shapes, scene_shapes;
    for (int i = 0; i < 4; ++i) {
      face_shapes[i] = spec.face_level_shape(i + 1);
      scene_shapes[i] = spec.scene_level_shape(i + 1);
    }
    if (c.daf.enabled) {
      daf_face.emplace("daf_face", c.daf, face_shapes, bias, rng);
      daf_scene.emplace("daf_scene", c.daf, scene_shapes, bias, rng);
    }
    if (c.gcs.enabled) gcs.emplace("gcs", spec.face_channels, c.gcs, bias, rng);
    if (uses_partial_decode()) {
      decode_face.emplace("decode_face", spec.face_channels, bias, rng);
      decode_scene.emplace("decode_scene", spec.face_channels, bias, rng);
    }
    const std::string& s = c.wnet.strategy;
    for (int i = 0; i < 4; ++i) {
      if (s == "decision" || (s == "late" && i < 3)) continue;
      fusion[i].emplace(concat_msg("fuse", i + 1), c.wnet.fusion_op, spec.face_channels[i], c.wnet.heads,
                        c.wnet.patch[i], c.wnet.patch[i], std::array<int, 2>{face_shapes[i][1], face_shapes[i][2]},
                        std::array<int, 2>{scene_shapes[i][1], scene_shapes[i][2]}, bias, rng);
    }
    if (s != "decision") decode_fused.emplace("decode_fused", spec.face_channels, bias, rng);
    head = DecodingHead<T>("head", spec.face_channels[0], c.wnet.head_channels, bias, rng);
    if (s == "decision") head_face.emplace("head_face", spec.face_channels[0], c.wnet.head_channels, bias, rng);
  }

  bool uses_partial_decode() const {
    return cfg.wnet.strategy == "decision" || (cfg.wnet.strategy == "wnet" && cfg.wnet.partial_decode);
  }

  /// Encoded, enhanced (and for the face, context-shared) pyramids.
  std::pair<FeaturePyramid<T>, FeaturePyramid<T>> encode(const ModelInput<T>& in) const {
    FeaturePyramid<T> f = face.encode(in.face_t), s = scene.encode(in.scene_t);
    if (daf_face) {
      f = (*daf_face)(f, face.encode(in.face_prev));
      s = (*daf_scene)(s, scene.encode(in.scene_prev));
    }
    if (gcs) f = (*gcs)(f);
    return {f, s};
  }

  Var<T> forward(const ModelInput<T>& in) const {
    auto [f, s] = encode(in);
    const std::string& st = cfg.wnet.strategy;
    if (st == "decision") {
      auto sp = (*decode_scene)(s)[0];
      auto fp = (*decode_face)(f)[0];
      auto hs = head(sp);
      auto hf = (*head_face)(resample_to(fp, sp.dim(1), sp.dim(2)));
      return scale(add(hs, hf), T(0.5));
    }
    if (st == "late") {
      FeaturePyramid<T> pyr{s[0], s[1], s[2], (*fusion[3])(s[3], f[3])};
      return head((*decode_fused)(pyr)[0]);
    }
    if (decode_face) {
      f = (*decode_face)(f);
      s = (*decode_scene)(s);
    }
    FeaturePyramid<T> d;
    for (int i = 0; i < 4; ++i) d[i] = (*fusion[i])(s[i], f[i]);
    return head((*decode_fused)(d)[0]);
  }

  Var<T> operator()(const ModelInput<T>& in) const { return forward(in); }

  ParamRefs<T> parameters() {
    ParamRefs<T> out;
    face.collect(out);
    scene.collect(out);
    if (daf_face) {
      daf_face->collect(out);
      daf_scene->collect(out);
    }
    if (gcs) gcs->collect(out);
    if (decode_face) {
      decode_face->collect(out);
      decode_scene->collect(out);
    }
    for (auto& u : fusion)
      if (u) u->collect(out);
    if (decode_fused) decode_fused->collect(out);
    head.collect(out);
    if (head_face) head_face->collect(out);
    return out;
  }
};

/// Copies parameter values between models by name (with precision cast).
/// Returns the number of tensors copied; shapes must agree.
template <class Dst, class Src>
int copy_parameters(const ParamRefs<Dst>& dst, const ParamRefs<Src>& src) {
  std::unordered_map<std::string, const Parameter<Src>*> by_name;
  for (auto* p : src) by_name[p->name] = p;
  int n = 0;
  for (auto* p : dst) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) continue;
    if (it->second->value.shape() != p->value.shape()) shape_fail("parameter ", p->name, " shape mismatch");
    p->value = it->second->value.template cast<Dst>();
    ++n;
  }
  return n;
}

}  // namespace eraw
