#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "eraw/groundtruth.hpp"
#include "eraw/image_io.hpp"
#include "eraw/model.hpp"

namespace eraw {

/// Procedural sequence description. Only the attended object moves in the
/// world; the camera drifts by whole pixels, so frame-to-frame homographies
/// are exact translations.
struct SceneScript {
  std::uint64_t seed = 0;
  int n_frames = 16;
  std::array<int, 2> scene_hw{96, 160};
  std::array<int, 2> face_hw{64, 64};
  int n_objects = 3;
  int segment = 8;                  // frames per gaze segment
  int drift = 2;                    // max camera drift per axis, px/frame
  std::optional<std::array<int, 2>> fixed_drift;  // overrides the random drift
  int speed_min = 1, speed_max = 2;  // attended object, px/frame
  int fps = 2;                       // ground-truth window spans one second
};

struct Sequence {
  int id = 0;
  std::string split = "train";
  std::vector<Image8> face, scene;
  std::vector<GazeSample> gaze;  // H maps frame k into frame 0
  std::vector<Tensor<float>> gt;
  int clamped = 0;  // trajectory points pulled back inside the frame
};

/// Two consecutive frames of both views with the target for the later one.
struct FramePair {
  int seq = 0, frame = 0;
  std::string split;
  Image8 face_t, face_prev, scene_t, scene_prev;
  Point2 gaze;
  Tensor<float> gt;

  template <class T>
  ModelInput<T> input() const {
    return {constant(to_tensor<T>(face_t)), constant(to_tensor<T>(face_prev)), constant(to_tensor<T>(scene_t)),
            constant(to_tensor<T>(scene_prev))};
  }
};

namespace synth {

inline constexpr int FP = 16;  // fixed-point subdivisions per pixel

inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash3(std::uint64_t s, std::int64_t a, std::int64_t b) {
  return mix(s ^ mix(static_cast<std::uint64_t>(a) * 0x100000001b3ull ^ mix(static_cast<std::uint64_t>(b))));
}

inline int uniform(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

struct Rgb {
  int r, g, b;
};

/// Coverage (0..16) of a pixel by an axis-aligned ellipse, 4x4 supersampled.
/// Centre and semi-axes are in fixed point.
inline int coverage(int x, int y, std::int64_t cx, std::int64_t cy, std::int64_t ax, std::int64_t ay) {
  int k = 0;
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i) {
      const std::int64_t dx = std::int64_t(x) * FP + 2 + 4 * i - cx, dy = std::int64_t(y) * FP + 2 + 4 * j - cy;
      if (dx * dx * ay * ay + dy * dy * ax * ax <= ax * ax * ay * ay) ++k;
    }
  return k;
}

inline void blend_ellipse(Image8& img, std::int64_t cx, std::int64_t cy, std::int64_t ax, std::int64_t ay, Rgb c) {
  const int x0 = std::max<int>(0, static_cast<int>((cx - ax) / FP) - 1),
            x1 = std::min<int>(img.width - 1, static_cast<int>((cx + ax) / FP) + 1);
  const int y0 = std::max<int>(0, static_cast<int>((cy - ay) / FP) - 1),
            y1 = std::min<int>(img.height - 1, static_cast<int>((cy + ay) / FP) + 1);
  const int col[3] = {c.r, c.g, c.b};
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const int k = coverage(x, y, cx, cy, ax, ay);
      if (!k) continue;
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = static_cast<std::uint8_t>((img.at(y, x, ch) * (16 - k) + col[ch] * k + 8) / 16);
    }
}

inline std::uint8_t clamp8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

struct Object {
  std::int64_t x, y;  // world centre, fixed point
  int r;              // px
  Rgb color;
};

inline Image8 render_scene(const SceneScript& s, const std::vector<Object>& objs, int cam_x, int cam_y, int frame) {
  const int H = s.scene_hw[0], W = s.scene_hw[1];
  Image8 img(H, W, 3);
  const int horizon = H * 3 / 8;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int wx = x + cam_x, wy = y + cam_y;
      const std::uint64_t h = hash3(s.seed, wx >> 2, wy >> 2);
      const int tex = static_cast<int>(h % 25) - 12;
      const int noise = static_cast<int>(hash3(s.seed ^ 0x5eedull, frame * 65536 + y, x) % 5) - 2;
      Rgb c;
      if (wy < horizon) {
        c = {90 + tex / 2, 130 + tex / 2, 190 + tex / 2};
      } else {
        const bool stripe = ((wx % 40) + 40) % 40 < 3 && ((wy % 12) + 12) % 12 < 7;
        c = stripe ? Rgb{225, 225, 215} : Rgb{95 + tex, 95 + tex, 100 + tex};
      }
      img.at(y, x, 0) = clamp8(c.r + noise);
      img.at(y, x, 1) = clamp8(c.g + noise);
      img.at(y, x, 2) = clamp8(c.b + noise);
    }
  for (const auto& o : objs)
    blend_ellipse(img, o.x - std::int64_t(cam_x) * FP, o.y - std::int64_t(cam_y) * FP, std::int64_t(o.r) * FP,
                  std::int64_t(o.r) * FP, o.color);
  return img;
}

/// Procedural face whose head position and pupils follow the gaze point
/// (gx, gy in fixed-point scene pixels).
inline Image8 render_face(const SceneScript& s, std::int64_t gx, std::int64_t gy, int frame) {
  const int H = s.face_hw[0], W = s.face_hw[1];
  const std::int64_t Hs = s.scene_hw[0], Ws = s.scene_hw[1];
  Image8 img(H, W, 3);
  const std::uint64_t look = mix(s.seed ^ 0xfaceull);
  const Rgb cabin{40 + int(look % 30), 40 + int((look >> 8) % 30), 45 + int((look >> 16) % 30)};
  const Rgb skin{170 + int((look >> 24) % 60), 120 + int((look >> 32) % 50), 90 + int((look >> 40) % 40)};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int noise = static_cast<int>(hash3(s.seed ^ 0xcab1ull, frame * 65536 + y, x) % 5) - 2;
      img.at(y, x, 0) = clamp8(cabin.r + noise);
      img.at(y, x, 1) = clamp8(cabin.g + noise);
      img.at(y, x, 2) = clamp8(cabin.b + noise);
    }
  // Signed gaze offsets in fixed point: u * scale px with u = 2 g / S - 1.
  const std::int64_t ux = 2 * gx - Ws * FP, uy = 2 * gy - Hs * FP;
  const std::int64_t head_x = std::int64_t(W) * FP / 2 + ux * 6 * W / (Ws * 100);
  const std::int64_t head_y = std::int64_t(H) * FP / 2 + uy * 4 * H / (Hs * 100);
  blend_ellipse(img, head_x, head_y, std::int64_t(W) * FP * 32 / 100, std::int64_t(H) * FP * 40 / 100, skin);
  const std::int64_t pdx = ux * 6 * W / (Ws * 100), pdy = uy * 4 * H / (Hs * 100);
  for (int side : {-1, 1}) {
    const std::int64_t ex = head_x + side * std::int64_t(W) * FP * 14 / 100, ey = head_y - std::int64_t(H) * FP * 8 / 100;
    blend_ellipse(img, ex, ey, std::int64_t(W) * FP * 10 / 100, std::int64_t(H) * FP * 6 / 100, {235, 235, 235});
    blend_ellipse(img, ex + pdx, ey + pdy, std::int64_t(W) * FP * 4 / 100, std::int64_t(W) * FP * 4 / 100, {25, 20, 20});
  }
  blend_ellipse(img, head_x, head_y + std::int64_t(H) * FP * 20 / 100, std::int64_t(W) * FP * 10 / 100,
                std::int64_t(H) * FP * 2 / 100, {120, 50, 50});
  return img;
}

inline Homography translation(double tx, double ty) {
  Homography h = Homography::Identity();
  h(0, 2) = tx;
  h(1, 2) = ty;
  return h;
}

}  // namespace synth

/// Renders a sequence and its sequential fixation targets. Identical scripts
/// give bitwise-identical output.
inline Sequence generate_sequence(const SceneScript& s, int id = 0) {
  using namespace synth;
  if (s.n_frames < 2 || s.n_objects < 1 || s.segment < 1 || s.fps < 1 || s.speed_min < 0 || s.speed_max < s.speed_min ||
      s.drift < 0)
    throw std::invalid_argument("generate_sequence: invalid script");
  const int H = s.scene_hw[0], W = s.scene_hw[1];
  Rng rng(s.seed);
  const int r_min = std::max(3, H / 16), r_max = std::max(r_min, H / 11);
  const Rgb palette[6] = {{220, 40, 40}, {240, 200, 30}, {40, 180, 60}, {230, 110, 20}, {200, 60, 200}, {30, 200, 210}};
  const int pick = uniform(rng, 0, 5);
  std::vector<Object> objs;
  for (int i = 0; i < s.n_objects; ++i) {
    const int r = uniform(rng, r_min, r_max);
    const int m = r + 2;
    objs.push_back({std::int64_t(uniform(rng, m, W - 1 - m)) * FP + FP / 2, std::int64_t(uniform(rng, m, H - 1 - m)) * FP + FP / 2, r,
                    palette[(pick + i) % 6]});
  }
  Sequence seq;
  seq.id = id;
  int cam_x = 0, cam_y = 0, dx = 0, dy = 0, vx = 0, vy = 0, attended = 0;
  const int dirs[8][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
  for (int f = 0; f < s.n_frames; ++f) {
    if (f % s.segment == 0) {
      const int seg = f / s.segment;
      if (s.fixed_drift) {
        dx = (*s.fixed_drift)[0];
        dy = (*s.fixed_drift)[1];
      } else {
        dx = uniform(rng, 0, s.drift) * (seg % 2 ? -1 : 1);
        dy = uniform(rng, -s.drift, s.drift);
      }
      attended = uniform(rng, 0, s.n_objects - 1);
      const int speed = uniform(rng, s.speed_min, s.speed_max);
      const int* d = dirs[uniform(rng, 0, 7)];
      vx = d[0] * speed;
      vy = d[1] * speed;
    }
    if (f > 0) {
      auto& o = objs[attended];
      const auto out_x = [&](std::int64_t x) { return x / FP - cam_x < o.r + 1 || x / FP - cam_x > W - o.r - 2; };
      const auto out_y = [&](std::int64_t y) { return y / FP - cam_y < o.r + 1 || y / FP - cam_y > H - o.r - 2; };
      // The camera turns back rather than lose the attended object.
      cam_x += dx;
      if (out_x(o.x)) {
        cam_x -= 2 * dx;
        dx = -dx;
      }
      cam_y += dy;
      if (out_y(o.y)) {
        cam_y -= 2 * dy;
        dy = -dy;
      }
      if (out_x(o.x + std::int64_t(vx) * FP)) vx = -vx;
      if (out_y(o.y + std::int64_t(vy) * FP)) vy = -vy;
      o.x += std::int64_t(vx) * FP;
      o.y += std::int64_t(vy) * FP;
    }
    // Keep every object inside the current view.
    for (auto& o : objs) {
      const std::int64_t lo_x = std::int64_t(cam_x + o.r + 1) * FP + FP / 2, hi_x = std::int64_t(cam_x + W - o.r - 2) * FP + FP / 2;
      const std::int64_t lo_y = std::int64_t(cam_y + o.r + 1) * FP + FP / 2, hi_y = std::int64_t(cam_y + H - o.r - 2) * FP + FP / 2;
      const std::int64_t nx = std::clamp(o.x, lo_x, hi_x), ny = std::clamp(o.y, lo_y, hi_y);
      if (nx != o.x || ny != o.y) ++seq.clamped;
      o.x = nx;
      o.y = ny;
    }
    const auto& a = objs[attended];
    const std::int64_t gx = a.x - std::int64_t(cam_x) * FP, gy = a.y - std::int64_t(cam_y) * FP;
    seq.scene.push_back(render_scene(s, objs, cam_x, cam_y, f));
    seq.face.push_back(render_face(s, gx, gy, f));
    // Pixel centres sit at integer coordinates, so subtract half a pixel.
    seq.gaze.push_back({f, {double(gx) / FP - 0.5, double(gy) / FP - 0.5}, translation(cam_x, cam_y)});
  }
  for (int c = 0; c < s.n_frames; ++c) {
    GazeTrack tr;
    tr.current = c;
    tr.window = s.fps;
    const Homography to_c = seq.gaze[c].H.inverse();
    for (int k = std::max(0, c - s.fps + 1); k <= c; ++k) tr.samples.push_back({k, seq.gaze[k].p, to_c * seq.gaze[k].H});
    seq.gt.push_back(sequential_fixation_heatmap(tr, H, W).cast<float>());
  }
  return seq;
}

/// Frame pairs (k-1, k) for k = 1..n-1.
inline std::vector<FramePair> frame_pairs(const Sequence& s) {
  std::vector<FramePair> out;
  for (std::size_t k = 1; k < s.scene.size(); ++k)
    out.push_back({s.id, static_cast<int>(k), s.split, s.face[k], s.face[k - 1], s.scene[k], s.scene[k - 1], s.gaze[k].p, s.gt[k]});
  return out;
}

struct DataConfig {
  int sequences = 40;
  int frames = 16;
  std::uint64_t seed = 1;
  SceneScript script;  // seed and n_frames are overridden per sequence
};

/// Every fifth sequence (offset 3) is validation, offset 4 is test.
inline std::string split_of(int seq) {
  const int m = seq % 5;
  return m == 3 ? "val" : m == 4 ? "test" : "train";
}

inline std::vector<Sequence> generate_sequences(const DataConfig& c) {
  if (c.sequences < 1) throw std::invalid_argument("generate: at least one sequence required");
  std::vector<Sequence> out;
  for (int i = 0; i < c.sequences; ++i) {
    SceneScript s = c.script;
    s.seed = synth::mix(c.seed * 1000003ull + static_cast<std::uint64_t>(i));
    s.n_frames = c.frames;
    out.push_back(generate_sequence(s, i));
    out.back().split = split_of(i);
  }
  return out;
}

using Dataset = std::vector<FramePair>;

inline Dataset to_dataset(const std::vector<Sequence>& seqs) {
  Dataset d;
  for (const auto& s : seqs)
    for (auto& p : frame_pairs(s)) d.push_back(std::move(p));
  return d;
}

inline Dataset select_split(const Dataset& d, const std::string& split) {
  Dataset out;
  for (const auto& p : d)
    if (p.split == split) out.push_back(p);
  return out;
}

namespace synth {

inline std::string frame_name(int k, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.%s", k, ext);
  return buf;
}

inline std::string seq_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%04d", id);
  return buf;
}

}  // namespace synth

/// Writes root/seq_XXXX/{face,scene}/NNNNNN.png, gaze.csv, gt/NNNNNN.f32 (plus
/// an 8-bit gt/NNNNNN.png preview) and root/index.csv listing every pair.
inline void save_dataset(const std::vector<Sequence>& seqs, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::ofstream idx(root / "index.csv");
  if (!idx) throw std::runtime_error("cannot write " + (root / "index.csv").string());
  idx << "sequence,frame,split\n";
  for (const auto& s : seqs) {
    const fs::path dir = root / synth::seq_name(s.id);
    for (const char* sub : {"face", "scene", "gt"}) fs::create_directories(dir / sub);
    for (std::size_t k = 0; k < s.scene.size(); ++k) {
      write_png(dir / "face" / synth::frame_name(int(k), "png"), s.face[k]);
      write_png(dir / "scene" / synth::frame_name(int(k), "png"), s.scene[k]);
      write_map_f32(dir / "gt" / synth::frame_name(int(k), "f32"), s.gt[k]);
      write_png(dir / "gt" / synth::frame_name(int(k), "png"), to_image(s.gt[k]));
      if (k > 0) idx << s.id << ',' << k << ',' << s.split << '\n';
    }
    write_gaze_csv(dir / "gaze.csv", s.gaze);
  }
}

/// Checks the pair invariants: matching sizes, finite target in [0,1] with
/// its peak within one pixel of the gaze point, gaze inside the scene.
inline std::string validate_pair(const FramePair& p) {
  const int H = p.scene_t.height, W = p.scene_t.width;
  if (p.scene_prev.height != H || p.scene_prev.width != W || p.face_prev.height != p.face_t.height ||
      p.face_prev.width != p.face_t.width)
    return "frame sizes differ";
  if (p.gt.rank() != 3 || p.gt.dim(0) != 1 || p.gt.dim(1) != H || p.gt.dim(2) != W) return "target size differs from scene";
  for (float v : p.gt.vec())
    if (!std::isfinite(v) || v < 0.f || v > 1.f) return "target value outside [0,1]";
  if (!(p.gaze.x >= 0 && p.gaze.x <= W - 1 && p.gaze.y >= 0 && p.gaze.y <= H - 1)) return "gaze outside scene";
  const auto am = argmax(p.gt);
  const double px = double(am % W), py = double(am / W);
  if (std::abs(px - p.gaze.x) > 1.0 || std::abs(py - p.gaze.y) > 1.0) return "target peak away from gaze";
  return "";
}

struct LoadReport {
  Dataset pairs;
  int skipped = 0;
  std::vector<std::string> problems;
};

/// Streams every indexed pair in order; unreadable or invalid records are
/// skipped and counted.
inline LoadReport load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::ifstream idx(root / "index.csv");
  if (!idx) throw std::runtime_error("no index.csv under " + root.string());
  LoadReport rep;
  std::map<int, std::vector<GazeSample>> tracks;
  std::string line;
  int lineno = 0;
  while (std::getline(idx, line)) {
    if (++lineno == 1 && line.rfind("sequence", 0) == 0) continue;
    if (line.empty()) continue;
    try {
      std::stringstream ss(line);
      std::string a, b, split;
      if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, split))
        throw std::runtime_error("malformed index row");
      const int sid = std::stoi(a), k = std::stoi(b);
      if (k < 1) throw std::runtime_error("pair frame must be >= 1");
      const fs::path dir = root / synth::seq_name(sid);
      auto it = tracks.find(sid);
      if (it == tracks.end()) it = tracks.emplace(sid, read_gaze_csv(dir / "gaze.csv")).first;
      const GazeSample* g = nullptr;
      for (const auto& s : it->second)
        if (s.frame == k) g = &s;
      if (!g) throw std::runtime_error("no gaze sample");
      FramePair p{sid,
                  k,
                  split,
                  read_png(dir / "face" / synth::frame_name(k, "png")),
                  read_png(dir / "face" / synth::frame_name(k - 1, "png")),
                  read_png(dir / "scene" / synth::frame_name(k, "png")),
                  read_png(dir / "scene" / synth::frame_name(k - 1, "png")),
                  g->p,
                  read_map_f32(dir / "gt" / synth::frame_name(k, "f32"))};
      if (auto why = validate_pair(p); !why.empty()) throw std::runtime_error(why);
      rep.pairs.push_back(std::move(p));
    } catch (const std::exception& e) {
      ++rep.skipped;
      rep.problems.push_back(concat_msg("index line ", lineno, ": ", e.what()));
    }
  }
  if (rep.pairs.empty() && rep.skipped == 0) throw std::runtime_error("dataset under " + root.string() + " is empty");
  return rep;
}

}  // namespace eraw
