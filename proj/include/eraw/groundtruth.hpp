#pragma once

#include <Eigen/Dense>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>

#include "eraw/tensor.hpp"

namespace eraw {

using Homography = Eigen::Matrix3d;

struct Point2 {
  double x = 0, y = 0;
};

/// One gaze observation: point in frame-k coordinates plus the homography
/// taking frame k into the current frame.
struct GazeSample {
  int frame = 0;
  Point2 p;
  Homography H = Homography::Identity();
};

/// Timed gaze points relative to a current frame c.
struct GazeTrack {
  std::vector<GazeSample> samples;
  int current = 0;
  int window = 2;      // frames in the temporal window, ending at `current`
  double a = 0;        // temporal scale; <= 0 selects `window`
  double sigma = 200;  // weight scale of the spatio-temporal distance

  double temporal_scale() const { return a > 0 ? a : double(window); }
};

/// Projective transform with perspective division. Points whose homogeneous
/// w falls below 1e-9 are dropped (nullopt); `dropped` counts them.
inline std::optional<Point2> warp_gaze(Point2 p, const Homography& H, int* dropped = nullptr) {
  const Eigen::Vector3d q = H * Eigen::Vector3d(p.x, p.y, 1.0);
  if (!(q.z() >= 1e-9)) {
    if (dropped) ++*dropped;
    return std::nullopt;
  }
  return Point2{q.x() / q.z(), q.y() / q.z()};
}

/// w = exp(-d^2 / (2 sigma^2)) with d^2 = dx^2 + dy^2 + (|k-c|/a)^2.
inline double fixation_weight(Point2 pk, Point2 pc, int k, int c, double a, double sigma = 200.0) {
  if (!(sigma > 0) || !(a > 0)) throw std::invalid_argument("fixation_weight: sigma and a must be positive");
  const double dx = pk.x - pc.x, dy = pk.y - pc.y, dt = std::abs(k - c) / a;
  return std::exp(-(dx * dx + dy * dy + dt * dt) / (2.0 * sigma * sigma));
}

/// Spatial deposit std: 20 px at 480 x 800, scaled with the image area.
inline double default_spatial_sigma(int H, int W) { return 20.0 * std::sqrt((H / 480.0) * (W / 800.0)); }

struct FixationStats {
  int used = 0;
  int dropped = 0;
};

/// Sum of isotropic Gaussians (std sigma_spatial) at the warped gaze points of
/// the window, each scaled by its fixation weight; peak-normalized to 1.
inline Tensor<double> sequential_fixation_heatmap(const GazeTrack& track, int H, int W, double sigma_spatial = 0,
                                                  FixationStats* stats = nullptr) {
  if (H <= 0 || W <= 0) shape_fail("sequential_fixation_heatmap: empty output size");
  if (sigma_spatial <= 0) sigma_spatial = default_spatial_sigma(H, W);
  const GazeSample* cur = nullptr;
  for (const auto& s : track.samples)
    if (s.frame == track.current) cur = &s;
  if (!cur) throw std::invalid_argument("sequential_fixation_heatmap: current frame has no gaze sample");
  int dropped = 0;
  auto pc = warp_gaze(cur->p, cur->H, &dropped);
  if (!pc) throw std::invalid_argument("sequential_fixation_heatmap: current gaze point cannot be warped");

  struct Deposit {
    Point2 p;
    double w;
  };
  std::vector<Deposit> deps;
  for (const auto& s : track.samples) {
    if (s.frame > track.current || s.frame <= track.current - track.window) continue;
    auto q = warp_gaze(s.p, s.H, &dropped);
    if (!q) continue;
    deps.push_back({*q, fixation_weight(*q, *pc, s.frame, track.current, track.temporal_scale(), track.sigma)});
  }
  if (deps.empty()) throw std::invalid_argument("sequential_fixation_heatmap: no valid gaze point in the window");
  if (stats) *stats = {static_cast<int>(deps.size()), dropped};

  Tensor<double> m({1, H, W});
  const double inv = 1.0 / (2.0 * sigma_spatial * sigma_spatial);
  for (const auto& d : deps)
    for (int y = 0; y < H; ++y) {
      const double dy2 = (y - d.p.y) * (y - d.p.y);
      for (int x = 0; x < W; ++x) m.at(0, y, x) += d.w * std::exp(-((x - d.p.x) * (x - d.p.x) + dy2) * inv);
    }
  const double peak = max_abs(m);
  if (!(peak > 0)) throw std::invalid_argument("sequential_fixation_heatmap: all deposits underflowed");
  for (auto& v : m.vec()) v /= peak;
  return m;
}

/// Eye position and unit gaze direction with an angular spread.
struct GazeRay {
  Eigen::Vector3d eye = Eigen::Vector3d::Zero();
  Eigen::Vector3d g = Eigen::Vector3d::UnitZ();
  double sigma_ang = 0.05;  // radians
};

/// Unit directions from the eye to the scene points seen by each pixel of a
/// pinhole camera at the origin looking along +z, with all points on the
/// plane z = depth. Returns 3 x H x W.
inline Tensor<double> pinhole_directions(int H, int W, double focal, double depth, const Eigen::Vector3d& eye) {
  Tensor<double> d({3, H, W});
  const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const Eigen::Vector3d X((x - cx) * depth / focal, (y - cy) * depth / focal, depth);
      const Eigen::Vector3d s = (X - eye).normalized();
      for (int c = 0; c < 3; ++c) d.at(c, y, x) = s[c];
    }
  return d;
}

/// exp(-theta^2 / (2 sigma^2)) with theta the angle between each pixel's
/// direction and the gaze; peak-normalized to 1.
inline Tensor<double> gaze_projected_heatmap(const GazeRay& ray, const Tensor<double>& dirs) {
  if (dirs.rank() != 3 || dirs.dim(0) != 3) shape_fail("gaze_projected_heatmap: directions must be 3 x H x W");
  if (std::abs(ray.g.norm() - 1.0) > 1e-9) throw std::invalid_argument("gaze_projected_heatmap: gaze not unit length");
  if (!(ray.sigma_ang > 0)) throw std::invalid_argument("gaze_projected_heatmap: sigma must be positive");
  const int H = dirs.dim(1), W = dirs.dim(2);
  Tensor<double> m({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const Eigen::Vector3d s(dirs.at(0, y, x), dirs.at(1, y, x), dirs.at(2, y, x));
      const double n = s.norm();
      if (!(n > 0)) throw std::invalid_argument("gaze_projected_heatmap: zero-norm direction");
      const double th = std::acos(std::clamp(s.dot(ray.g) / n, -1.0, 1.0));
      m.at(0, y, x) = std::exp(-th * th / (2 * ray.sigma_ang * ray.sigma_ang));
    }
  const double peak = max_abs(m);
  if (peak > 0)
    for (auto& v : m.vec()) v /= peak;
  return m;
}

// ---------------------------------------------------------------- file formats

inline constexpr char kGtMagic[8] = {'E', 'R', 'A', 'W', 'F', '3', '2', '\0'};

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(const unsigned char* b) {
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}
}  // namespace detail

/// Raw map file: 8-byte magic, u32 H, u32 W (little endian), then H*W
/// little-endian float32 values in row-major order.
inline void write_map_f32(const std::filesystem::path& path, const Tensor<float>& m) {
  if (m.rank() != 3 || m.dim(0) != 1) shape_fail("write_map_f32: expected 1 x H x W, got ", shape_str(m.shape()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kGtMagic, 8);
  detail::put_u32(os, static_cast<std::uint32_t>(m.dim(1)));
  detail::put_u32(os, static_cast<std::uint32_t>(m.dim(2)));
  for (float v : m.vec()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32(os, bits);
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline Tensor<float> read_map_f32(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  unsigned char hdr[16];
  if (!is.read(reinterpret_cast<char*>(hdr), 16) || std::memcmp(hdr, kGtMagic, 8) != 0)
    throw std::runtime_error("not a map file: " + path.string());
  const std::uint32_t H = detail::get_u32(hdr + 8), W = detail::get_u32(hdr + 12);
  if (H == 0 || W == 0 || std::uint64_t(H) * W > (1ull << 28)) throw std::runtime_error("bad map size in " + path.string());
  std::vector<unsigned char> raw(std::size_t(H) * W * 4);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw std::runtime_error("truncated map file: " + path.string());
  Tensor<float> m({1, int(H), int(W)});
  for (std::size_t i = 0; i < std::size_t(H) * W; ++i) {
    const std::uint32_t bits = detail::get_u32(raw.data() + 4 * i);
    std::memcpy(&m.vec()[i], &bits, 4);
  }
  return m;
}

/// Gaze CSV rows: frame,x,y,h11,h12,h13,h21,h22,h23,h31,h32,h33
inline void write_gaze_csv(const std::filesystem::path& path, const std::vector<GazeSample>& samples) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "frame,x,y,h11,h12,h13,h21,h22,h23,h31,h32,h33\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& s : samples) {
    os << s.frame << ',' << num(s.p.x) << ',' << num(s.p.y);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) os << ',' << num(s.H(r, c));
    os << '\n';
  }
}

inline std::vector<GazeSample> read_gaze_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<GazeSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || (lineno == 1 && line.rfind("frame", 0) == 0)) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::runtime_error(concat_msg(path.string(), ":", lineno, ": bad number"));
    }
    if (v.size() != 12) throw std::runtime_error(concat_msg(path.string(), ":", lineno, ": expected 12 fields"));
    GazeSample s;
    s.frame = static_cast<int>(v[0]);
    s.p = {v[1], v[2]};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) s.H(r, c) = v[3 + r * 3 + c];
    out.push_back(s);
  }
  return out;
}

}  // namespace eraw
