#pragma once

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "eraw/autograd.hpp"

namespace eraw {

/// Named float tensors plus a JSON metadata blob (the run configuration).
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

inline constexpr char kCheckpointMagic[8] = {'E', 'R', 'A', 'W', 'C', 'K', 'P', '1'};

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) { os.write(static_cast<const char*>(p), std::streamsize(n)); }

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, b, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline std::string get_string(std::istream& is) {
  const std::uint64_t n = get_u64(is);
  if (n > (1u << 26)) throw std::runtime_error("checkpoint string too long");
  std::string s(n, '\0');
  if (!is.read(s.data(), std::streamsize(n))) throw std::runtime_error("checkpoint truncated");
  return s;
}

}  // namespace detail

/// Layout (little endian): magic, u64 meta length, meta JSON, u64 count, then
/// per tensor u64 name length, name, u64 rank, u64 dims..., float32 data.
inline void save_checkpoint(const std::filesystem::path& path, const ParamRefs<float>& params, const nlohmann::json& meta) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    detail::put_bytes(os, kCheckpointMagic, 8);
    const std::string m = meta.dump();
    detail::put_u64(os, m.size());
    detail::put_bytes(os, m.data(), m.size());
    detail::put_u64(os, params.size());
    for (const auto* p : params) {
      detail::put_u64(os, p->name.size());
      detail::put_bytes(os, p->name.data(), p->name.size());
      detail::put_u64(os, p->value.shape().size());
      for (int d : p->value.shape()) detail::put_u64(os, static_cast<std::uint64_t>(d));
      for (float v : p->value.vec()) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                    static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
        detail::put_bytes(os, b, 4);
      }
    }
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint: " + path.string());
  Checkpoint c;
  c.meta = nlohmann::json::parse(detail::get_string(is));
  const std::uint64_t n = detail::get_u64(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = detail::get_string(is);
    const std::uint64_t rank = detail::get_u64(is);
    if (rank > 8) throw std::runtime_error("checkpoint tensor rank too large");
    Shape s;
    for (std::uint64_t r = 0; r < rank; ++r) s.push_back(static_cast<int>(detail::get_u64(is)));
    Tensor<float> t(s);
    std::vector<unsigned char> raw(static_cast<std::size_t>(t.size()) * 4);
    if (!is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()))) throw std::runtime_error("checkpoint truncated");
    for (std::int64_t k = 0; k < t.size(); ++k) {
      const std::uint32_t bits = std::uint32_t(raw[4 * k]) | std::uint32_t(raw[4 * k + 1]) << 8 |
                                 std::uint32_t(raw[4 * k + 2]) << 16 | std::uint32_t(raw[4 * k + 3]) << 24;
      std::memcpy(&t.vec()[static_cast<std::size_t>(k)], &bits, 4);
    }
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

/// Copies checkpoint values into `params`; every parameter must be present
/// with a matching shape.
inline void restore(const Checkpoint& c, const ParamRefs<float>& params) {
  std::unordered_map<std::string, const Tensor<float>*> by_name;
  for (const auto& [n, t] : c.tensors) by_name[n] = &t;
  for (auto* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint lacks parameter " + p->name);
    if (it->second->shape() != p->value.shape()) throw std::runtime_error("checkpoint shape mismatch for " + p->name);
    p->value = *it->second;
  }
  if (by_name.size() != params.size()) throw std::runtime_error("checkpoint holds parameters the model does not have");
}

/// In-memory copy of parameter values, for best-so-far tracking.
inline std::vector<Tensor<float>> snapshot(const ParamRefs<float>& params) {
  std::vector<Tensor<float>> out;
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

inline void restore(const std::vector<Tensor<float>>& snap, const ParamRefs<float>& params) {
  if (snap.size() != params.size()) throw std::runtime_error("snapshot size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

}  // namespace eraw
