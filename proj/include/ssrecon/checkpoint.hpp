#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "networks.hpp"

// Checkpoint container: magic, format version, named parameter blobs
// (little-endian doubles) and the JSON text of the training config that
// produced it. Write -> read -> write is byte-identical.

namespace ssr::net {

constexpr char kCheckpointMagic[8] = {'S', 'S', 'R', 'C', 'K', 'P', 'T', '\n'};
constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::vector<std::pair<std::string, Array>> blobs;
  std::string config_json;

  const Array* find(const std::string& name) const {
    for (const auto& [k, v] : blobs)
      if (k == name) return &v;
    return nullptr;
  }
};

namespace detail {

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  static_assert(sizeof(double) == 8);
  std::ofstream f(path, std::ios::binary);
  SSR_CHECK(f.good(), "save_checkpoint: cannot open " << path);
  f.write(kCheckpointMagic, 8);
  detail::put(f, kCheckpointVersion);
  detail::put(f, static_cast<uint32_t>(ck.blobs.size()));
  for (const auto& [name, a] : ck.blobs) {
    detail::put(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put(f, static_cast<uint32_t>(a.ndim()));
    for (int i = 0; i < a.ndim(); ++i) detail::put(f, static_cast<int64_t>(a.dim(i)));
    f.write(reinterpret_cast<const char*>(a.data()),
            static_cast<std::streamsize>(a.numel() * 8));
  }
  detail::put(f, static_cast<uint64_t>(ck.config_json.size()));
  f.write(ck.config_json.data(), static_cast<std::streamsize>(ck.config_json.size()));
  SSR_CHECK(f.good(), "save_checkpoint: write failed for " << path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  SSR_CHECK(f.good(), "load_checkpoint: cannot open " << path);
  char magic[8];
  f.read(magic, 8);
  SSR_CHECK(f.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0,
            "load_checkpoint: bad magic in " << path);
  uint32_t version = detail::get<uint32_t>(f);
  SSR_CHECK(version == kCheckpointVersion, "load_checkpoint: unsupported version " << version);
  uint32_t count = detail::get<uint32_t>(f);
  Checkpoint ck;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t len = detail::get<uint32_t>(f);
    std::string name(len, '\0');
    f.read(name.data(), len);
    uint32_t ndim = detail::get<uint32_t>(f);
    Shape shape;
    for (uint32_t d = 0; d < ndim; ++d)
      shape.push_back(static_cast<int>(detail::get<int64_t>(f)));
    Array a(shape);
    f.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.numel() * 8));
    SSR_CHECK(f.good(), "load_checkpoint: truncated blob " << name);
    ck.blobs.emplace_back(std::move(name), std::move(a));
  }
  uint64_t clen = detail::get<uint64_t>(f);
  ck.config_json.resize(clen);
  f.read(ck.config_json.data(), static_cast<std::streamsize>(clen));
  SSR_CHECK(f.good(), "load_checkpoint: truncated config");
  return ck;
}

// ---------------------------------------------------------------------------
// model <-> checkpoint

inline Checkpoint make_checkpoint(ReconNet& recon, PoseNet& pose, std::string config_json) {
  Checkpoint ck;
  ck.config_json = std::move(config_json);
  auto grab = [&](const std::string& name, Array& a) { ck.blobs.emplace_back(name, a); };
  visit_params(recon, grab);
  visit_params(pose, grab);
  return ck;
}

inline void restore_from_checkpoint(const Checkpoint& ck, ReconNet& recon, PoseNet& pose) {
  auto put = [&](const std::string& name, Array& a) {
    const Array* src = ck.find(name);
    SSR_CHECK(src != nullptr, "checkpoint: missing blob " << name);
    SSR_CHECK(src->same_shape(a) || a.numel() == 0,
              "checkpoint: shape mismatch for " << name);
    a = *src;
  };
  // initialize target shapes first so shape checks apply
  Rng rng(0);
  recon = init_recon(rng);
  pose = init_pose(rng);
  visit_params(recon, put);
  visit_params(pose, put);
}

}  // namespace ssr::net
