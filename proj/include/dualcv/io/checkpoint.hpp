#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "dualcv/io/pfm.hpp"
#include "dualcv/nn/params.hpp"

namespace dualcv::io {

/// Binary layout (little-endian host order):
///   magic "DUALCKPT", u32 version, u64 count,
///   per tensor: u32 name length, name bytes, u32 rank, u64 extents, f32 values.
inline constexpr char kCheckpointMagic[8] = {'D', 'U', 'A', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class V>
V get(std::istream& in, const char* what) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw CheckpointError(std::string("checkpoint truncated reading ") + what);
  return v;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ParamSet<T>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot create checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, params.size());
  for (const auto& e : params) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.dim()));
    for (auto d : e.value.shape()) detail::put<std::uint64_t>(out, d);
    for (auto v : e.value.values()) detail::put<float>(out, static_cast<float>(v));
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

/// Loads into an existing ParamSet; names, count and shapes must all match.
template <class T>
void load_checkpoint(const std::filesystem::path& path, ParamSet<T>& params) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic))
    throw CheckpointError(path.string() + " is not a checkpoint file");
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const auto count = detail::get<std::uint64_t>(in, "count");
  if (count != params.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(params.size()));
  std::vector<Tensor<T>> loaded;
  loaded.reserve(params.size());
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = detail::get<std::uint32_t>(in, "name length");
    if (len > 4096) throw CheckpointError("checkpoint name length out of range");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw CheckpointError("checkpoint truncated reading name");
    const auto rank = detail::get<std::uint32_t>(in, "rank");
    if (rank > 8) throw CheckpointError("checkpoint rank out of range for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get<std::uint64_t>(in, "extent");
    const auto& e = params[i];
    if (name != e.name) throw CheckpointError("checkpoint tensor " + std::to_string(i) + " is '" + name +
                                              "', model expects '" + e.name + "'");
    if (shape != e.value.shape())
      throw CheckpointError("shape mismatch for '" + name + "': checkpoint " + to_string(shape) + " vs model " +
                            to_string(e.value.shape()));
    Tensor<T> t(shape);
    for (auto& v : t.values()) v = static_cast<T>(detail::get<float>(in, "values"));
    loaded.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < count; ++i) params[i].value = std::move(loaded[i]);
}

}  // namespace dualcv::io
