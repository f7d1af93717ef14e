#pragma once

// Versioned binary checkpoint: header (magic, format version, config hash, step, model kind,
// shape tag) followed by the flat parameter array as raw IEEE-754 doubles.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vcppo/errors.hpp"
#include "vcppo/function_approx.hpp"

namespace vcppo {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'V', 'C', 'P', 'P', 'O', 'C', 'K', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::int64_t step = 0;
  std::string kind;  // "policy" or "value"
  std::string shape_tag;
  std::vector<double> values;
};

namespace detail {

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("truncated checkpoint: " + path);
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, const std::string& path) {
  const auto n = get<std::uint32_t>(is, path);
  if (n > (1u << 20)) throw std::runtime_error("corrupt checkpoint string length: " + path);
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw std::runtime_error("truncated checkpoint: " + path);
  return s;
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put(os, ckpt.version);
  detail::put(os, ckpt.config_hash);
  detail::put(os, ckpt.step);
  detail::put_string(os, ckpt.kind);
  detail::put_string(os, ckpt.shape_tag);
  detail::put(os, static_cast<std::uint64_t>(ckpt.values.size()));
  os.write(reinterpret_cast<const char*>(ckpt.values.data()),
           static_cast<std::streamsize>(ckpt.values.size() * sizeof(double)));
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + p);
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("not a checkpoint file: " + p);
  Checkpoint c;
  c.version = detail::get<std::uint32_t>(is, p);
  if (c.version > kCheckpointVersion)
    throw std::runtime_error("checkpoint format version " + std::to_string(c.version) + " is newer than supported: " + p);
  c.config_hash = detail::get<std::uint64_t>(is, p);
  c.step = detail::get<std::int64_t>(is, p);
  c.kind = detail::get_string(is, p);
  c.shape_tag = detail::get_string(is, p);
  const auto n = detail::get<std::uint64_t>(is, p);
  if (n > (1ull << 32)) throw std::runtime_error("corrupt checkpoint parameter count: " + p);
  c.values.resize(n);
  if (!is.read(reinterpret_cast<char*>(c.values.data()), static_cast<std::streamsize>(n * sizeof(double))))
    throw std::runtime_error("truncated checkpoint: " + p);
  return c;
}

inline Checkpoint make_checkpoint(const ModelParams& params, std::string kind, std::int64_t step,
                                  std::uint64_t config_hash) {
  return Checkpoint{kCheckpointVersion, config_hash, step, std::move(kind), params.shape_tag, params.values};
}

/// Copies checkpoint values into `params`; the shape tag must match.
inline void load_into(ModelParams& params, const Checkpoint& c) {
  if (c.shape_tag != params.shape_tag)
    throw ConfigError("checkpoint shape '" + c.shape_tag + "' does not match model shape '" + params.shape_tag + "'");
  params.values = c.values;
  params.zero_grad();
}

}  // namespace vcppo
