// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint, all integers and reals little-endian:
//
//   "AHNQS"  version:u8  kind:u8  V:u64  d_h:u64
//   per parameter tensor in ModelParams::for_each order:
//       rows:u64  cols:u64  rows*cols x f64 (row-major)
//   vocab_path_len:u64  vocab_path bytes (UTF-8)
//
// Dropout rates are training-time settings and are not stored.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ahnqs/models/params.hpp"

namespace ahnqs {

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 5> kCheckpointMagic = {'A', 'H', 'N', 'Q', 'S'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  Model model;
  std::string vocab_path;
};

namespace detail {

inline void put_u64(std::ostream &out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i)
    b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline std::uint64_t get_u64(std::istream &in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char *>(b), 8))
    throw CheckpointError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | b[i];
  return v;
}

inline std::uint8_t get_u8(std::istream &in) {
  char c;
  if (!in.get(c))
    throw CheckpointError("truncated checkpoint");
  return static_cast<std::uint8_t>(c);
}

} // namespace detail

inline void write_checkpoint(std::ostream &out, const Model &m, const std::string &vocab_path) {
  m.config.validate();
  m.params.validate(m.config);
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  out.put(static_cast<char>(kCheckpointVersion));
  out.put(static_cast<char>(m.config.kind));
  detail::put_u64(out, m.config.vocab_size);
  detail::put_u64(out, m.config.hidden_dim);
  const_cast<ModelParams &>(m.params).for_each([&](const ParamView &v) {
    detail::put_u64(out, v.rows);
    detail::put_u64(out, v.cols);
    for (double x : v.values)
      detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
  });
  detail::put_u64(out, vocab_path.size());
  out.write(vocab_path.data(), static_cast<std::streamsize>(vocab_path.size()));
}

/// Reads a checkpoint; with `expected` set, a different model kind is an
/// error. Nothing is returned unless the whole file parsed.
inline LoadedCheckpoint read_checkpoint(std::istream &in,
                                        std::optional<ModelKind> expected = std::nullopt) {
  std::array<char, 5> magic{};
  if (!in.read(magic.data(), magic.size()))
    throw CheckpointError("truncated checkpoint");
  if (magic != kCheckpointMagic)
    throw CheckpointError("not a checkpoint (bad magic bytes)");
  const auto version = detail::get_u8(in);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto kind_byte = detail::get_u8(in);
  if (kind_byte > static_cast<std::uint8_t>(ModelKind::ahnqs))
    throw CheckpointError("unknown model kind byte " + std::to_string(kind_byte));
  LoadedCheckpoint out;
  auto &cfg = out.model.config;
  cfg.kind = static_cast<ModelKind>(kind_byte);
  if (expected && *expected != cfg.kind)
    throw CheckpointError("checkpoint holds a " + std::string(to_string(cfg.kind)) +
                          " model, expected " + std::string(to_string(*expected)));
  cfg.vocab_size = detail::get_u64(in);
  cfg.hidden_dim = detail::get_u64(in);
  try {
    cfg.validate();
  } catch (const std::invalid_argument &e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  out.model.params = ModelParams::zeros(cfg);
  out.model.params.for_each([&](const ParamView &v) {
    const auto rows = detail::get_u64(in);
    const auto cols = detail::get_u64(in);
    if (rows != v.rows || cols != v.cols)
      throw CheckpointError("shape mismatch for " + v.name + ": file has " +
                            std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                            std::to_string(v.rows) + "x" + std::to_string(v.cols));
    for (double &x : v.values)
      x = std::bit_cast<double>(detail::get_u64(in));
  });
  const auto len = detail::get_u64(in);
  if (len > (1u << 20))
    throw CheckpointError("implausible vocabulary path length " + std::to_string(len));
  out.vocab_path.resize(len);
  if (!in.read(out.vocab_path.data(), static_cast<std::streamsize>(len)))
    throw CheckpointError("truncated checkpoint");
  if (in.peek() != std::char_traits<char>::eof())
    throw CheckpointError("trailing bytes after checkpoint");
  return out;
}

/// Writes through a temporary file and renames it into place, so a failed
/// save never leaves a partial checkpoint at `path`.
inline void save_checkpoint(const std::filesystem::path &path, const Model &m,
                            const std::string &vocab_path = {}) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f)
      throw std::ios_base::failure("cannot write " + tmp.string());
    write_checkpoint(f, m, vocab_path);
    f.flush();
    if (!f)
      throw std::ios_base::failure("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path &path,
                                        std::optional<ModelKind> expected = std::nullopt) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw std::ios_base::failure("cannot read " + path.string());
  try {
    return read_checkpoint(f, expected);
  } catch (const CheckpointError &e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

} // namespace ahnqs
