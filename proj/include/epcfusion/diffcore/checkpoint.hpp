#pragma once

// Checkpoint container, all integers and floats little-endian:
//
//   magic        8 bytes  "EPCFCKPT"
//   version      u32
//   config_hash  u64
//   seed         u64
//   header_len   u64, then header_len bytes of UTF-8 JSON
//   blob_count   u64
//   per blob:    u64 name_len, name bytes, u64 rows, u64 cols,
//                rows*cols f64 in row-major order

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <string_view>

#include "epcfusion/diffcore/tensor.hpp"

namespace epcfusion::diffcore {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::array<char, 8> kCheckpointMagic = {'E', 'P', 'C', 'F', 'C', 'K', 'P', 'T'};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string header;                  // JSON text
  std::map<std::string, Matrix> blobs;  // written in name order
};

// FNV-1a 64-bit.
inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&v, bytes, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail(ErrorKind::SchemaMismatch, "truncated checkpoint");
  return to_little(v);
}

inline std::string get_string(std::istream& in, std::uint64_t max_len) {
  const auto len = get<std::uint64_t>(in);
  if (len > max_len) fail(ErrorKind::SchemaMismatch, "checkpoint string length out of range");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorKind::SchemaMismatch, "truncated checkpoint");
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, ckpt.config_hash);
  detail::put<std::uint64_t>(out, ckpt.seed);
  detail::put<std::uint64_t>(out, ckpt.header.size());
  out.write(ckpt.header.data(), static_cast<std::streamsize>(ckpt.header.size()));
  detail::put<std::uint64_t>(out, ckpt.blobs.size());
  for (const auto& [name, m] : ckpt.blobs) {
    detail::put<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) detail::put<double>(out, m.data()[i]);
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) fail(ErrorKind::SchemaMismatch, "not an epcfusion checkpoint");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    fail(ErrorKind::SchemaMismatch, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_hash = detail::get<std::uint64_t>(in);
  ckpt.seed = detail::get<std::uint64_t>(in);
  ckpt.header = detail::get_string(in, 1ULL << 30);
  const auto count = detail::get<std::uint64_t>(in);
  for (std::uint64_t b = 0; b < count; ++b) {
    std::string name = detail::get_string(in, 1 << 16);
    const auto rows = detail::get<std::uint64_t>(in);
    const auto cols = detail::get<std::uint64_t>(in);
    if (rows > (1ULL << 32) || cols > (1ULL << 32)) fail(ErrorKind::SchemaMismatch, "blob shape out of range");
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = detail::get<double>(in);
    ckpt.blobs.emplace(std::move(name), std::move(m));
  }
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::MissingFile, "cannot write checkpoint " + path);
  write_checkpoint(out, ckpt);
  if (!out) fail(ErrorKind::Internal, "failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFile, "cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace epcfusion::diffcore
