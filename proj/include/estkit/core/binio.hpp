#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "estkit/core/error.hpp"
#include "estkit/core/hash.hpp"

namespace estkit::binio {

namespace fs = std::filesystem;

template <class T>
T to_little_endian(T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

inline std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// Serializes values as little-endian T. Returns the FNV-1a checksum of the
// bytes written.
template <class T, class Src>
std::uint64_t write_array(const fs::path& path, const Src* src, std::size_t n) {
  std::string bytes(n * sizeof(T), '\0');
  for (std::size_t i = 0; i < n; ++i) {
    const T v = to_little_endian(static_cast<T>(src[i]));
    std::memcpy(bytes.data() + i * sizeof(T), &v, sizeof(T));
  }
  write_file(path, bytes);
  return fnv1a64(bytes.data(), bytes.size());
}

// Reads exactly n little-endian T values, verifying size and checksum.
template <class T, class Dst>
void read_array(const fs::path& path, Dst* dst, std::size_t n, std::uint64_t checksum) {
  const auto bytes = read_file(path);
  if (bytes.size() != n * sizeof(T))
    throw ChecksumError("'" + path.string() + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                        std::to_string(n * sizeof(T)));
  if (fnv1a64(bytes.data(), bytes.size()) != checksum)
    throw ChecksumError("checksum mismatch in '" + path.string() + "'");
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, bytes.data() + i * sizeof(T), sizeof(T));
    dst[i] = static_cast<Dst>(to_little_endian(v));
  }
}

}  // namespace estkit::binio
