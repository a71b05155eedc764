#pragma once

// Byte-level helpers shared by the corpus and checkpoint containers.

#include "prosody/linalg.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

namespace prosody {

/// Appends the matrix (row-major) as little-endian IEEE-754 float32.
inline void append_f32_le(std::string& out, const MatrixF& m) {
  const std::size_t base = out.size();
  out.resize(base + sizeof(float) * static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, m.data() + i, sizeof bits);
    for (int b = 0; b < 4; ++b) out[base + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
}

inline MatrixF read_f32_le(const char* data, int rows, int cols) {
  MatrixF m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[4 * i + b])) << (8 * b);
    std::memcpy(m.data() + i, &bits, sizeof bits);
  }
  return m;
}

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

}  // namespace prosody
