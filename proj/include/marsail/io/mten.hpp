#pragma once

// MTEN raw tensor container:
//   "MTEN" | u32 rank | rank x u32 extents | prod(extents) x f32 values
// All integers and floats little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "marsail/error.hpp"
#include "marsail/tensor.hpp"

namespace marsail::io {

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw InputError(std::string("MTEN: truncated while reading ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline constexpr std::uint32_t kMaxRank = 16;
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

}  // namespace detail

/// Values are narrowed to float32 on write.
inline void write_mten(std::ostream& os, const Tensor& t) {
  os.write("MTEN", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(e));
  for (double v : t.data()) {
    detail::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!os) throw InputError("MTEN: write failed");
}

inline Tensor read_mten(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MTEN", 4) != 0) {
    throw InputError("MTEN: bad magic bytes");
  }
  const std::uint32_t rank = detail::get_u32(is, "rank");
  if (rank == 0 || rank > detail::kMaxRank) {
    throw InputError("MTEN: unsupported rank " + std::to_string(rank));
  }
  Shape shape(rank);
  std::uint64_t n = 1;
  for (auto& e : shape) {
    e = detail::get_u32(is, "extent");
    if (e == 0) throw InputError("MTEN: zero extent");
    n *= e;
    if (n > detail::kMaxElements) throw InputError("MTEN: tensor too large");
  }
  std::vector<double> data(static_cast<std::size_t>(n));
  for (auto& v : data) {
    v = static_cast<double>(std::bit_cast<float>(detail::get_u32(is, "values")));
  }
  return Tensor(std::move(shape), std::move(data));
}

inline void save_mten(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("MTEN: cannot open for writing: " + path);
  write_mten(os, t);
}

inline Tensor load_mten(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("MTEN: cannot open " + path);
  try {
    return read_mten(is);
  } catch (const InputError& e) {
    throw InputError(std::string(e.what()) + " (" + path + ")");
  }
}

}  // namespace marsail::io
