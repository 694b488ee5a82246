#pragma once

// Binary PPM (P6) and PGM (P5) with 8-bit samples.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "marsail/error.hpp"
#include "marsail/mask.hpp"
#include "marsail/tensor.hpp"

namespace marsail::io {

namespace detail {

inline void skip_space_and_comments(std::istream& is) {
  while (true) {
    const int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      is.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_header_int(std::istream& is, const char* what) {
  skip_space_and_comments(is);
  long v = -1;
  if (!(is >> v) || v <= 0) throw InputError(std::string(what) + ": malformed header");
  return static_cast<std::size_t>(v);
}

struct NetpbmHeader {
  std::size_t width = 0, height = 0;
};

inline NetpbmHeader read_netpbm_header(std::istream& is, const char* magic, const char* what) {
  char m[2] = {0, 0};
  is.read(m, 2);
  if (!is || m[0] != magic[0] || m[1] != magic[1]) {
    throw InputError(std::string(what) + ": expected magic " + magic);
  }
  NetpbmHeader h;
  h.width = read_header_int(is, what);
  h.height = read_header_int(is, what);
  const std::size_t maxval = read_header_int(is, what);
  if (maxval != 255) throw InputError(std::string(what) + ": only maxval 255 is supported");
  if (h.width > 16384 || h.height > 16384) throw InputError(std::string(what) + ": image too large");
  is.get();  // single whitespace before the raster
  return h;
}

inline std::vector<unsigned char> read_raster(std::istream& is, std::size_t n, const char* what) {
  std::vector<unsigned char> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw InputError(std::string(what) + ": truncated raster");
  return buf;
}

inline unsigned char to_byte(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw InputError("image value outside [0, 1]");
  return static_cast<unsigned char>(std::lround(v * 255.0));
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path);
  return is;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path);
  return os;
}

}  // namespace detail

/// RGB image as [H x W x 3] with samples scaled to [0, 1].
inline Tensor read_ppm(std::istream& is) {
  const auto h = detail::read_netpbm_header(is, "P6", "ppm");
  const auto raw = detail::read_raster(is, h.width * h.height * 3, "ppm");
  Tensor t({h.height, h.width, 3});
  for (std::size_t i = 0; i < raw.size(); ++i) t[i] = raw[i] / 255.0;
  return t;
}

inline void write_ppm(std::ostream& os, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("write_ppm: expected [H x W x 3]");
  os << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  for (double v : image.data()) os.put(static_cast<char>(detail::to_byte(v)));
}

/// Gray image as [H x W] scaled to [0, 1].
inline Tensor read_pgm(std::istream& is) {
  const auto h = detail::read_netpbm_header(is, "P5", "pgm");
  const auto raw = detail::read_raster(is, h.width * h.height, "pgm");
  Tensor t({h.height, h.width});
  for (std::size_t i = 0; i < raw.size(); ++i) t[i] = raw[i] / 255.0;
  return t;
}

inline void write_pgm(std::ostream& os, const Tensor& gray) {
  marsail::detail::require_rank(gray, 2, "write_pgm");
  os << "P5\n" << gray.dim(1) << ' ' << gray.dim(0) << "\n255\n";
  for (double v : gray.data()) os.put(static_cast<char>(detail::to_byte(v)));
}

inline Tensor load_ppm(const std::string& path) {
  auto is = detail::open_in(path);
  try {
    return read_ppm(is);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline void save_ppm(const std::string& path, const Tensor& image) {
  auto os = detail::open_out(path);
  write_ppm(os, image);
}

inline Tensor load_pgm(const std::string& path) {
  auto is = detail::open_in(path);
  try {
    return read_pgm(is);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline void save_pgm(const std::string& path, const Tensor& gray) {
  auto os = detail::open_out(path);
  write_pgm(os, gray);
}

/// Foreground where the stored sample is >= 128.
inline BinaryMask load_mask_pgm(const std::string& path) {
  return BinaryMask::threshold(load_pgm(path), 128.0 / 255.0);
}

inline void save_mask_pgm(const std::string& path, const BinaryMask& m) { save_pgm(path, m.to_tensor()); }

}  // namespace marsail::io
