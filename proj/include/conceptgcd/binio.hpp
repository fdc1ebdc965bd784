#pragma once
// Little-endian primitives for the GCDF/GCDC binary formats.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "conceptgcd/errors.hpp"

namespace conceptgcd::detail {

inline void put_u32_le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64_le(std::ostream& out, std::uint64_t v) {
  put_u32_le(out, static_cast<std::uint32_t>(v & 0xffffffffULL));
  put_u32_le(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_i32_le(std::ostream& out, std::int32_t v) {
  put_u32_le(out, static_cast<std::uint32_t>(v));
}

inline void put_f32_le(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32_le(out, bits);
}

inline void put_f64_le(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64_le(out, bits);
}

// Sequential reader that tracks the byte offset for error reporting.
struct ByteReader {
  std::istream& in;
  long long offset = 0;
  std::string path;

  void read(void* dst, std::size_t n, const char* what) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw FormatError(path + ": truncated while reading " + std::string(what), offset);
    offset += static_cast<long long>(n);
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    read(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::int32_t i32(const char* what) { return static_cast<std::int32_t>(u32(what)); }

  std::uint64_t u64(const char* what) {
    const std::uint64_t lo = u32(what);
    const std::uint64_t hi = u32(what);
    return lo | (hi << 32);
  }

  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

}  // namespace conceptgcd::detail
