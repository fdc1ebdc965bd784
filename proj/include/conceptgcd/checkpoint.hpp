#pragma once
// Named-tensor checkpoint container and its GCDC on-disk format.
//
// GCDC layout, little-endian:
//   bytes 0..3  magic "GCDC"
//   u32 version (currently 1)
//   u32 tensor count
//   per tensor, in insertion order:
//     u32 name length, name bytes (UTF-8, no terminator)
//     u32 rank (1 or 2), u32 dims[rank]
//     float64 payload, row-major
// Scalars travel as rank-1 tensors of length 1. Writing is atomic: the file
// is staged at <path>.tmp and renamed into place.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "conceptgcd/binio.hpp"
#include "conceptgcd/errors.hpp"
#include "conceptgcd/matrix.hpp"

namespace conceptgcd {

class Checkpoint {
 public:
  struct Entry {
    std::string name;
    std::uint32_t rank = 2;  // 1: stored as a flat vector, 2: matrix
    Matrix value;            // rank-1 entries live here as 1 x n
  };

  void put(const std::string& name, const Matrix& value) { insert(name, 2, value); }

  // Vectors (biases, flags) are stored rank 1; `value` must be 1 x n.
  void put_vector(const std::string& name, const Matrix& value) {
    if (value.rows() != 1)
      throw DimensionError("checkpoint: rank-1 tensor " + name + " must be 1 x n, got " +
                           value.shape_str());
    insert(name, 1, value);
  }

  void put_scalar(const std::string& name, double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    insert(name, 1, m);
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Matrix& get(const std::string& name) const { return entry(name).value; }

  double get_scalar(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.value.size() != 1)
      throw ConfigError("checkpoint: tensor " + name + " is not a scalar");
    return e.value(0, 0);
  }

  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("checkpoint: missing tensor " + name);
    return entries_[it->second];
  }

  const std::vector<Entry>& entries() const { return entries_; }

  void save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot open " + tmp + " for writing");
      out.write("GCDC", 4);
      detail::put_u32_le(out, 1u);
      detail::put_u32_le(out, static_cast<std::uint32_t>(entries_.size()));
      for (const Entry& e : entries_) {
        detail::put_u32_le(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::put_u32_le(out, e.rank);
        if (e.rank == 1) {
          detail::put_u32_le(out, static_cast<std::uint32_t>(e.value.size()));
        } else {
          detail::put_u32_le(out, static_cast<std::uint32_t>(e.value.rows()));
          detail::put_u32_le(out, static_cast<std::uint32_t>(e.value.cols()));
        }
        for (std::size_t i = 0; i < e.value.size(); ++i)
          detail::put_f64_le(out, e.value.data()[i]);
      }
      out.flush();
      if (!out) throw IoError("failed writing " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
      throw IoError("cannot rename " + tmp + " to " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    detail::ByteReader r{.in = in, .offset = 0, .path = path};
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, "GCDC", 4) != 0) throw FormatError(path + ": bad magic", 0);
    const std::uint32_t version = r.u32("version");
    if (version != 1)
      throw FormatError(path + ": unsupported version " + std::to_string(version), 4);
    const std::uint32_t count = r.u32("tensor count");
    Checkpoint ck;
    for (std::uint32_t t = 0; t < count; ++t) {
      const std::uint32_t name_len = r.u32("name length");
      std::string name(name_len, '\0');
      if (name_len > 0) r.read(name.data(), name_len, "name");
      const std::uint32_t rank = r.u32("rank");
      if (rank != 1 && rank != 2)
        throw FormatError(path + ": tensor " + name + " has unsupported rank " +
                          std::to_string(rank), r.offset - 4);
      std::uint32_t rows = 1, cols = 0;
      if (rank == 1) {
        cols = r.u32("dims");
      } else {
        rows = r.u32("dims");
        cols = r.u32("dims");
      }
      Matrix value(rows, cols);
      for (std::size_t i = 0; i < value.size(); ++i) value.data()[i] = r.f64("payload");
      if (ck.has(name)) throw FormatError(path + ": duplicate tensor " + name, r.offset);
      ck.insert(name, rank, value);
    }
    char extra;
    in.read(&extra, 1);
    if (in.gcount() != 0) throw FormatError(path + ": trailing bytes", r.offset);
    return ck;
  }

 private:
  void insert(const std::string& name, std::uint32_t rank, const Matrix& value) {
    auto it = index_.find(name);
    if (it != index_.end()) {
      entries_[it->second].rank = rank;
      entries_[it->second].value = value;
      return;
    }
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, rank, value});
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace conceptgcd
