#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "agnn/tensor.hpp"

namespace agnn {

// Weight snapshot container: a flat sequence of records, each
//   u32 name length | name bytes | u32 rank | u64 dims... | f64 values...
// all little-endian. Used for model weights, the parameter registry, and
// controller checkpoints.

struct SnapshotRecord {
  std::string name;
  Shape dims;
  std::vector<double> values;
};

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool read_le(std::istream& is, T& v) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
  v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return true;
}

inline void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  write_le<std::uint64_t>(os, bits);
}

inline bool read_f64(std::istream& is, double& d) {
  std::uint64_t bits;
  if (!read_le<std::uint64_t>(is, bits)) return false;
  std::memcpy(&d, &bits, sizeof(bits));
  return true;
}

}  // namespace detail

inline void write_snapshot(const std::string& path, const std::vector<SnapshotRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("snapshot: cannot open for writing: " + path);
  for (const auto& rec : records) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(rec.name.size()));
    os.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(rec.dims.size()));
    std::size_t n = 1;
    for (auto d : rec.dims) {
      detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
      n *= d;
    }
    if (n != rec.values.size())
      throw std::runtime_error("snapshot: dims do not match value count for " + rec.name);
    for (double v : rec.values) detail::write_f64(os, v);
  }
  if (!os) throw std::runtime_error("snapshot: write failed: " + path);
}

inline std::vector<SnapshotRecord> read_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("snapshot: cannot open: " + path);
  std::vector<SnapshotRecord> records;
  for (;;) {
    std::uint32_t name_len;
    if (!detail::read_le<std::uint32_t>(is, name_len)) break;  // clean EOF
    SnapshotRecord rec;
    rec.name.resize(name_len);
    if (!is.read(rec.name.data(), name_len))
      throw std::runtime_error("snapshot: truncated name in " + path);
    std::uint32_t rank;
    if (!detail::read_le<std::uint32_t>(is, rank))
      throw std::runtime_error("snapshot: truncated rank in " + path);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint64_t d;
      if (!detail::read_le<std::uint64_t>(is, d))
        throw std::runtime_error("snapshot: truncated dims in " + path);
      rec.dims.push_back(static_cast<std::size_t>(d));
      n *= static_cast<std::size_t>(d);
    }
    rec.values.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      if (!detail::read_f64(is, rec.values[i]))
        throw std::runtime_error("snapshot: truncated values in " + path);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace agnn
