#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvs {

namespace detail {

// Explicit little-endian byte serialization so the formats are bit-exact
// across platforms.

inline void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  append_u64(out, bits);
}

struct ByteReader {
  const std::string& bytes;
  size_t pos = 0;

  void require(size_t n) const {
    if (pos + n > bytes.size()) throw std::runtime_error("raw array: truncated file");
  }
  std::uint64_t read_u64() {
    require(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::uint32_t read_u32() {
    require(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  double read_f64() {
    const std::uint64_t bits = read_u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string read_bytes(size_t n) {
    require(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_file: cannot open " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write_file: write failed for " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_file: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

// ---------------------------------------------------------------------------
// Raw array format: magic "DVSARR1\n", dtype "f64 ", u32 ndim, u64 dims,
// then the values as little-endian IEEE-754 doubles (column-major for 2-D).
// ---------------------------------------------------------------------------

constexpr char kArrayMagic[] = "DVSARR1\n";
constexpr char kArrayDtype[] = "f64 ";

inline std::string serialize_array(const Eigen::MatrixXd& m, bool as_vector = false) {
  std::string out;
  out.append(kArrayMagic, 8);
  out.append(kArrayDtype, 4);
  if (as_vector) {
    if (m.rows() != 1) throw std::invalid_argument("serialize_array: vector must have 1 row");
    detail::append_u32(out, 1);
    detail::append_u64(out, static_cast<std::uint64_t>(m.cols()));
  } else {
    detail::append_u32(out, 2);
    detail::append_u64(out, static_cast<std::uint64_t>(m.rows()));
    detail::append_u64(out, static_cast<std::uint64_t>(m.cols()));
  }
  out.reserve(out.size() + static_cast<size_t>(m.size()) * 8);
  for (long c = 0; c < m.cols(); ++c)
    for (long r = 0; r < m.rows(); ++r) detail::append_f64(out, m(r, c));
  return out;
}

inline Eigen::MatrixXd deserialize_array(const std::string& bytes) {
  detail::ByteReader reader{bytes};
  if (reader.read_bytes(8) != std::string(kArrayMagic, 8))
    throw std::runtime_error("raw array: bad magic");
  if (reader.read_bytes(4) != std::string(kArrayDtype, 4))
    throw std::runtime_error("raw array: unsupported dtype");
  const std::uint32_t ndim = reader.read_u32();
  if (ndim != 1 && ndim != 2) throw std::runtime_error("raw array: unsupported rank");
  const std::uint64_t rows = ndim == 2 ? reader.read_u64() : 1;
  const std::uint64_t cols = reader.read_u64();
  reader.require(rows * cols * 8);
  Eigen::MatrixXd m(rows, cols);
  for (long c = 0; c < m.cols(); ++c)
    for (long r = 0; r < m.rows(); ++r) m(r, c) = reader.read_f64();
  if (reader.pos != bytes.size()) throw std::runtime_error("raw array: trailing bytes");
  return m;
}

inline void write_array(const std::string& path, const Eigen::MatrixXd& m) {
  write_file(path, serialize_array(m));
}

inline Eigen::MatrixXd read_array(const std::string& path) {
  return deserialize_array(read_file(path));
}

inline void write_vector(const std::string& path, const Eigen::RowVectorXd& v) {
  write_file(path, serialize_array(v, /*as_vector=*/true));
}

inline Eigen::RowVectorXd read_vector(const std::string& path) {
  const Eigen::MatrixXd m = read_array(path);
  if (m.rows() != 1) throw std::runtime_error("read_vector: array is not rank 1");
  return m.row(0);
}

}  // namespace dvs
