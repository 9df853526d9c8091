// SPDX-License-Identifier: Apache-2.0
/**
 * @file   serialize.hpp
 * @brief  Flat binary container of named tensors.
 *
 * Layout (all integers little-endian):
 *
 *   char[8]  magic "GDCTENS1"
 *   u32      header length, then that many bytes of UTF-8 text (JSON by convention)
 *   u32      tensor count
 *   per tensor, in list order:
 *     u32    name length, then the name bytes
 *     u8     dtype: 4 = float32, 8 = float64
 *     u64[4] extents (B, H, W, C)
 *     raw    B*H*W*C values of dtype
 *   u64      FNV-1a 64 checksum of every preceding byte
 *
 * Tensors are written in the order of the ParamList, which every model fixes,
 * so equal parameters give byte-identical files.
 */
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdcunet/params.hpp"

namespace gdc {

static_assert(std::endian::native == std::endian::little,
              "the container format assumes a little-endian host");

class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct StoredTensor {
  std::string name;
  int dtype_bytes = 8;
  Shape shape;
  std::vector<double> values;  // widened for transport between precisions
};

struct TensorArchive {
  std::string header;
  std::vector<StoredTensor> tensors;
};

namespace detail {

inline constexpr char kMagic[8] = {'G', 'D', 'C', 'T', 'E', 'N', 'S', '1'};

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  template <class U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw FormatError("tensor archive: truncated file");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::string encode_archive(const std::string& header, const ParamList<T>& params) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  std::string out(detail::kMagic, 8);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put<std::uint8_t>(out, sizeof(T));
    for (auto d : p.var.shape().dims()) detail::put<std::uint64_t>(out, d);
    const auto& v = p.var.value();
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
  }
  detail::put<std::uint64_t>(out, detail::fnv1a(out));
  return out;
}

inline TensorArchive decode_archive(const std::string& bytes) {
  if (bytes.size() < 8 + 4 + 4 + 8 || std::memcmp(bytes.data(), detail::kMagic, 8) != 0)
    throw FormatError("tensor archive: bad magic");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != detail::fnv1a(bytes.substr(0, body)))
    throw FormatError("tensor archive: checksum mismatch");

  detail::Reader r(bytes, body);
  r.str(8);
  TensorArchive a;
  a.header = r.str(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.str(r.get<std::uint32_t>());
    t.dtype_bytes = r.get<std::uint8_t>();
    if (t.dtype_bytes != 4 && t.dtype_bytes != 8)
      throw FormatError("tensor archive: unknown dtype for " + t.name);
    t.shape = {r.get<std::uint64_t>(), r.get<std::uint64_t>(), r.get<std::uint64_t>(),
               r.get<std::uint64_t>()};
    t.values.resize(t.shape.numel());
    for (auto& v : t.values)
      v = t.dtype_bytes == 4 ? double(r.get<float>()) : r.get<double>();
    a.tensors.push_back(std::move(t));
  }
  if (r.pos() != body) throw FormatError("tensor archive: trailing bytes");
  return a;
}

/// Copies stored values into the parameters of a list with identical names and shapes.
template <class T>
void assign_parameters(const TensorArchive& a, ParamList<T>& params) {
  if (a.tensors.size() != params.size())
    throw FormatError("tensor archive: expected " + std::to_string(params.size()) +
                      " tensors, found " + std::to_string(a.tensors.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& st = a.tensors[i];
    auto& p = params[i];
    if (st.name != p.name || st.shape != p.var.shape())
      throw FormatError("tensor archive: entry " + st.name + st.shape.str() +
                        " does not match parameter " + p.name + p.var.shape().str());
    auto& dst = p.var.mutable_value();
    for (std::size_t k = 0; k < st.values.size(); ++k) dst[k] = static_cast<T>(st.values[k]);
  }
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace gdc
