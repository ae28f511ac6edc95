#pragma once

// Strict reader/writer for the NPY v1.0 container, restricted to what the
// toolkit exchanges: little-endian f32/f64 matrices and vectors, and |b1
// boolean masks, all C-ordered.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "srank/error.hpp"
#include "srank/matrix.hpp"

namespace srank::io {

enum class DType { f32, f64, b1 };

inline std::string_view dtype_descr(DType t) noexcept {
  switch (t) {
    case DType::f32: return "<f4";
    case DType::f64: return "<f8";
    case DType::b1: return "|b1";
  }
  return "";
}

inline std::size_t dtype_size(DType t) noexcept {
  switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::b1: return 1;
  }
  return 0;
}

struct NpyHeader {
  DType dtype = DType::f64;
  std::vector<std::size_t> shape;
  std::size_t data_offset = 0;

  std::size_t element_count() const noexcept {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

inline constexpr unsigned char kNpyMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};

namespace detail {

class DictParser {
 public:
  explicit DictParser(std::string_view s) : s_(s) {}

  NpyHeader parse() {
    NpyHeader h;
    bool have_descr = false, have_order = false, have_shape = false;
    skip_ws();
    expect('{');
    for (;;) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      const std::string key = quoted("header");
      skip_ws();
      expect(':');
      skip_ws();
      if (key == "descr") {
        const std::string d = quoted("descr");
        if (d == "<f4") {
          h.dtype = DType::f32;
        } else if (d == "<f8") {
          h.dtype = DType::f64;
        } else if (d == "|b1") {
          h.dtype = DType::b1;
        } else {
          throw ParseError("descr", "unsupported dtype '" + d + "'");
        }
        have_descr = true;
      } else if (key == "fortran_order") {
        if (s_.substr(pos_, 5) == "False") {
          pos_ += 5;
        } else if (s_.substr(pos_, 4) == "True") {
          throw ParseError("fortran_order", "fortran_order True is not accepted");
        } else {
          throw ParseError("fortran_order", "expected True or False");
        }
        have_order = true;
      } else if (key == "shape") {
        h.shape = tuple();
        have_shape = true;
      } else {
        throw ParseError("header", "unexpected key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      skip_ws();
      expect('}');
      break;
    }
    if (!have_descr) throw ParseError("descr", "missing key");
    if (!have_order) throw ParseError("fortran_order", "missing key");
    if (!have_shape) throw ParseError("shape", "missing key");
    return h;
  }

 private:
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }
  void expect(char c) {
    if (peek() != c) {
      throw ParseError("header", std::string("expected '") + c + "' at offset " +
                                     std::to_string(pos_));
    }
    ++pos_;
  }
  std::string quoted(const char* field) {
    const char q = peek();
    if (q != '\'' && q != '"') throw ParseError(field, "expected quoted string");
    const auto end = s_.find(q, pos_ + 1);
    if (end == std::string_view::npos) throw ParseError(field, "unterminated string");
    std::string out(s_.substr(pos_ + 1, end - pos_ - 1));
    pos_ = end + 1;
    return out;
  }
  std::vector<std::size_t> tuple() {
    if (peek() != '(') throw ParseError("shape", "expected tuple");
    ++pos_;
    std::vector<std::size_t> dims;
    for (;;) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        return dims;
      }
      if (peek() < '0' || peek() > '9') throw ParseError("shape", "expected integer");
      std::size_t v = 0;
      while (peek() >= '0' && peek() <= '9') {
        v = v * 10 + static_cast<std::size_t>(peek() - '0');
        ++pos_;
      }
      dims.push_back(v);
      skip_ws();
      if (peek() == ',') {
        ++pos_;
      } else if (peek() != ')') {
        throw ParseError("shape", "expected ',' or ')'");
      }
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

template <typename T>
T read_le(const unsigned char* p) noexcept {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
      std::swap(b[i], b[sizeof(T) - 1 - i]);
    }
  }
  return v;
}

template <typename T>
void append_le(std::vector<unsigned char>& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
      std::swap(b[i], b[sizeof(T) - 1 - i]);
    }
  }
  out.insert(out.end(), b, b + sizeof(T));
}

}  // namespace detail

inline NpyHeader parse_npy_header(std::span<const unsigned char> bytes) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kNpyMagic, 6) != 0) {
    throw ParseError("magic", "bad magic");
  }
  if (bytes[6] != 1 || bytes[7] != 0) {
    throw ParseError("version", "unsupported version " + std::to_string(bytes[6]) +
                                    "." + std::to_string(bytes[7]) +
                                    " (only 1.0)");
  }
  const std::size_t hlen = detail::read_le<std::uint16_t>(bytes.data() + 8);
  if (bytes.size() < 10 + hlen) throw ParseError("header", "truncated header");
  std::string_view text(reinterpret_cast<const char*>(bytes.data() + 10), hlen);
  if (text.empty() || text.back() != '\n') {
    throw ParseError("header", "header not newline-terminated");
  }
  NpyHeader h = detail::DictParser(text).parse();
  h.data_offset = 10 + hlen;
  const std::size_t payload = bytes.size() - h.data_offset;
  const std::size_t want = h.element_count() * dtype_size(h.dtype);
  if (payload != want) {
    throw ParseError("payload", "length mismatch: header implies " +
                                    std::to_string(want) + " bytes, found " +
                                    std::to_string(payload));
  }
  return h;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<double> decode_reals(std::span<const unsigned char> bytes,
                                        const NpyHeader& h) {
  std::vector<double> out(h.element_count());
  const unsigned char* p = bytes.data() + h.data_offset;
  if (h.dtype == DType::f32) {
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] = static_cast<double>(detail::read_le<float>(p + 4 * k));
    }
  } else if (h.dtype == DType::f64) {
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] = detail::read_le<double>(p + 8 * k);
    }
  } else {
    throw ParseError("descr", "expected a real dtype (<f4 or <f8)");
  }
  return out;
}

inline HiddenMatrix parse_matrix(std::span<const unsigned char> bytes) {
  const NpyHeader h = parse_npy_header(bytes);
  if (h.shape.size() != 2) {
    throw ParseError("shape", "expected rank 2, got rank " +
                                  std::to_string(h.shape.size()));
  }
  if (h.shape[0] == 0 || h.shape[1] == 0) throw ParseError("shape", "empty matrix");
  return {h.shape[0], h.shape[1], decode_reals(bytes, h)};
}

inline HiddenMatrix load_matrix(const std::filesystem::path& p) {
  return parse_matrix(read_file_bytes(p));
}

// Accepts shape (e,) or (1, e).
inline std::vector<double> load_vector(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  const NpyHeader h = parse_npy_header(bytes);
  const bool ok = h.shape.size() == 1 || (h.shape.size() == 2 && h.shape[0] == 1);
  if (!ok) throw ParseError("shape", "expected a vector");
  return decode_reals(bytes, h);
}

inline std::vector<bool> parse_mask(std::span<const unsigned char> bytes) {
  const NpyHeader h = parse_npy_header(bytes);
  if (h.dtype != DType::b1) throw ParseError("descr", "mask must be |b1");
  if (h.shape.size() != 1) throw ParseError("shape", "mask must have rank 1");
  std::vector<bool> m(h.shape[0]);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const unsigned char b = bytes[h.data_offset + i];
    if (b > 1) throw ParseError("payload", "mask byte is not 0 or 1");
    m[i] = b == 1;
  }
  return m;
}

inline std::vector<bool> load_mask(const std::filesystem::path& p) {
  return parse_mask(read_file_bytes(p));
}

inline std::vector<unsigned char> npy_preamble(DType t,
                                               std::span<const std::size_t> shape) {
  std::string dict = "{'descr': '" + std::string(dtype_descr(t)) +
                     "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ", ";
  }
  if (shape.size() == 1) dict.pop_back();
  dict += "), }";
  // Pad with spaces so that magic + version + length + header is a multiple
  // of 64 bytes, with the final byte a newline.
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict.push_back('\n');
  std::vector<unsigned char> out(kNpyMagic, kNpyMagic + 6);
  out.push_back(1);
  out.push_back(0);
  detail::append_le<std::uint16_t>(out, static_cast<std::uint16_t>(dict.size()));
  out.insert(out.end(), dict.begin(), dict.end());
  return out;
}

inline std::vector<unsigned char> encode_matrix(const HiddenMatrix& h,
                                                DType t = DType::f64) {
  if (t == DType::b1) throw ArgumentError("matrices are stored as f32 or f64");
  const std::size_t shape[2] = {h.rows(), h.cols()};
  auto out = npy_preamble(t, shape);
  for (double v : h.data()) {
    if (t == DType::f32) {
      detail::append_le<float>(out, static_cast<float>(v));
    } else {
      detail::append_le<double>(out, v);
    }
  }
  return out;
}

inline std::vector<unsigned char> encode_vector(std::span<const double> v,
                                                DType t = DType::f64) {
  const std::size_t shape[1] = {v.size()};
  auto out = npy_preamble(t, shape);
  for (double x : v) {
    if (t == DType::f32) {
      detail::append_le<float>(out, static_cast<float>(x));
    } else {
      detail::append_le<double>(out, x);
    }
  }
  return out;
}

inline std::vector<unsigned char> encode_mask(const std::vector<bool>& m) {
  const std::size_t shape[1] = {m.size()};
  auto out = npy_preamble(DType::b1, shape);
  for (bool b : m) out.push_back(b ? 1 : 0);
  return out;
}

// Write to `p` via a sibling temporary and rename, so readers never see a
// partial file.
inline void write_file_atomic(const std::filesystem::path& p,
                              std::span<const unsigned char> bytes) {
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw Error("short write to " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, p);
}

inline void write_file_atomic(const std::filesystem::path& p, std::string_view s) {
  write_file_atomic(p, std::span<const unsigned char>(
                           reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

inline void save_matrix(const std::filesystem::path& p, const HiddenMatrix& h,
                        DType t = DType::f64) {
  write_file_atomic(p, encode_matrix(h, t));
}

inline void save_mask(const std::filesystem::path& p, const std::vector<bool>& m) {
  write_file_atomic(p, encode_mask(m));
}

}  // namespace srank::io
