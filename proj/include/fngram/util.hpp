#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fngram {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimension or length mismatch between tensors/sequences.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An id or position outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A violated precondition of an operation.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// File format or read/write failure.
class IoError : public Error {
 public:
  using Error::Error;
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// splitmix64: cheap stateless mixer used to derive per-step / per-document seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x51a299f5ed32bf31ULL));
}

/// CRC-32 (IEEE 802.3 polynomial), table driven.
inline std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = seed ^ 0xffffffffu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

/// Byte offsets of each UTF-8 codepoint start in `s`, plus a final offset == s.size().
/// Malformed bytes are treated as single-byte codepoints so iteration always advances.
inline std::vector<std::size_t> utf8_offsets(std::string_view s) {
  std::vector<std::size_t> off;
  off.reserve(s.size() + 1);
  std::size_t i = 0;
  while (i < s.size()) {
    off.push_back(i);
    const auto b = static_cast<unsigned char>(s[i]);
    std::size_t n = 1;
    if ((b & 0xe0u) == 0xc0u)
      n = 2;
    else if ((b & 0xf0u) == 0xe0u)
      n = 3;
    else if ((b & 0xf8u) == 0xf0u)
      n = 4;
    if (i + n > s.size()) n = 1;
    i += n;
  }
  off.push_back(s.size());
  return off;
}

inline void write_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void write_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string_view what) : data_(data), what_(what) {}

  std::uint32_t u32(std::string_view section) {
    std::uint32_t v = 0;
    need(4, section);
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(std::string_view section) {
    std::uint64_t v = 0;
    need(8, section);
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::uint8_t u8(std::string_view section) {
    need(1, section);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }

  std::string_view bytes(std::size_t n, std::string_view section) {
    need(n, section);
    auto v = data_.substr(pos_, n);
    pos_ += n;
    return v;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n, std::string_view section) {
    if (pos_ + n > data_.size())
      throw IoError(std::string(what_) + ": truncated while reading " + std::string(section));
  }

  std::string_view data_;
  std::string_view what_;
  std::size_t pos_ = 0;
};

}  // namespace fngram
