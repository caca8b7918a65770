#pragma once

// Shared error types, byte-level IO helpers and small bit utilities used
// across the library. Everything is little-endian on disk.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace octlat {

// Error categories map onto CLI exit codes: bad input file -> 3,
// inconsistent configuration -> 4, anything else at runtime -> 5.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  throw Error(detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void fail_input(Args&&... args) {
  throw InputError(detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void fail_config(Args&&... args) {
  throw ConfigError(detail::concat(std::forward<Args>(args)...));
}

// --- binary IO -------------------------------------------------------------

class ByteWriter {
 public:
  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u8(uint8_t v) { raw(&v, 1); }
  void u16(uint16_t v) { put_le(v); }
  void u32(uint32_t v) { put_le(v); }
  void u64(uint64_t v) { put_le(v); }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void magic(const char (&m)[5]) { raw(m, 4); }

  const std::vector<uint8_t>& bytes() const { return buf_; }

 private:
  template <typename T>
  void put_le(T v) {
    for (size_t i = 0; i < sizeof(T); ++i) buf_.push_back(uint8_t(v >> (8 * i)));
  }
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t size, std::string source)
      : data_(data), size_(size), source_(std::move(source)) {}

  void raw(void* p, size_t n) {
    if (pos_ + n > size_)
      fail_input(source_, ": truncated payload at byte offset ", pos_,
                 " (need ", n, " bytes, have ", size_ - pos_, ")");
    std::memcpy(p, data_ + pos_, n);
    pos_ += n;
  }
  uint8_t u8() { return get_le<uint8_t>(); }
  uint16_t u16() { return get_le<uint16_t>(); }
  uint32_t u32() { return get_le<uint32_t>(); }
  uint64_t u64() { return get_le<uint64_t>(); }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void expect_magic(const char (&m)[5], const char* format_name) {
    char got[4];
    raw(got, 4);
    if (std::memcmp(got, m, 4) != 0)
      fail_input(source_, ": bad magic for ", format_name, " (expected \"", m,
                 "\", got \"", std::string(got, 4), "\")");
  }
  size_t offset() const { return pos_; }
  size_t remaining() const { return size_ - pos_; }
  const std::string& source() const { return source_; }

 private:
  template <typename T>
  T get_le() {
    if (pos_ + sizeof(T) > size_)
      fail_input(source_, ": truncated payload at byte offset ", pos_);
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= T(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
  std::string source_;
};

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_input(path, ": cannot open file");
  in.seekg(0, std::ios::end);
  auto n = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> buf(size_t(n));
  if (n > 0) in.read(reinterpret_cast<char*>(buf.data()), n);
  if (!in) fail_input(path, ": read failed");
  return buf;
}

// Atomic write: temp file in the same directory, then rename.
inline void write_file_bytes(const std::string& path, const void* data, size_t size) {
  namespace fs = std::filesystem;
  fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(path, ": cannot open for writing");
    out.write(static_cast<const char*>(data), std::streamsize(size));
    if (!out) fail(path, ": write failed");
  }
  fs::rename(tmp, target);
}

inline void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  write_file_bytes(path, bytes.data(), bytes.size());
}

inline void write_file_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, text.data(), text.size());
}

// --- bit vectors -----------------------------------------------------------

// Packed bits, LSB-first within each byte: bit i lives in byte i/8, bit i%8.
class BitVec {
 public:
  BitVec() = default;
  explicit BitVec(size_t n, bool value = false)
      : size_(n), bytes_((n + 7) / 8, value ? 0xFF : 0x00) {
    trim();
  }
  size_t size() const { return size_; }
  bool get(size_t i) const { return (bytes_[i >> 3] >> (i & 7)) & 1; }
  void set(size_t i, bool v) {
    if (v)
      bytes_[i >> 3] |= uint8_t(1u << (i & 7));
    else
      bytes_[i >> 3] &= uint8_t(~(1u << (i & 7)));
  }
  size_t count() const {
    size_t c = 0;
    for (size_t i = 0; i < size_; ++i) c += get(i);
    return c;
  }
  const std::vector<uint8_t>& bytes() const { return bytes_; }
  void assign_bytes(std::vector<uint8_t> b, size_t n) {
    size_ = n;
    bytes_ = std::move(b);
    bytes_.resize((n + 7) / 8);
    trim();
  }
  size_t storage_bytes() const { return bytes_.size(); }
  bool operator==(const BitVec& o) const { return size_ == o.size_ && bytes_ == o.bytes_; }

 private:
  void trim() {
    if (size_ % 8 != 0 && !bytes_.empty())
      bytes_.back() &= uint8_t((1u << (size_ % 8)) - 1);
  }
  size_t size_ = 0;
  std::vector<uint8_t> bytes_;
};

// FNV-1a, used for run-manifest content hashes.
inline uint64_t fnv1a(const void* data, size_t size, uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const uint8_t*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace octlat
