#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "tandem/error.hpp"

namespace tandem {

// Thin little-endian binary file helpers. All multi-byte fields in the
// artifact's file formats go through these; short reads and bad magic are
// DataError with the path in the message.
class BinWriter {
 public:
  explicit BinWriter(const std::string& path)
      : path_(path), os_(path, std::ios::binary | std::ios::trunc) {
    if (!os_) throw DataError("cannot open for write: " + path);
  }

  void bytes(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os_) throw DataError("write failed: " + path_);
  }

  template <class T>
  void value(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    bytes(&v, sizeof(T));
  }

  void magic(const char (&m)[9]) { bytes(m, 8); }

  void str(const std::string& s) {
    value<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void close() {
    os_.close();
    if (!os_) throw DataError("close failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream os_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path)
      : path_(path), is_(path, std::ios::binary) {
    if (!is_) throw DataError("cannot open for read: " + path);
  }

  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw DataError("truncated file: " + path_);
  }

  template <class T>
  T value() {
    static_assert(std::is_trivially_copyable_v<T>);
    T v;
    bytes(&v, sizeof(T));
    return v;
  }

  void expect_magic(const char (&m)[9]) {
    char buf[8];
    bytes(buf, 8);
    for (int i = 0; i < 8; ++i)
      if (buf[i] != m[i])
        throw DataError("bad magic in " + path_ + " (expected " + std::string(m, 8) + ")");
  }

  std::string str(std::uint32_t max_len = 1u << 20) {
    const auto n = value<std::uint32_t>();
    if (n > max_len) throw DataError("string too long in " + path_);
    std::string s(n, '\0');
    if (n) bytes(s.data(), n);
    return s;
  }

  bool at_eof() {
    return is_.peek() == std::char_traits<char>::eof();
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream is_;
};

}  // namespace tandem
