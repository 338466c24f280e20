#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <type_traits>
#include <vector>

#include "cscope/error.hpp"

namespace cscope::binio {

/// Append a scalar in little-endian byte order.
template <class T>
void put_le(std::vector<unsigned char>& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  if constexpr (sizeof(T) > 1) {
    if (std::endian::native == std::endian::big)
      for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
  }
  out.insert(out.end(), raw, raw + sizeof(T));
}

/// Read a little-endian scalar.
template <class T>
T get_le(const unsigned char* p) {
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, p, sizeof(T));
  if constexpr (sizeof(T) > 1) {
    if (std::endian::native == std::endian::big)
      for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
  }
  T v;
  std::memcpy(&v, raw, sizeof(T));
  return v;
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(errc::io_error, "cannot open " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(errc::io_error, "short write: " + path.string());
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(errc::io_error, "cannot open " + path.string());
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

/// Cursor with bounds-checked reads.
struct Reader {
  const std::vector<unsigned char>& bytes;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > bytes.size()) fail(errc::truncated, "record extends past end of file");
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v = get_le<T>(bytes.data() + pos);
    pos += sizeof(T);
    return v;
  }
  std::string get_string(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
  bool done() const { return pos >= bytes.size(); }
};

}  // namespace cscope::binio
