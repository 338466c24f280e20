#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cscope/binio.hpp"
#include "cscope/error.hpp"
#include "cscope/tensor.hpp"

namespace cscope::checkpoint {

/// Flat binary checkpoint: magic "CTSK1", then per-parameter records of
/// (u32 name length, name bytes, u32 rank, u64 extents..., f64 values...),
/// everything little-endian, records until end of file.
constexpr char kMagic[5] = {'C', 'T', 'S', 'K', '1'};

struct Record {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

inline void save(const std::vector<std::pair<std::string, Tensor>>& params, const std::filesystem::path& path) {
  std::vector<unsigned char> out(kMagic, kMagic + 5);
  for (const auto& [name, t] : params) {
    binio::put_le<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    binio::put_le<uint32_t>(out, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) binio::put_le<uint64_t>(out, static_cast<uint64_t>(d));
    for (double v : t.values()) binio::put_le<double>(out, v);
  }
  binio::write_file(path, out);
}

inline std::vector<Record> load(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = binio::read_file(path);
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 5) != 0)
    fail(errc::bad_magic, "not a CTSK1 checkpoint: " + path.string());

  std::vector<Record> records;
  binio::Reader r{bytes, 5};
  while (!r.done()) {
    Record rec;
    const auto name_len = r.get<uint32_t>();
    rec.name = r.get_string(name_len);
    const auto rank = r.get<uint32_t>();
    if (rank > 8) fail(errc::bad_header, "checkpoint rank " + std::to_string(rank) + " implausible");
    uint64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const auto d = r.get<uint64_t>();
      rec.shape.push_back(static_cast<int64_t>(d));
      count *= d;
    }
    if (count > (uint64_t{1} << 32)) fail(errc::bad_header, "checkpoint tensor implausibly large");
    r.need(count * 8);
    rec.values.resize(count);
    for (uint64_t i = 0; i < count; ++i) rec.values[i] = r.get<double>();
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace cscope::checkpoint
