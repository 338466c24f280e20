#pragma once

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cscope/error.hpp"
#include "cscope/volume.hpp"

namespace cscope {

// NIfTI-1 datatype codes supported by this reader/writer.
namespace dtype {
constexpr int16_t uint8 = 2;
constexpr int16_t int16 = 4;
constexpr int16_t int32 = 8;
constexpr int16_t float32 = 16;
constexpr int16_t float64 = 64;
constexpr int16_t int8 = 256;
constexpr int16_t uint16 = 512;

inline bool supported(int16_t code) {
  switch (code) {
    case uint8:
    case int16:
    case int32:
    case float32:
    case float64:
    case int8:
    case uint16:
      return true;
    default:
      return false;
  }
}

inline int bits(int16_t code) {
  switch (code) {
    case uint8:
    case int8:
      return 8;
    case int16:
    case uint16:
      return 16;
    case int32:
    case float32:
      return 32;
    case float64:
      return 64;
    default:
      return 0;
  }
}

inline bool is_integer(int16_t code) { return code != float32 && code != float64; }

/// Inclusive value range of an integer target type.
inline std::pair<double, double> integer_range(int16_t code) {
  switch (code) {
    case uint8: return {0.0, 255.0};
    case int8: return {-128.0, 127.0};
    case int16: return {-32768.0, 32767.0};
    case uint16: return {0.0, 65535.0};
    case int32: return {-2147483648.0, 2147483647.0};
    default: return {0.0, 0.0};
  }
}
}  // namespace dtype

/// Parsed NIfTI-1 header with endianness already resolved. Field names follow
/// the on-disk layout; the affine is assembled on demand (sform > qform > pixdim).
struct NiftiHeader {
  int32_t sizeof_hdr = 348;
  std::array<int16_t, 8> dim{};     // dim[0]=rank, dim[1..7]=extents
  int16_t datatype_code = 0;
  int16_t bitpix = 0;
  std::array<float, 8> pixdim{};    // pixdim[1..3]=voxel mm, pixdim[4]=TR
  float vox_offset = 352.0f;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  uint8_t xyzt_units = 0;
  int16_t qform_code = 0;
  int16_t sform_code = 0;
  float quatern_b = 0, quatern_c = 0, quatern_d = 0;
  float qoffset_x = 0, qoffset_y = 0, qoffset_z = 0;
  std::array<std::array<float, 4>, 3> srow{};  // srow_x, srow_y, srow_z
  std::array<char, 4> magic{'n', '+', '1', '\0'};
  bool swapped = false;  // file endianness was opposite to the host

  int rank() const { return dim[0]; }
  int extent(int axis) const { return axis < rank() ? dim[static_cast<size_t>(axis) + 1] : 1; }

  /// Number of voxels across all dims. 64-bit safe for any valid header.
  uint64_t voxel_count() const {
    uint64_t n = 1;
    for (int i = 1; i <= rank(); ++i) n *= static_cast<uint64_t>(dim[static_cast<size_t>(i)]);
    return n;
  }

  /// Voxel-to-world matrix: sform when sform_code > 0, else qform, else
  /// a pixdim-scaled identity.
  Mat4 affine() const {
    if (sform_code > 0) {
      Mat4 a = Mat4::identity();
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) a(r, c) = srow[static_cast<size_t>(r)][static_cast<size_t>(c)];
      return a;
    }
    if (qform_code > 0) return qform_affine();
    // pixdim fallback; zero spacings read as 1mm so the affine stays invertible
    auto d = [&](int i) { return pixdim[static_cast<size_t>(i)] != 0.0f ? pixdim[static_cast<size_t>(i)] : 1.0f; };
    return Mat4::scaling(d(1), d(2), d(3));
  }

  /// TR in seconds, honouring the time unit bits of xyzt_units.
  double tr_seconds() const {
    double tr = pixdim[4];
    switch (xyzt_units & 0x38) {
      case 16: return tr * 1e-3;  // msec
      case 24: return tr * 1e-6;  // usec
      default: return tr;         // sec or unspecified
    }
  }

private:
  Mat4 qform_affine() const {
    double b = quatern_b, c = quatern_c, d = quatern_d;
    double a = 1.0 - (b * b + c * c + d * d);
    a = a < 1e-7 ? 0.0 : std::sqrt(a);
    double qfac = pixdim[0] < 0 ? -1.0 : 1.0;
    double dx = pixdim[1], dy = pixdim[2], dz = pixdim[3] * qfac;
    Mat4 m = Mat4::identity();
    m(0, 0) = (a * a + b * b - c * c - d * d) * dx;
    m(0, 1) = 2 * (b * c - a * d) * dy;
    m(0, 2) = 2 * (b * d + a * c) * dz;
    m(1, 0) = 2 * (b * c + a * d) * dx;
    m(1, 1) = (a * a + c * c - b * b - d * d) * dy;
    m(1, 2) = 2 * (c * d - a * b) * dz;
    m(2, 0) = 2 * (b * d - a * c) * dx;
    m(2, 1) = 2 * (c * d + a * b) * dy;
    m(2, 2) = (a * a + d * d - c * c - b * b) * dz;
    m(0, 3) = qoffset_x;
    m(1, 3) = qoffset_y;
    m(2, 3) = qoffset_z;
    return m;
  }
};

namespace detail {

inline uint16_t bswap16(uint16_t v) { return static_cast<uint16_t>((v >> 8) | (v << 8)); }
inline uint32_t bswap32(uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0x0000ff00u) | ((v << 8) & 0x00ff0000u) | (v << 24);
}
inline uint64_t bswap64(uint64_t v) {
  v = ((v >> 8) & 0x00ff00ff00ff00ffull) | ((v & 0x00ff00ff00ff00ffull) << 8);
  v = ((v >> 16) & 0x0000ffff0000ffffull) | ((v & 0x0000ffff0000ffffull) << 16);
  return (v >> 32) | (v << 32);
}

template <class T>
T read_scalar(const unsigned char* buf, size_t off, bool swap) {
  static_assert(sizeof(T) <= 8);
  if constexpr (sizeof(T) == 1) {
    T v;
    std::memcpy(&v, buf + off, 1);
    return v;
  } else if constexpr (sizeof(T) == 2) {
    uint16_t raw;
    std::memcpy(&raw, buf + off, 2);
    if (swap) raw = bswap16(raw);
    T v;
    std::memcpy(&v, &raw, 2);
    return v;
  } else if constexpr (sizeof(T) == 4) {
    uint32_t raw;
    std::memcpy(&raw, buf + off, 4);
    if (swap) raw = bswap32(raw);
    T v;
    std::memcpy(&v, &raw, 4);
    return v;
  } else {
    uint64_t raw;
    std::memcpy(&raw, buf + off, 8);
    if (swap) raw = bswap64(raw);
    T v;
    std::memcpy(&v, &raw, 8);
    return v;
  }
}

template <class T>
void write_scalar(unsigned char* buf, size_t off, T v) {
  std::memcpy(buf + off, &v, sizeof(T));
}

inline bool is_gzip(const unsigned char* p, size_t n) { return n >= 2 && p[0] == 0x1f && p[1] == 0x8b; }

/// Inflate a whole gzip stream held in memory.
inline std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK) fail(errc::io_error, "inflateInit2 failed");
  std::vector<unsigned char> out;
  out.resize(std::max<size_t>(in.size() * 4, 1 << 16));
  zs.next_in = const_cast<unsigned char*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  size_t written = 0;
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    if (written == out.size()) out.resize(out.size() * 2);
    zs.next_out = out.data() + written;
    zs.avail_out = static_cast<uInt>(out.size() - written);
    rc = inflate(&zs, Z_NO_FLUSH);
    written = out.size() - zs.avail_out;
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(errc::truncated, "corrupt gzip stream");
    }
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out > 0) {
      inflateEnd(&zs);
      fail(errc::truncated, "gzip stream ended early");
    }
  }
  inflateEnd(&zs);
  out.resize(written);
  return out;
}

/// Deflate a buffer into gzip format (fixed level for reproducible output).
inline std::vector<unsigned char> gzip_compress(const std::vector<unsigned char>& in) {
  z_stream zs{};
  if (deflateInit2(&zs, 6, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    fail(errc::io_error, "deflateInit2 failed");
  std::vector<unsigned char> out(deflateBound(&zs, static_cast<uLong>(in.size())));
  zs.next_in = const_cast<unsigned char*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = deflate(&zs, Z_FINISH);
  if (rc != Z_STREAM_END) {
    deflateEnd(&zs);
    fail(errc::io_error, "deflate failed");
  }
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(errc::io_error, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace detail

/// Parse a 348-byte NIfTI-1 header. Endianness is resolved by sizeof_hdr: if the
/// raw value is not 348 every multi-byte field is byte-swapped and the swapped
/// value must be 348.
inline NiftiHeader parse_header(const unsigned char* bytes, size_t len) {
  using namespace detail;
  if (len < 348) fail(errc::bad_size, "header shorter than 348 bytes");

  NiftiHeader h;
  int32_t raw_size = read_scalar<int32_t>(bytes, 0, false);
  if (raw_size == 348) {
    h.swapped = false;
  } else if (read_scalar<int32_t>(bytes, 0, true) == 348) {
    h.swapped = true;
  } else {
    fail(errc::bad_size, "sizeof_hdr is 348 in neither byte order");
  }
  const bool sw = h.swapped;
  h.sizeof_hdr = 348;

  std::memcpy(h.magic.data(), bytes + 344, 4);
  const bool single = std::memcmp(h.magic.data(), "n+1\0", 4) == 0;
  const bool paired = std::memcmp(h.magic.data(), "ni1\0", 4) == 0;
  if (paired) fail(errc::bad_magic, "paired .hdr/.img files are not supported; use single-file .nii");
  if (!single) fail(errc::bad_magic, "magic is not \"n+1\"");

  for (size_t i = 0; i < 8; ++i) h.dim[i] = read_scalar<int16_t>(bytes, 40 + 2 * i, sw);
  h.datatype_code = read_scalar<int16_t>(bytes, 70, sw);
  h.bitpix = read_scalar<int16_t>(bytes, 72, sw);
  for (size_t i = 0; i < 8; ++i) h.pixdim[i] = read_scalar<float>(bytes, 76 + 4 * i, sw);
  h.vox_offset = read_scalar<float>(bytes, 108, sw);
  h.scl_slope = read_scalar<float>(bytes, 112, sw);
  h.scl_inter = read_scalar<float>(bytes, 116, sw);
  h.xyzt_units = read_scalar<uint8_t>(bytes, 123, sw);
  h.qform_code = read_scalar<int16_t>(bytes, 252, sw);
  h.sform_code = read_scalar<int16_t>(bytes, 254, sw);
  h.quatern_b = read_scalar<float>(bytes, 256, sw);
  h.quatern_c = read_scalar<float>(bytes, 260, sw);
  h.quatern_d = read_scalar<float>(bytes, 264, sw);
  h.qoffset_x = read_scalar<float>(bytes, 268, sw);
  h.qoffset_y = read_scalar<float>(bytes, 272, sw);
  h.qoffset_z = read_scalar<float>(bytes, 276, sw);
  for (size_t r = 0; r < 3; ++r)
    for (size_t c = 0; c < 4; ++c) h.srow[r][c] = read_scalar<float>(bytes, 280 + 16 * r + 4 * c, sw);

  if (!dtype::supported(h.datatype_code))
    fail(errc::unsupported_datatype, "datatype code " + std::to_string(h.datatype_code));
  if (h.bitpix != dtype::bits(h.datatype_code))
    fail(errc::unsupported_datatype,
         "bitpix " + std::to_string(h.bitpix) + " inconsistent with datatype " + std::to_string(h.datatype_code));
  if (h.dim[0] < 1 || h.dim[0] > 7) fail(errc::bad_header, "dim[0] outside [1,7]");
  for (int i = 1; i <= h.dim[0]; ++i)
    if (h.dim[static_cast<size_t>(i)] < 1) fail(errc::bad_header, "dim[" + std::to_string(i) + "] < 1");
  if (!(h.vox_offset >= 352.0f)) fail(errc::bad_header, "vox_offset below 352 for single-file magic");
  if (!std::isfinite(h.vox_offset)) fail(errc::bad_header, "vox_offset not finite");
  return h;
}

inline NiftiHeader parse_header(const std::vector<unsigned char>& bytes) {
  return parse_header(bytes.data(), bytes.size());
}

namespace detail {

inline double decode_voxel(const unsigned char* p, int16_t code, bool sw) {
  switch (code) {
    case dtype::uint8: return static_cast<double>(read_scalar<uint8_t>(p, 0, sw));
    case dtype::int8: return static_cast<double>(read_scalar<int8_t>(p, 0, sw));
    case dtype::int16: return static_cast<double>(read_scalar<int16_t>(p, 0, sw));
    case dtype::uint16: return static_cast<double>(read_scalar<uint16_t>(p, 0, sw));
    case dtype::int32: return static_cast<double>(read_scalar<int32_t>(p, 0, sw));
    case dtype::float32: return static_cast<double>(read_scalar<float>(p, 0, sw));
    case dtype::float64: return read_scalar<double>(p, 0, sw);
    default: fail(errc::unsupported_datatype, "datatype code " + std::to_string(code));
  }
}

}  // namespace detail

/// Decode a whole in-memory .nii (already gunzipped) into a Volume4D.
inline Volume4D decode_volume(const std::vector<unsigned char>& buf) {
  NiftiHeader h = parse_header(buf);
  if (h.rank() > 4) {
    for (int i = 5; i <= h.rank(); ++i)
      if (h.dim[static_cast<size_t>(i)] != 1) fail(errc::bad_header, "rank > 4 volumes are not supported");
  }

  const uint64_t nvox = h.voxel_count();
  const size_t voxel_bytes = static_cast<size_t>(h.bitpix) / 8;
  const auto offset = static_cast<uint64_t>(h.vox_offset);
  if (nvox > (uint64_t{1} << 40)) fail(errc::bad_header, "voxel count implausibly large");
  if (buf.size() < offset + nvox * voxel_bytes)
    fail(errc::truncated, "file holds fewer voxels than the header promises");

  Volume4D v(h.extent(0), h.rank() >= 2 ? h.extent(1) : 1, h.rank() >= 3 ? h.extent(2) : 1,
             h.rank() >= 4 ? h.extent(3) : 1);
  v.affine = h.affine();
  try {
    (void)v.affine.inverse();
  } catch (const error&) {
    fail(errc::bad_header, "voxel-to-world affine is singular");
  }
  v.tr_seconds = h.tr_seconds();
  v.source_dtype = h.datatype_code;

  // NIfTI-1 scaling: slope 0 is treated as slope 1 with the intercept applied.
  const double slope = h.scl_slope != 0.0f ? static_cast<double>(h.scl_slope) : 1.0;
  const double inter = static_cast<double>(h.scl_inter);

  const unsigned char* p = buf.data() + offset;
  for (size_t i = 0; i < v.size(); ++i, p += voxel_bytes) {
    double raw = detail::decode_voxel(p, h.datatype_code, h.swapped);
    double val = raw * slope + inter;
    if (!std::isfinite(val))
      fail(errc::range_error, "non-finite voxel value at linear index " + std::to_string(i));
    v.data[i] = val;
  }
  return v;
}

/// Read a single-file .nii or .nii.gz volume.
inline Volume4D read_volume(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(errc::io_error, "no such file: " + path.string());
  std::vector<unsigned char> bytes = detail::read_file_bytes(path);
  if (detail::is_gzip(bytes.data(), bytes.size())) bytes = detail::gunzip(bytes);
  return decode_volume(bytes);
}

/// Storage mapping chosen by the writer: stored = round((value - inter) / slope).
/// For integer targets whose input range already fits, slope=1/inter=0 so the
/// only loss is rounding (<= 0.5). Otherwise the min/max of the volume is mapped
/// affinely onto the widest symmetric span of the target type. slope and inter
/// are pre-rounded to float32 (their on-disk precision), so the round-trip
/// error bound is 0.5*|slope| plus double-precision dust.
struct StorageScaling {
  double slope = 1.0;
  double inter = 0.0;
};

inline StorageScaling choose_integer_scaling(double vmin, double vmax, int16_t code) {
  auto [lo, hi] = dtype::integer_range(code);
  if (vmin >= lo && vmax <= hi) return {1.0, 0.0};
  // Map [vmin, vmax] onto the symmetric span [-M, M] (or [0, hi] for unsigned).
  double span_lo = lo == 0.0 ? 0.0 : -std::min(-lo - 1.0, hi);
  double span_hi = lo == 0.0 ? hi : std::min(-lo - 1.0, hi);
  double span = span_hi - span_lo;
  double slope = (vmax - vmin) / span;
  if (slope == 0.0) return {1.0, vmin};
  // Round through float32 first; codes are then chosen against the stored values.
  slope = static_cast<double>(static_cast<float>(slope));
  double inter = static_cast<double>(static_cast<float>(vmin - span_lo * slope));
  return {slope, inter};
}

/// Serialize a Volume4D to the 348-byte header + 4 pad bytes + voxel data,
/// in host endianness.
inline std::vector<unsigned char> encode_volume(const Volume4D& v, int16_t datatype_code,
                                                StorageScaling* used_scaling = nullptr) {
  using namespace detail;
  if (!dtype::supported(datatype_code))
    fail(errc::unsupported_datatype, "datatype code " + std::to_string(datatype_code));
  if (!v.all_finite()) fail(errc::range_error, "volume contains non-finite values");

  double vmin = 0.0, vmax = 0.0;
  if (!v.data.empty()) {
    vmin = vmax = v.data[0];
    for (double x : v.data) {
      vmin = std::min(vmin, x);
      vmax = std::max(vmax, x);
    }
  }

  StorageScaling sc;
  if (dtype::is_integer(datatype_code)) sc = choose_integer_scaling(vmin, vmax, datatype_code);
  if (used_scaling) *used_scaling = sc;

  if (v.nx < 1 || v.ny < 1 || v.nz < 1 || v.nt < 1) fail(errc::bad_header, "volume has an empty axis");
  if (v.nx > 32767 || v.ny > 32767 || v.nz > 32767 || v.nt > 32767)
    fail(errc::bad_header, "axis extent exceeds the int16 header field");

  const int voxel_bytes = dtype::bits(datatype_code) / 8;
  const bool is_4d = v.nt > 1;
  std::vector<unsigned char> out(352 + v.size() * static_cast<size_t>(voxel_bytes), 0);

  write_scalar<int32_t>(out.data(), 0, 348);
  std::array<int16_t, 8> dim{1, 1, 1, 1, 1, 1, 1, 1};
  dim[0] = is_4d ? 4 : 3;
  dim[1] = static_cast<int16_t>(v.nx);
  dim[2] = static_cast<int16_t>(v.ny);
  dim[3] = static_cast<int16_t>(v.nz);
  dim[4] = static_cast<int16_t>(is_4d ? v.nt : 1);
  for (size_t i = 0; i < 8; ++i) write_scalar<int16_t>(out.data(), 40 + 2 * i, dim[i]);
  write_scalar<int16_t>(out.data(), 70, datatype_code);
  write_scalar<int16_t>(out.data(), 72, static_cast<int16_t>(dtype::bits(datatype_code)));
  std::array<float, 8> pixdim{};
  pixdim[0] = 1.0f;
  for (int c = 0; c < 3; ++c) pixdim[static_cast<size_t>(c) + 1] = static_cast<float>(v.affine.column_norm(c));
  pixdim[4] = static_cast<float>(v.tr_seconds);
  for (size_t i = 0; i < 8; ++i) write_scalar<float>(out.data(), 76 + 4 * i, pixdim[i]);
  write_scalar<float>(out.data(), 108, 352.0f);
  write_scalar<float>(out.data(), 112, static_cast<float>(sc.slope));
  write_scalar<float>(out.data(), 116, static_cast<float>(sc.inter));
  write_scalar<uint8_t>(out.data(), 123, 2 | 8);  // mm, seconds
  write_scalar<int16_t>(out.data(), 254, 1);      // sform_code = scanner
  for (size_t r = 0; r < 3; ++r)
    for (size_t c = 0; c < 4; ++c)
      write_scalar<float>(out.data(), 280 + 16 * r + 4 * c, static_cast<float>(v.affine(static_cast<int>(r), static_cast<int>(c))));
  std::memcpy(out.data() + 344, "n+1\0", 4);
  // bytes 348..351 are the zeroed extension flag

  unsigned char* p = out.data() + 352;
  const double islope = 1.0 / sc.slope;
  for (size_t i = 0; i < v.size(); ++i, p += voxel_bytes) {
    const double val = v.data[i];
    switch (datatype_code) {
      case dtype::float64:
        write_scalar<double>(p, 0, val);
        break;
      case dtype::float32:
        write_scalar<float>(p, 0, static_cast<float>(val));
        break;
      default: {
        // Rounding model: nearest integer, halves away from zero, clamped.
        auto [lo, hi] = dtype::integer_range(datatype_code);
        int64_t q = std::llround((val - sc.inter) * islope);
        q = std::clamp(q, static_cast<int64_t>(lo), static_cast<int64_t>(hi));
        switch (datatype_code) {
          case dtype::uint8: write_scalar<uint8_t>(p, 0, static_cast<uint8_t>(q)); break;
          case dtype::int8: write_scalar<int8_t>(p, 0, static_cast<int8_t>(q)); break;
          case dtype::int16: write_scalar<int16_t>(p, 0, static_cast<int16_t>(q)); break;
          case dtype::uint16: write_scalar<uint16_t>(p, 0, static_cast<uint16_t>(q)); break;
          case dtype::int32: write_scalar<int32_t>(p, 0, static_cast<int32_t>(q)); break;
        }
        break;
      }
    }
  }
  return out;
}

/// Write a volume as .nii, or .nii.gz when the path ends in ".gz".
inline void write_volume(const Volume4D& v, int16_t datatype_code, const std::filesystem::path& path,
                         StorageScaling* used_scaling = nullptr) {
  std::vector<unsigned char> bytes = encode_volume(v, datatype_code, used_scaling);
  if (path.extension() == ".gz") bytes = detail::gzip_compress(bytes);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(errc::io_error, "cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(errc::io_error, "short write: " + path.string());
}

}  // namespace cscope
