#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "cscope/error.hpp"
#include "cscope/rng.hpp"
#include "cscope/volume.hpp"

namespace cscope {

/// Drop the first n time frames (magnetic-saturation trim).
inline Volume4D trim_initial(const Volume4D& v, int n) {
  if (n < 0 || n >= v.nt) fail(errc::trim_too_long, "cannot trim " + std::to_string(n) + " of " + std::to_string(v.nt) + " frames");
  Volume4D out(v.nx, v.ny, v.nz, v.nt - n);
  out.affine = v.affine;
  out.tr_seconds = v.tr_seconds;
  out.source_dtype = v.source_dtype;
  const size_t fs = v.frame_size();
  std::copy(v.data.begin() + static_cast<std::ptrdiff_t>(fs) * n, v.data.end(), out.data.begin());
  return out;
}

/// Gaussian smoothing parameters. The per-axis sigma in voxel units is
/// fwhm_mm / (sqrt(8 ln 2) * voxel_size_mm[axis]).
struct SmoothingParams {
  double fwhm_mm = 4.0;
  std::array<double, 3> voxel_size_mm{3.0, 3.0, 3.0};
  double truncate_radius_sigmas = 4.0;

  void validate() const {
    require(fwhm_mm > 0, errc::range_error, "fwhm must be > 0");
    for (double d : voxel_size_mm) require(d > 0, errc::range_error, "voxel size must be > 0");
    require(truncate_radius_sigmas > 0, errc::range_error, "truncate radius must be > 0");
  }

  double sigma_vox(int axis) const {
    return fwhm_mm / (std::sqrt(8.0 * std::log(2.0)) * voxel_size_mm[static_cast<size_t>(axis)]);
  }

  /// Kernel weights for one axis: exp(-j^2 / 2 sigma^2) for j in [-r, r] with
  /// r = max(1, ceil(truncate * sigma)), normalized to sum 1.
  std::vector<double> kernel(int axis) const {
    const double sigma = sigma_vox(axis);
    const int r = std::max(1, static_cast<int>(std::ceil(truncate_radius_sigmas * sigma)));
    std::vector<double> w(static_cast<size_t>(2 * r + 1));
    double sum = 0;
    for (int j = -r; j <= r; ++j) {
      double x = std::exp(-0.5 * (j / sigma) * (j / sigma));
      w[static_cast<size_t>(j + r)] = x;
      sum += x;
    }
    for (double& x : w) x /= sum;
    return w;
  }
};

namespace detail {

/// Half-sample symmetric reflection: ... d c b a | a b c d | d c b a ...
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

// 1D convolution along one axis of a 3D frame, reflect borders, fixed
// summation order (ascending kernel tap) so runs are bitwise reproducible.
inline void convolve_axis(const std::vector<double>& in, std::vector<double>& out, int nx, int ny, int nz,
                          int axis, const std::vector<double>& w) {
  const int r = static_cast<int>(w.size() / 2);
  const int n = axis == 0 ? nx : axis == 1 ? ny : nz;
  auto idx = [&](int x, int y, int z) {
    return static_cast<size_t>(x) + static_cast<size_t>(nx) * (static_cast<size_t>(y) + static_cast<size_t>(ny) * static_cast<size_t>(z));
  };
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const int c = axis == 0 ? x : axis == 1 ? y : z;
        double acc = 0;
        for (int j = -r; j <= r; ++j) {
          int s = reflect_index(c + j, n);
          int sx = axis == 0 ? s : x, sy = axis == 1 ? s : y, sz = axis == 2 ? s : z;
          acc += w[static_cast<size_t>(j + r)] * in[idx(sx, sy, sz)];
        }
        out[idx(x, y, z)] = acc;
      }
}

}  // namespace detail

/// Separable 3D Gaussian smoothing of every time frame.
inline Volume4D gaussian_smooth(const Volume4D& v, const SmoothingParams& p) {
  p.validate();
  std::array<std::vector<double>, 3> w{p.kernel(0), p.kernel(1), p.kernel(2)};
  Volume4D out = v;
  const size_t fs = v.frame_size();
  std::vector<double> a(fs), b(fs);
  for (int t = 0; t < v.nt; ++t) {
    const double* src = v.data.data() + fs * static_cast<size_t>(t);
    std::copy(src, src + fs, a.begin());
    detail::convolve_axis(a, b, v.nx, v.ny, v.nz, 0, w[0]);
    detail::convolve_axis(b, a, v.nx, v.ny, v.nz, 1, w[1]);
    detail::convolve_axis(a, b, v.nx, v.ny, v.nz, 2, w[2]);
    std::copy(b.begin(), b.end(), out.data.begin() + static_cast<std::ptrdiff_t>(fs) * t);
  }
  return out;
}

enum class AggregateMode { max, min };

/// Collapse the time axis by per-voxel max or min.
inline Volume3D aggregate_time(const Volume4D& v, AggregateMode mode) {
  Volume3D out(v.nx, v.ny, v.nz);
  out.affine = v.affine;
  const size_t fs = v.frame_size();
  for (size_t i = 0; i < fs; ++i) {
    double acc = v.data[i];
    for (int t = 1; t < v.nt; ++t) {
      double x = v.data[i + fs * static_cast<size_t>(t)];
      acc = mode == AggregateMode::max ? std::max(acc, x) : std::min(acc, x);
    }
    out.data[i] = acc;
  }
  return out;
}

struct QuantizedVolume {
  Volume4D codes;  // integer-valued voxels stored as doubles
  double slope = 1.0;
  double inter = 0.0;
};

/// Min-max affine quantization onto the symmetric int16 span [-32767, 32767].
/// Dequantization is codes*slope + inter with error at most slope/2; constant
/// volumes map to code 0 with slope 1.
inline QuantizedVolume quantize_int(const Volume4D& v) {
  if (!v.all_finite()) fail(errc::range_error, "volume contains non-finite values");
  double vmin = v.data[0], vmax = v.data[0];
  for (double x : v.data) {
    vmin = std::min(vmin, x);
    vmax = std::max(vmax, x);
  }
  QuantizedVolume q;
  q.codes = v;
  if (vmax == vmin) {
    q.slope = 1.0;
    q.inter = vmin;
    std::fill(q.codes.data.begin(), q.codes.data.end(), 0.0);
    return q;
  }
  q.slope = (vmax - vmin) / 65534.0;
  q.inter = vmin + 32767.0 * q.slope;
  for (double& x : q.codes.data) x = static_cast<double>(std::llround((x - vmin) / q.slope) - 32767);
  return q;
}

inline Volume4D dequantize(const QuantizedVolume& q) {
  Volume4D v = q.codes;
  for (double& x : v.data) x = x * q.slope + q.inter;
  return v;
}

/// The augmentation angle set.
inline const std::vector<double>& rotation_angles() {
  static const std::vector<double> angles{-20.0, -10.0, -5.0, 5.0, 10.0, 20.0};
  return angles;
}

/// Rotate about the volume center in the axial (x-y) plane, counterclockwise
/// for positive angles, trilinear interpolation, zero fill outside the grid.
/// When rng is given the angle is drawn uniformly from rotation_angles().
inline Volume3D rotate_axial(const Volume3D& v, double angle_deg, Rng* rng = nullptr) {
  if (rng) angle_deg = rng->pick(rotation_angles());
  require(std::isfinite(angle_deg), errc::range_error, "angle must be finite");
  const double th = angle_deg * 3.14159265358979323846 / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cx = (v.nx - 1) / 2.0, cy = (v.ny - 1) / 2.0;

  Volume3D out(v.nx, v.ny, v.nz);
  out.affine = v.affine;
  for (int z = 0; z < v.nz; ++z)
    for (int y = 0; y < v.ny; ++y)
      for (int x = 0; x < v.nx; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double sx = cx + c * dx + s * dy;
        const double sy = cy - s * dx + c * dy;
        const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        double acc = 0;
        for (int jy = 0; jy <= 1; ++jy)
          for (int jx = 0; jx <= 1; ++jx) {
            const int px = x0 + jx, py = y0 + jy;
            if (px < 0 || px >= v.nx || py < 0 || py >= v.ny) continue;
            const double wgt = (jx ? fx : 1 - fx) * (jy ? fy : 1 - fy);
            acc += wgt * v.at(px, py, z);
          }
        out.at(x, y, z) = acc;
      }
  return out;
}

}  // namespace cscope
