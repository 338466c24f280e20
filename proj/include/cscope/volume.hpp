#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "cscope/error.hpp"

namespace cscope {

/// Row-major 4x4 matrix, used for voxel-to-world affines.
struct Mat4 {
  std::array<double, 16> m{};

  double& operator()(int r, int c) { return m[static_cast<size_t>(r) * 4 + c]; }
  double operator()(int r, int c) const { return m[static_cast<size_t>(r) * 4 + c]; }

  static Mat4 identity() {
    Mat4 a;
    a(0, 0) = a(1, 1) = a(2, 2) = a(3, 3) = 1.0;
    return a;
  }

  static Mat4 scaling(double sx, double sy, double sz) {
    Mat4 a = identity();
    a(0, 0) = sx;
    a(1, 1) = sy;
    a(2, 2) = sz;
    return a;
  }

  Mat4 operator*(const Mat4& o) const {
    Mat4 r;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += (*this)(i, k) * o(k, j);
        r(i, j) = s;
      }
    return r;
  }

  std::array<double, 3> apply(double x, double y, double z) const {
    std::array<double, 3> r;
    for (int i = 0; i < 4; ++i) {
      double s = (*this)(i, 0) * x + (*this)(i, 1) * y + (*this)(i, 2) * z + (*this)(i, 3);
      if (i < 3) r[static_cast<size_t>(i)] = s;
    }
    return r;
  }

  /// Gauss-Jordan inverse with partial pivoting. Throws RangeError if singular.
  Mat4 inverse() const {
    std::array<double, 32> a{};  // [A | I]
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) a[static_cast<size_t>(i) * 8 + j] = (*this)(i, j);
      a[static_cast<size_t>(i) * 8 + 4 + i] = 1.0;
    }
    for (int col = 0; col < 4; ++col) {
      int piv = col;
      for (int r = col + 1; r < 4; ++r)
        if (std::fabs(a[static_cast<size_t>(r) * 8 + col]) > std::fabs(a[static_cast<size_t>(piv) * 8 + col])) piv = r;
      double pval = a[static_cast<size_t>(piv) * 8 + col];
      if (std::fabs(pval) < 1e-12) fail(errc::range_error, "affine matrix is singular");
      if (piv != col)
        for (int j = 0; j < 8; ++j) std::swap(a[static_cast<size_t>(piv) * 8 + j], a[static_cast<size_t>(col) * 8 + j]);
      for (int j = 0; j < 8; ++j) a[static_cast<size_t>(col) * 8 + j] /= pval;
      for (int r = 0; r < 4; ++r) {
        if (r == col) continue;
        double f = a[static_cast<size_t>(r) * 8 + col];
        if (f == 0.0) continue;
        for (int j = 0; j < 8; ++j) a[static_cast<size_t>(r) * 8 + j] -= f * a[static_cast<size_t>(col) * 8 + j];
      }
    }
    Mat4 inv;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) inv(i, j) = a[static_cast<size_t>(i) * 8 + 4 + j];
    return inv;
  }

  /// Euclidean norm of the rotation/scale part of column c: the voxel size along axis c.
  double column_norm(int c) const {
    double s = 0;
    for (int r = 0; r < 3; ++r) s += (*this)(r, c) * (*this)(r, c);
    return std::sqrt(s);
  }

  bool almost_equal(const Mat4& o, double tol) const {
    for (size_t i = 0; i < 16; ++i)
      if (std::fabs(m[i] - o.m[i]) > tol) return false;
    return true;
  }
};

/// Dense 3D grid of doubles, x fastest (NIfTI order).
struct Volume3D {
  int nx = 0, ny = 0, nz = 0;
  std::vector<double> data;
  Mat4 affine = Mat4::identity();

  Volume3D() = default;
  Volume3D(int x, int y, int z, double fill = 0.0)
      : nx(x), ny(y), nz(z), data(static_cast<size_t>(x) * y * z, fill) {}

  size_t size() const { return data.size(); }
  size_t idx(int x, int y, int z) const {
    return static_cast<size_t>(x) + static_cast<size_t>(nx) * (static_cast<size_t>(y) + static_cast<size_t>(ny) * static_cast<size_t>(z));
  }
  double& at(int x, int y, int z) { return data[idx(x, y, z)]; }
  double at(int x, int y, int z) const { return data[idx(x, y, z)]; }
};

/// Dense 4D grid (3D space x time), x fastest, t slowest. T=1 represents a 3D image.
struct Volume4D {
  int nx = 0, ny = 0, nz = 0, nt = 0;
  std::vector<double> data;
  Mat4 affine = Mat4::identity();
  double tr_seconds = 0.0;
  int source_dtype = 64;  // NIfTI datatype code of the originating file

  Volume4D() = default;
  Volume4D(int x, int y, int z, int t, double fill = 0.0)
      : nx(x), ny(y), nz(z), nt(t), data(static_cast<size_t>(x) * y * z * t, fill) {}

  size_t size() const { return data.size(); }
  size_t frame_size() const { return static_cast<size_t>(nx) * ny * nz; }
  size_t idx(int x, int y, int z, int t) const {
    return static_cast<size_t>(x) +
           static_cast<size_t>(nx) *
               (static_cast<size_t>(y) +
                static_cast<size_t>(ny) * (static_cast<size_t>(z) + static_cast<size_t>(nz) * static_cast<size_t>(t)));
  }
  double& at(int x, int y, int z, int t) { return data[idx(x, y, z, t)]; }
  double at(int x, int y, int z, int t) const { return data[idx(x, y, z, t)]; }

  Volume3D frame(int t) const {
    Volume3D f(nx, ny, nz);
    f.affine = affine;
    const size_t n = frame_size();
    std::copy(data.begin() + static_cast<std::ptrdiff_t>(n) * t,
              data.begin() + static_cast<std::ptrdiff_t>(n) * (t + 1), f.data.begin());
    return f;
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

}  // namespace cscope
