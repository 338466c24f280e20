#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "cscope/volume_ops.hpp"

using namespace cscope;

namespace {

Volume4D random_volume(int nx, int ny, int nz, int nt, uint64_t seed, double lo = -5, double hi = 5) {
  Volume4D v(nx, ny, nz, nt);
  Rng rng(seed);
  for (auto& x : v.data) x = rng.uniform(lo, hi);
  return v;
}

// Dense, direct triple-loop convolution oracle with reflect borders, built
// from the closed-form 3D Gaussian (no separability assumption).
Volume3D dense_gaussian_oracle(const Volume3D& in, const SmoothingParams& p) {
  std::array<double, 3> sigma{p.sigma_vox(0), p.sigma_vox(1), p.sigma_vox(2)};
  std::array<int, 3> r;
  for (int a = 0; a < 3; ++a) r[a] = std::max(1, (int)std::ceil(p.truncate_radius_sigmas * sigma[a]));

  // dense kernel
  std::vector<double> k((2 * r[0] + 1) * (2 * r[1] + 1) * (2 * r[2] + 1));
  double sum = 0;
  size_t i = 0;
  for (int dz = -r[2]; dz <= r[2]; ++dz)
    for (int dy = -r[1]; dy <= r[1]; ++dy)
      for (int dx = -r[0]; dx <= r[0]; ++dx, ++i) {
        double e = dx * dx / (2 * sigma[0] * sigma[0]) + dy * dy / (2 * sigma[1] * sigma[1]) +
                   dz * dz / (2 * sigma[2] * sigma[2]);
        k[i] = std::exp(-e);
        sum += k[i];
      }
  for (double& x : k) x /= sum;

  auto reflect = [](int idx, int n) {
    while (idx < 0 || idx >= n) {
      if (idx < 0) idx = -1 - idx;
      if (idx >= n) idx = 2 * n - 1 - idx;
    }
    return idx;
  };

  Volume3D out(in.nx, in.ny, in.nz);
  for (int z = 0; z < in.nz; ++z)
    for (int y = 0; y < in.ny; ++y)
      for (int x = 0; x < in.nx; ++x) {
        double acc = 0;
        size_t ki = 0;
        for (int dz = -r[2]; dz <= r[2]; ++dz)
          for (int dy = -r[1]; dy <= r[1]; ++dy)
            for (int dx = -r[0]; dx <= r[0]; ++dx, ++ki)
              acc += k[ki] * in.at(reflect(x + dx, in.nx), reflect(y + dy, in.ny), reflect(z + dz, in.nz));
        out.at(x, y, z) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("trim_initial") {
  SECTION("150 frames minus 7 leaves 143") {
    Volume4D v = random_volume(2, 2, 2, 150, 1);
    v.tr_seconds = 2.0;
    Volume4D t = trim_initial(v, 7);
    CHECK(t.nt == 143);
    CHECK(t.tr_seconds == 2.0);
    for (int i = 0; i < t.nt; ++i)
      for (int x = 0; x < 2; ++x) REQUIRE(t.at(x, 0, 1, i) == v.at(x, 0, 1, i + 7));
  }
  SECTION("n=0 is the identity") {
    Volume4D v = random_volume(3, 2, 2, 4, 2);
    CHECK(trim_initial(v, 0).data == v.data);
  }
  SECTION("trimming all frames fails") {
    Volume4D v = random_volume(2, 2, 2, 5, 3);
    try {
      trim_initial(v, 5);
      FAIL("expected TrimTooLong");
    } catch (const error& e) {
      CHECK(e.code() == errc::trim_too_long);
    }
  }
  SECTION("composition: trim(trim(v,a),b) == trim(v,a+b)") {
    Volume4D v = random_volume(2, 3, 2, 9, 4);
    CHECK(trim_initial(trim_initial(v, 2), 3).data == trim_initial(v, 5).data);
  }
}

TEST_CASE("gaussian_smooth") {
  SmoothingParams p;  // 4mm FWHM on 3mm voxels

  SECTION("derived sigma") {
    // sigma = FWHM / (sqrt(8 ln 2) * d) evaluated numerically
    CHECK(p.sigma_vox(0) == Catch::Approx(0.56619).margin(1e-4));
  }
  SECTION("constant volume is unchanged") {
    Volume4D v(6, 5, 4, 2, 3.0);
    Volume4D sm = gaussian_smooth(v, p);
    for (double x : sm.data) REQUIRE(x == Catch::Approx(3.0).margin(1e-12));
  }
  SECTION("unit impulse reproduces the dense oracle") {
    Volume4D v(9, 9, 9, 1);
    v.at(4, 4, 4, 0) = 1.0;
    Volume4D sm = gaussian_smooth(v, p);
    Volume3D oracle = dense_gaussian_oracle(v.frame(0), p);
    for (size_t i = 0; i < oracle.size(); ++i) REQUIRE(sm.data[i] == Catch::Approx(oracle.data[i]).margin(1e-12));
  }
  SECTION("random frame matches the dense oracle near borders too") {
    Volume4D v = random_volume(5, 4, 6, 1, 77);
    Volume4D sm = gaussian_smooth(v, p);
    Volume3D oracle = dense_gaussian_oracle(v.frame(0), p);
    for (size_t i = 0; i < oracle.size(); ++i) REQUIRE(sm.data[i] == Catch::Approx(oracle.data[i]).margin(1e-10));
  }
  SECTION("volume mean is preserved") {
    Volume4D v = random_volume(7, 6, 5, 1, 5);
    Volume4D sm = gaussian_smooth(v, p);
    double m0 = 0, m1 = 0;
    for (double x : v.data) m0 += x;
    for (double x : sm.data) m1 += x;
    CHECK(m1 / sm.size() == Catch::Approx(m0 / v.size()).margin(1e-9));
  }
}

TEST_CASE("aggregate_time") {
  SECTION("constant in t returns any frame") {
    Volume4D v(3, 3, 2, 4);
    Rng rng(6);
    for (int z = 0; z < 2; ++z)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
          double val = rng.uniform(-2, 2);
          for (int t = 0; t < 4; ++t) v.at(x, y, z, t) = val;
        }
    Volume3D m = aggregate_time(v, AggregateMode::max);
    CHECK(m.data == v.frame(0).data);
  }
  SECTION("matches brute-force per-voxel loop") {
    Volume4D v = random_volume(2, 2, 2, 3, 8);
    Volume3D mx = aggregate_time(v, AggregateMode::max);
    Volume3D mn = aggregate_time(v, AggregateMode::min);
    for (int z = 0; z < 2; ++z)
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
          double hi = -1e300, lo = 1e300;
          for (int t = 0; t < 3; ++t) {
            hi = std::max(hi, v.at(x, y, z, t));
            lo = std::min(lo, v.at(x, y, z, t));
          }
          REQUIRE(mx.at(x, y, z) == hi);
          REQUIRE(mn.at(x, y, z) == lo);
        }
  }
  SECTION("max/min duality and ordering") {
    Volume4D v = random_volume(3, 2, 2, 5, 9);
    Volume4D neg = v;
    for (double& x : neg.data) x = -x;
    Volume3D a = aggregate_time(neg, AggregateMode::min);
    Volume3D b = aggregate_time(v, AggregateMode::max);
    for (size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a.data[i] == -b.data[i]);
      REQUIRE(b.data[i] >= aggregate_time(v, AggregateMode::min).data[i]);
    }
  }
}

TEST_CASE("quantize_int") {
  SECTION("constant volume maps to code 0 with slope 1 and exact dequantization") {
    Volume4D v(2, 3, 2, 1, 5.0);
    QuantizedVolume q = quantize_int(v);
    CHECK(q.slope == 1.0);
    CHECK(q.inter == 5.0);
    for (double c : q.codes.data) REQUIRE(c == 0.0);
    Volume4D d = dequantize(q);
    for (double x : d.data) REQUIRE(x == 5.0);
  }
  SECTION("range {0,1000}: reconstruction error bounded by slope/2") {
    Volume4D v(10, 1, 1, 1);
    std::vector<double> vals{0, 1000, 3.7, 999.2, 512.1, 13.37, 250, 750.5, 0.49, 42};
    v.data = vals;
    QuantizedVolume q = quantize_int(v);
    CHECK(q.slope == Catch::Approx(1000.0 / 65534.0).epsilon(1e-12));
    Volume4D d = dequantize(q);
    // oracle: explicit min-max affine quantizer evaluated per element
    for (size_t i = 0; i < vals.size(); ++i) {
      double code = std::llround((vals[i] - 0.0) / q.slope) - 32767.0;
      REQUIRE(q.codes.data[i] == code);
      REQUIRE(std::fabs(d.data[i] - vals[i]) <= 1000.0 / (2.0 * 65534.0) + 1e-12);
      REQUIRE(std::fabs(q.codes.data[i]) <= 32767.0);
    }
  }
  SECTION("NaN input is rejected") {
    Volume4D v(2, 2, 1, 1, 1.0);
    v.data[1] = std::nan("");
    try {
      quantize_int(v);
      FAIL("expected RangeError");
    } catch (const error& e) {
      CHECK(e.code() == errc::range_error);
    }
  }
}

TEST_CASE("rotate_axial") {
  SECTION("angle 0 is the identity") {
    Volume3D v(5, 4, 3);
    Rng rng(11);
    for (auto& x : v.data) x = rng.uniform(0, 1);
    Volume3D r = rotate_axial(v, 0.0);
    for (size_t i = 0; i < v.size(); ++i) REQUIRE(r.data[i] == Catch::Approx(v.data[i]).margin(1e-12));
  }
  SECTION("90 degrees equals the index-permutation quarter turn") {
    const int n = 5;
    Volume3D v(n, n, 1);
    Rng rng(12);
    for (auto& x : v.data) x = rng.uniform(0, 10);  // asymmetric pattern
    Volume3D r = rotate_axial(v, 90.0);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) REQUIRE(r.at(x, y, 0) == Catch::Approx(v.at(y, n - 1 - x, 0)).margin(1e-9));
  }
  SECTION("seeded draws cover the six angles uniformly") {
    Rng rng(7);
    Volume3D v(2, 2, 1, 1.0);
    std::map<double, int> freq;
    const int n = 6000;
    for (int i = 0; i < n; ++i) {
      // draw via the same entry point used by augmentation
      double angle = rng.pick(rotation_angles());
      freq[angle]++;
    }
    REQUIRE(freq.size() == 6);
    for (auto& [angle, count] : freq) CHECK(std::fabs(count / double(n) - 1.0 / 6.0) < 0.02);
  }
  SECTION("rotation by theta then -theta approximately restores a smooth blob") {
    const int n = 17;
    Volume3D v(n, n, 3);
    for (int z = 0; z < 3; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          double dx = x - 8.0, dy = y - 8.0;
          v.at(x, y, z) = std::exp(-(dx * dx + dy * dy) / 18.0);
        }
    Volume3D back = rotate_axial(rotate_axial(v, 10.0), -10.0);
    double max_err = 0;
    for (size_t i = 0; i < v.size(); ++i) max_err = std::max(max_err, std::fabs(back.data[i] - v.data[i]));
    CHECK(max_err <= 0.05);  // 5% of unit dynamic range
  }
}
