#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cscope/error.hpp"
#include "cscope/nifti.hpp"
#include "cscope/volume.hpp"

namespace cscope {

/// Integer parcellation: label 0 is background, label k (1..R) is ROI k,
/// named by names[k-1].
struct AtlasLabels {
  Volume3D labels;
  std::vector<std::string> names;

  int roi_count() const { return static_cast<int>(names.size()); }

  int label_at(int x, int y, int z) const { return static_cast<int>(labels.at(x, y, z)); }

  std::vector<int> voxel_counts() const {
    std::vector<int> counts(static_cast<size_t>(roi_count()) + 1, 0);
    for (double v : labels.data) {
      auto k = static_cast<long>(v);
      if (k >= 0 && k <= roi_count()) counts[static_cast<size_t>(k)]++;
    }
    return counts;
  }

  /// Checks labels are integers within [0, R].
  void validate() const {
    for (double v : labels.data) {
      if (v != std::floor(v) || v < 0 || v > roi_count())
        fail(errc::bad_label, "atlas label " + std::to_string(v) + " outside [0, " + std::to_string(roi_count()) + "]");
    }
  }
};

/// Load a label NIfTI plus a name list (one name per line; line k names label k).
inline AtlasLabels load_atlas(const std::filesystem::path& labels_nii, const std::filesystem::path& names_txt) {
  Volume4D v = read_volume(labels_nii);
  if (v.nt != 1) fail(errc::bad_header, "atlas label volume must be 3D");
  AtlasLabels a;
  a.labels = v.frame(0);

  std::ifstream f(names_txt);
  if (!f) fail(errc::io_error, "cannot open " + names_txt.string());
  std::string line;
  while (std::getline(f, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) a.names.push_back(line);
  }
  if (a.names.empty()) fail(errc::bad_field, "empty atlas name list");
  a.validate();
  return a;
}

inline void save_atlas(const AtlasLabels& a, const std::filesystem::path& labels_nii,
                       const std::filesystem::path& names_txt) {
  Volume4D v(a.labels.nx, a.labels.ny, a.labels.nz, 1);
  v.data = a.labels.data;
  v.affine = a.labels.affine;
  write_volume(v, dtype::int16, labels_nii);
  std::ofstream f(names_txt, std::ios::trunc);
  if (!f) fail(errc::io_error, "cannot open " + names_txt.string());
  for (const auto& n : a.names) f << n << "\n";
}

/// Nearest-neighbor resampling of atlas labels onto a target grid via affine
/// composition. ROIs that end up with zero voxels are appended to emptied
/// (they are a warning, not an error).
inline AtlasLabels resample_labels(const AtlasLabels& atlas, int nx, int ny, int nz, const Mat4& target_affine,
                                   std::vector<int>* emptied = nullptr) {
  const Mat4 to_atlas = atlas.labels.affine.inverse() * target_affine;
  AtlasLabels out;
  out.names = atlas.names;
  out.labels = Volume3D(nx, ny, nz);
  out.labels.affine = target_affine;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        auto p = to_atlas.apply(x, y, z);
        const int ax = static_cast<int>(std::llround(p[0]));
        const int ay = static_cast<int>(std::llround(p[1]));
        const int az = static_cast<int>(std::llround(p[2]));
        double label = 0;
        if (ax >= 0 && ax < atlas.labels.nx && ay >= 0 && ay < atlas.labels.ny && az >= 0 && az < atlas.labels.nz)
          label = atlas.labels.at(ax, ay, az);
        out.labels.at(x, y, z) = label;
      }
  if (emptied) {
    auto counts = out.voxel_counts();
    for (int k = 1; k <= out.roi_count(); ++k)
      if (counts[static_cast<size_t>(k)] == 0) emptied->push_back(k);
  }
  return out;
}

/// Threshold a 4D probabilistic atlas (one map per ROI along t) into labels:
/// voxels take the argmax ROI when its probability clears the threshold.
inline AtlasLabels maxprob_labels(const Volume4D& prob, double threshold, std::vector<std::string> names) {
  if (static_cast<int>(names.size()) != prob.nt)
    fail(errc::shape_mismatch, "name count does not match probability maps");
  AtlasLabels a;
  a.names = std::move(names);
  a.labels = Volume3D(prob.nx, prob.ny, prob.nz);
  a.labels.affine = prob.affine;
  for (int z = 0; z < prob.nz; ++z)
    for (int y = 0; y < prob.ny; ++y)
      for (int x = 0; x < prob.nx; ++x) {
        int best = 0;
        double best_p = prob.at(x, y, z, 0);
        for (int k = 1; k < prob.nt; ++k) {
          double p = prob.at(x, y, z, k);
          if (p > best_p) {  // first map wins ties
            best = k;
            best_p = p;
          }
        }
        a.labels.at(x, y, z) = best_p >= threshold ? best + 1 : 0;
      }
  return a;
}

/// Partition a grid into blocks_per_axis^3 rectangular ROIs (phantom atlas).
inline AtlasLabels make_block_atlas(int nx, int ny, int nz, int blocks_per_axis, const Mat4& affine = Mat4::identity()) {
  AtlasLabels a;
  a.labels = Volume3D(nx, ny, nz);
  a.labels.affine = affine;
  const int b = blocks_per_axis;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        int bx = std::min(b - 1, x * b / nx);
        int by = std::min(b - 1, y * b / ny);
        int bz = std::min(b - 1, z * b / nz);
        a.labels.at(x, y, z) = 1 + bx + b * (by + b * bz);
      }
  for (int k = 1; k <= b * b * b; ++k) a.names.push_back("block_" + std::to_string(k));
  return a;
}

}  // namespace cscope
