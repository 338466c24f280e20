#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "cscope/atlas.hpp"
#include "cscope/error.hpp"
#include "cscope/manifest.hpp"
#include "cscope/nifti.hpp"
#include "cscope/rng.hpp"

namespace cscope {

/// Synthetic cohort generator. Volumes are Gaussian noise around a baseline;
/// class-1 subjects get a constant intensity reduction inside the designated
/// signal blocks. With temporal_events on, signal blocks additionally carry a
/// shared rectified activation series whose amplitude is reduced (by
/// class1_event_scale) for class 1 — the activity-reduction analogue that
/// shows up in functional connectivity and in max-aggregated images.
struct PhantomSpec {
  int n_per_class = 2;
  int nx = 61, ny = 73, nz = 61;
  int timesteps = 150;
  double tr_seconds = 2.0;
  double baseline = 100.0;
  double noise_sigma = 10.0;
  double class_offset = 20.0;      // constant reduction for class 1 in signal blocks
  bool temporal_events = false;
  double event_amplitude = 20.0;   // class-0 activation amplitude
  double class1_event_scale = 0.0;
  double block_coupling = 0.8;     // rho between block drives and the global drive
  int blocks_per_axis = 2;
  uint64_t seed = 0;

  void validate() const {
    require(n_per_class >= 2, errc::range_error, "need at least 2 subjects per class");
    require(noise_sigma > 0, errc::range_error, "noise sigma must be > 0");
    require(timesteps >= 2, errc::range_error, "need at least 2 timesteps");
    require(blocks_per_axis >= 1, errc::range_error, "blocks_per_axis must be >= 1");
    require(block_coupling >= 0 && block_coupling <= 1, errc::range_error, "coupling must be in [0,1]");
  }

  int block_count() const { return blocks_per_axis * blocks_per_axis * blocks_per_axis; }

  /// Checkerboard of octant blocks: labels whose (bx+by+bz) is even.
  bool is_signal_block(int label) const {
    const int b = blocks_per_axis;
    const int i = label - 1;
    const int bx = i % b, by = (i / b) % b, bz = i / (b * b);
    return (bx + by + bz) % 2 == 0;
  }
};

namespace detail_phantom {

constexpr double kReluMeanOfStdNormal = 0.3989422804014327;  // E[max(0,Z)] = 1/sqrt(2pi)

/// Unit-mean rectified activation series shared by a block.
inline double activation(double s) { return std::max(0.0, s) / kReluMeanOfStdNormal; }

}  // namespace detail_phantom

/// Write one phantom subject volume. Deterministic per (spec.seed, index).
inline Volume4D make_phantom_volume(const PhantomSpec& spec, const AtlasLabels& atlas, int label,
                                    uint64_t subject_index) {
  Rng rng = Rng::derive(spec.seed, subject_index);
  const int T = spec.timesteps;
  const int blocks = spec.block_count();

  // shared drives: global u(t), then one series per block, coupled by rho
  std::vector<double> global(static_cast<size_t>(T));
  for (auto& g : global) g = rng.normal();
  std::vector<std::vector<double>> block_act(static_cast<size_t>(blocks), std::vector<double>(static_cast<size_t>(T)));
  const double rho = spec.block_coupling;
  for (int b = 0; b < blocks; ++b)
    for (int t = 0; t < T; ++t) {
      const double s = rho * global[static_cast<size_t>(t)] + std::sqrt(1.0 - rho * rho) * rng.normal();
      block_act[static_cast<size_t>(b)][static_cast<size_t>(t)] = detail_phantom::activation(s);
    }

  const double amp = label == 1 ? spec.event_amplitude * spec.class1_event_scale : spec.event_amplitude;

  Volume4D v(spec.nx, spec.ny, spec.nz, T);
  v.affine = Mat4::scaling(3, 3, 3);
  v.tr_seconds = spec.tr_seconds;
  const size_t fs = v.frame_size();
  for (int t = 0; t < T; ++t) {
    double* frame = v.data.data() + fs * static_cast<size_t>(t);
    for (size_t i = 0; i < fs; ++i) {
      const int block = static_cast<int>(atlas.labels.data[i]);
      double val = spec.baseline + rng.normal(0.0, spec.noise_sigma);
      if (block >= 1 && spec.is_signal_block(block)) {
        if (label == 1) val -= spec.class_offset;
        if (spec.temporal_events) val += amp * block_act[static_cast<size_t>(block) - 1][static_cast<size_t>(t)];
      }
      frame[i] = val;
    }
  }
  return v;
}

/// Generate the phantom cohort: volumes, the block atlas that seeded them,
/// and a manifest CSV. Returns the loaded manifest (absolute paths).
inline CohortManifest generate_phantom(const PhantomSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  AtlasLabels atlas = make_block_atlas(spec.nx, spec.ny, spec.nz, spec.blocks_per_axis, Mat4::scaling(3, 3, 3));
  save_atlas(atlas, out_dir / "atlas.nii", out_dir / "atlas.txt");

  CohortManifest m;
  char name[32];
  uint64_t index = 0;
  Rng demo_rng = Rng::derive(spec.seed, 0xD390);
  for (int label : {0, 1}) {
    for (int i = 0; i < spec.n_per_class; ++i, ++index) {
      std::snprintf(name, sizeof name, "synth%03d", static_cast<int>(index));
      Volume4D v = make_phantom_volume(spec, atlas, label, index);
      const auto path = out_dir / (std::string(name) + ".nii");
      write_volume(v, dtype::int16, path);
      SubjectRow r;
      r.subject_id = name;
      r.site = Site::synth;
      r.path = std::filesystem::absolute(path);
      r.label = label;
      r.age = std::floor(20.0 + 40.0 * demo_rng.uniform());
      r.sex = demo_rng.uniform() < 0.5 ? 'M' : 'F';
      m.rows.push_back(std::move(r));
    }
  }
  save_manifest(m, out_dir / "manifest.csv");
  return m;
}

}  // namespace cscope
