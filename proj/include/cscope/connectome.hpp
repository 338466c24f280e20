#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cscope/atlas.hpp"
#include "cscope/error.hpp"
#include "cscope/volume.hpp"

namespace cscope {

/// Per-ROI mean time series, z-scored per column with the population (1/T)
/// standard deviation. Constant columns are zeroed and flagged instead of
/// dividing by zero.
struct RoiTimeSeries {
  int t_count = 0;
  std::vector<std::string> roi_names;
  std::vector<double> values;       // T x R, row-major by time: values[t*R + k]
  std::vector<uint8_t> constant;    // 1 if the ROI's raw series was constant

  int roi_count() const { return static_cast<int>(roi_names.size()); }
  double at(int t, int k) const { return values[static_cast<size_t>(t) * static_cast<size_t>(roi_count()) + static_cast<size_t>(k)]; }

  static RoiTimeSeries standardize(int T, int R, const std::vector<double>& raw, std::vector<std::string> names) {
    if (static_cast<size_t>(T) * static_cast<size_t>(R) != raw.size())
      fail(errc::shape_mismatch, "raw series size does not match T x R");
    RoiTimeSeries ts;
    ts.t_count = T;
    ts.roi_names = std::move(names);
    ts.values.assign(raw.size(), 0.0);
    ts.constant.assign(static_cast<size_t>(R), 0);
    for (int k = 0; k < R; ++k) {
      double mean = 0;
      for (int t = 0; t < T; ++t) mean += raw[static_cast<size_t>(t) * R + k];
      mean /= T;
      double var = 0;
      for (int t = 0; t < T; ++t) {
        double d = raw[static_cast<size_t>(t) * R + k] - mean;
        var += d * d;
      }
      var /= T;
      double sd = std::sqrt(var);
      if (sd < 1e-12) {
        ts.constant[static_cast<size_t>(k)] = 1;  // column left as zeros
        continue;
      }
      for (int t = 0; t < T; ++t)
        ts.values[static_cast<size_t>(t) * R + k] = (raw[static_cast<size_t>(t) * R + k] - mean) / sd;
    }
    return ts;
  }
};

/// Mean series per ROI, then z-score. Grids must match; every ROI needs at
/// least one voxel.
inline RoiTimeSeries extract_roi_timeseries(const Volume4D& v, const AtlasLabels& atlas) {
  if (v.nx != atlas.labels.nx || v.ny != atlas.labels.ny || v.nz != atlas.labels.nz)
    fail(errc::shape_mismatch, "functional grid does not match atlas grid");
  if (v.nt < 2) fail(errc::input_too_small, "need at least 2 time points");
  const int R = atlas.roi_count();
  auto counts = atlas.voxel_counts();
  for (int k = 1; k <= R; ++k)
    if (counts[static_cast<size_t>(k)] == 0)
      fail(errc::empty_roi, "ROI " + std::to_string(k) + " (" + atlas.names[static_cast<size_t>(k) - 1] + ") has no voxels");

  std::vector<double> raw(static_cast<size_t>(v.nt) * static_cast<size_t>(R), 0.0);
  const size_t fs = v.frame_size();
  for (int t = 0; t < v.nt; ++t) {
    const double* frame = v.data.data() + fs * static_cast<size_t>(t);
    for (size_t i = 0; i < fs; ++i) {
      const int k = static_cast<int>(atlas.labels.data[i]);
      if (k > 0) raw[static_cast<size_t>(t) * R + (k - 1)] += frame[i];
    }
    for (int k = 0; k < R; ++k) raw[static_cast<size_t>(t) * R + k] /= counts[static_cast<size_t>(k) + 1];
  }
  return RoiTimeSeries::standardize(v.nt, R, raw, atlas.names);
}

/// R x R Pearson correlation matrix. Symmetric, unit diagonal, entries
/// clamped to [-1, 1]; pairs involving a constant ROI get r = 0.
struct Connectome {
  int r_count = 0;
  std::vector<double> matrix;  // row-major R x R
  std::vector<std::string> roi_names;
  std::string subject_id;

  double at(int i, int j) const { return matrix[static_cast<size_t>(i) * r_count + j]; }
  double& at(int i, int j) { return matrix[static_cast<size_t>(i) * r_count + j]; }

  static Connectome identity(int r, std::vector<std::string> names, std::string subject = "") {
    Connectome c;
    c.r_count = r;
    c.roi_names = std::move(names);
    c.subject_id = std::move(subject);
    c.matrix.assign(static_cast<size_t>(r) * r, 0.0);
    for (int i = 0; i < r; ++i) c.at(i, i) = 1.0;
    return c;
  }
};

inline Connectome pearson_matrix(const RoiTimeSeries& ts) {
  const int R = ts.roi_count();
  const int T = ts.t_count;
  if (T < 2) fail(errc::input_too_small, "need at least 2 time points");
  Connectome c = Connectome::identity(R, ts.roi_names);

  // Columns are standardized, but compute the full Pearson form anyway so the
  // result is exact for any input.
  std::vector<double> mean(static_cast<size_t>(R), 0.0), norm(static_cast<size_t>(R), 0.0);
  for (int k = 0; k < R; ++k) {
    double m = 0;
    for (int t = 0; t < T; ++t) m += ts.at(t, k);
    mean[static_cast<size_t>(k)] = m / T;
  }
  for (int k = 0; k < R; ++k) {
    double s = 0;
    for (int t = 0; t < T; ++t) {
      double d = ts.at(t, k) - mean[static_cast<size_t>(k)];
      s += d * d;
    }
    norm[static_cast<size_t>(k)] = std::sqrt(s);
  }
  for (int i = 0; i < R; ++i) {
    for (int j = i + 1; j < R; ++j) {
      double r = 0;
      if (!ts.constant[static_cast<size_t>(i)] && !ts.constant[static_cast<size_t>(j)]) {
        double dot = 0;
        for (int t = 0; t < T; ++t) dot += (ts.at(t, i) - mean[static_cast<size_t>(i)]) * (ts.at(t, j) - mean[static_cast<size_t>(j)]);
        r = dot / (norm[static_cast<size_t>(i)] * norm[static_cast<size_t>(j)]);
        r = std::clamp(r, -1.0, 1.0);
      }
      c.at(i, j) = r;
      c.at(j, i) = r;
    }
  }
  return c;
}

/// Elementwise arithmetic mean over a nonempty group, in list order. The
/// optional Fisher-z route averages atanh(r) and maps back through tanh.
inline Connectome group_average(const std::vector<Connectome>& group, bool fisher_z = false) {
  if (group.empty()) fail(errc::empty_group, "cannot average an empty group");
  const Connectome& first = group.front();
  for (const auto& c : group) {
    if (c.r_count != first.r_count || c.roi_names != first.roi_names)
      fail(errc::shape_mismatch, "connectomes in a group must share ROI count and names");
  }
  Connectome out = first;
  out.subject_id = "group_mean";
  const size_t n = out.matrix.size();
  if (!fisher_z) {
    std::vector<double> acc(n, 0.0);
    for (const auto& c : group)
      for (size_t i = 0; i < n; ++i) acc[i] += c.matrix[i];
    for (size_t i = 0; i < n; ++i) out.matrix[i] = acc[i] / static_cast<double>(group.size());
  } else {
    std::vector<double> acc(n, 0.0);
    for (const auto& c : group)
      for (size_t i = 0; i < n; ++i) acc[i] += std::atanh(std::clamp(c.matrix[i], -1.0 + 1e-15, 1.0 - 1e-15));
    for (size_t i = 0; i < n; ++i) out.matrix[i] = std::tanh(acc[i] / static_cast<double>(group.size()));
  }
  for (int i = 0; i < out.r_count; ++i) out.at(i, i) = 1.0;
  return out;
}

/// Row-major flattening to a feature vector of length R^2.
inline std::vector<double> flatten(const Connectome& c) { return c.matrix; }

// ---------------------------------------------------------------------------
// Persistence: CSV with one header row of ROI names and R value rows.
// ---------------------------------------------------------------------------

inline void save_connectome_csv(const Connectome& c, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(errc::io_error, "cannot open " + path.string());
  for (int j = 0; j < c.r_count; ++j) f << (j ? "," : "") << c.roi_names[static_cast<size_t>(j)];
  f << "\n";
  char buf[64];
  for (int i = 0; i < c.r_count; ++i) {
    for (int j = 0; j < c.r_count; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", c.at(i, j));
      f << (j ? "," : "") << buf;
    }
    f << "\n";
  }
  if (!f) fail(errc::io_error, "short write: " + path.string());
}

inline Connectome load_connectome_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail(errc::io_error, "cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) fail(errc::bad_field, "empty connectome file");
  Connectome c;
  {
    std::stringstream ss(line);
    std::string name;
    while (std::getline(ss, name, ',')) c.roi_names.push_back(name);
  }
  c.r_count = static_cast<int>(c.roi_names.size());
  c.subject_id = path.stem().string();
  c.matrix.reserve(static_cast<size_t>(c.r_count) * c.r_count);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.matrix.push_back(std::stod(cell));
  }
  if (c.matrix.size() != static_cast<size_t>(c.r_count) * c.r_count)
    fail(errc::shape_mismatch, "connectome CSV is not an R x R matrix");
  return c;
}

// ---------------------------------------------------------------------------
// Connectivity export: thresholded edge list or SVG heatmap.
// ---------------------------------------------------------------------------

enum class ExportFormat { svg_heatmap, edge_csv };

struct Edge {
  int i, j;  // 1-based ROI labels, i < j
  double r;
};

inline std::vector<Edge> threshold_edges(const Connectome& c, double threshold) {
  std::vector<Edge> edges;
  for (int i = 0; i < c.r_count; ++i)
    for (int j = i + 1; j < c.r_count; ++j)
      if (std::fabs(c.at(i, j)) >= threshold) edges.push_back({i + 1, j + 1, c.at(i, j)});
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (std::fabs(a.r) != std::fabs(b.r)) return std::fabs(a.r) > std::fabs(b.r);
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  return edges;
}

namespace detail {

/// Diverging blue-white-red over [-1, 1].
inline std::string diverging_color(double r) {
  r = std::clamp(r, -1.0, 1.0);
  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  double rr, gg, bb;
  if (r < 0) {
    double t = r + 1.0;  // [-1,0] -> [0,1]
    rr = lerp(33, 247, t);
    gg = lerp(102, 247, t);
    bb = lerp(172, 247, t);
  } else {
    rr = lerp(247, 178, r);
    gg = lerp(247, 24, r);
    bb = lerp(247, 43, r);
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(rr), static_cast<int>(gg), static_cast<int>(bb));
  return buf;
}

}  // namespace detail

inline void export_connectivity(const Connectome& c, double threshold, const std::filesystem::path& out,
                                ExportFormat format) {
  require(threshold >= 0.0 && threshold <= 1.0, errc::range_error, "threshold must be in [0,1]");
  std::ofstream f(out, std::ios::trunc);
  if (!f) fail(errc::io_error, "cannot open " + out.string());

  if (format == ExportFormat::edge_csv) {
    f << "roi_i,roi_j,name_i,name_j,r\n";
    char buf[32];
    for (const Edge& e : threshold_edges(c, threshold)) {
      std::snprintf(buf, sizeof buf, "%.6f", e.r);
      f << e.i << "," << e.j << "," << c.roi_names[static_cast<size_t>(e.i) - 1] << ","
        << c.roi_names[static_cast<size_t>(e.j) - 1] << "," << buf << "\n";
    }
  } else {
    const int cell = 8, pad = 10, legend_h = 30;
    const int w = pad * 2 + cell * c.r_count;
    const int h = pad * 2 + cell * c.r_count + legend_h;
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    for (int i = 0; i < c.r_count; ++i)
      for (int j = 0; j < c.r_count; ++j)
        f << "<rect class=\"cell\" x=\"" << pad + j * cell << "\" y=\"" << pad + i * cell << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"" << detail::diverging_color(c.at(i, j)) << "\"><title>"
          << c.roi_names[static_cast<size_t>(i)] << " / " << c.roi_names[static_cast<size_t>(j)] << "</title></rect>\n";
    // legend: gradient bar with min/mid/max ticks
    const int ly = pad + cell * c.r_count + 8;
    const int lw = cell * c.r_count;
    for (int s = 0; s < 64; ++s) {
      double r = -1.0 + 2.0 * (s + 0.5) / 64.0;
      f << "<rect class=\"legend\" x=\"" << pad + s * lw / 64 << "\" y=\"" << ly << "\" width=\""
        << (lw + 63) / 64 << "\" height=\"8\" fill=\"" << detail::diverging_color(r) << "\"/>\n";
    }
    f << "<text x=\"" << pad << "\" y=\"" << ly + 18 << "\" font-size=\"8\">-1</text>\n";
    f << "<text x=\"" << pad + lw / 2 - 2 << "\" y=\"" << ly + 18 << "\" font-size=\"8\">0</text>\n";
    f << "<text x=\"" << pad + lw - 6 << "\" y=\"" << ly + 18 << "\" font-size=\"8\">1</text>\n";
    f << "</svg>\n";
  }
  if (!f) fail(errc::io_error, "short write: " + out.string());
}

}  // namespace cscope
