#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "cscope/error.hpp"

namespace cscope {

/// Confusion counts plus derived ratios. Ratios with a zero denominator are
/// absent rather than 0. Positive class = schizophrenia (label 1).
struct MetricsReport {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> accuracy, sensitivity, specificity;

  static MetricsReport from_counts(int64_t tp, int64_t fp, int64_t tn, int64_t fn) {
    MetricsReport r;
    r.tp = tp;
    r.fp = fp;
    r.tn = tn;
    r.fn = fn;
    if (tp + tn + fp + fn > 0) r.accuracy = static_cast<double>(tp + tn) / static_cast<double>(tp + tn + fp + fn);
    if (tp + fn > 0) r.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (tn + fp > 0) r.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
    return r;
  }

  /// Fixture constructor for report rendering: ratios given directly.
  static MetricsReport from_rates(double accuracy, double sensitivity, double specificity, int64_t tp = 0,
                                  int64_t fp = 0, int64_t tn = 0, int64_t fn = 0) {
    MetricsReport r;
    r.tp = tp;
    r.fp = fp;
    r.tn = tn;
    r.fn = fn;
    r.accuracy = accuracy;
    r.sensitivity = sensitivity;
    r.specificity = specificity;
    return r;
  }
};

inline MetricsReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    fail(errc::length_mismatch, "predictions and labels differ in length");
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) fail(errc::bad_label, "label must be 0 or 1");
    if (labels[i] == 1)
      predictions[i] == 1 ? ++tp : ++fn;
    else
      predictions[i] == 1 ? ++fp : ++tn;
  }
  return MetricsReport::from_counts(tp, fp, tn, fn);
}

/// Flat key-value rendering: `accuracy=0.770 sensitivity=0.910
/// specificity=0.540 tp=.. fp=.. tn=.. fn=..`; absent ratios are omitted.
inline std::string render_metrics(const MetricsReport& r) {
  char buf[48];
  std::string out;
  auto ratio = [&](const char* key, const std::optional<double>& v) {
    if (!v) return;
    std::snprintf(buf, sizeof buf, "%s%s=%.3f", out.empty() ? "" : " ", key, *v);
    out += buf;
  };
  ratio("accuracy", r.accuracy);
  ratio("sensitivity", r.sensitivity);
  ratio("specificity", r.specificity);
  std::snprintf(buf, sizeof buf, "%s tp=%lld fp=%lld tn=%lld fn=%lld", out.empty() ? "" : "",
                static_cast<long long>(r.tp), static_cast<long long>(r.fp), static_cast<long long>(r.tn),
                static_cast<long long>(r.fn));
  out += out.empty() ? buf + 1 : buf;
  return out;
}

/// Flat JSON object for the run directory.
inline void write_metrics_json(const MetricsReport& r, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(errc::io_error, "cannot open " + path.string());
  char buf[64];
  f << "{\n";
  auto num = [&](const char* key, const std::optional<double>& v, bool comma = true) {
    if (v) {
      std::snprintf(buf, sizeof buf, "  \"%s\": %.17g%s\n", key, *v, comma ? "," : "");
      f << buf;
    } else {
      f << "  \"" << key << "\": null" << (comma ? "," : "") << "\n";
    }
  };
  num("accuracy", r.accuracy);
  num("sensitivity", r.sensitivity);
  num("specificity", r.specificity);
  f << "  \"tp\": " << r.tp << ",\n  \"fp\": " << r.fp << ",\n  \"tn\": " << r.tn << ",\n  \"fn\": " << r.fn << "\n}\n";
  if (!f) fail(errc::io_error, "short write: " + path.string());
}

}  // namespace cscope
