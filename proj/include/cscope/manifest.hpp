#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cscope/error.hpp"
#include "cscope/rng.hpp"

namespace cscope {

enum class Site { ucla, cobre, synth };

inline const char* site_name(Site s) {
  switch (s) {
    case Site::ucla: return "UCLA";
    case Site::cobre: return "COBRE";
    case Site::synth: return "SYNTH";
  }
  return "?";
}

inline Site parse_site(const std::string& s) {
  if (s == "UCLA") return Site::ucla;
  if (s == "COBRE") return Site::cobre;
  if (s == "SYNTH") return Site::synth;
  fail(errc::bad_field, "unknown site '" + s + "' (expected UCLA, COBRE or SYNTH)");
}

struct SubjectRow {
  std::string subject_id;
  Site site = Site::synth;
  std::filesystem::path path;
  int label = 0;  // 0 control, 1 schizophrenia
  double age = 0;
  char sex = 'M';
  std::string subtype;  // optional strict/affective annotation; classifiers ignore it
};

struct CohortCounts {
  int64_t total = 0, controls = 0, patients = 0;
  std::map<std::string, int64_t> per_site;
};

struct CohortManifest {
  std::vector<SubjectRow> rows;

  int64_t size() const { return static_cast<int64_t>(rows.size()); }

  CohortCounts counts() const {
    CohortCounts c;
    c.total = size();
    for (const auto& r : rows) {
      (r.label == 1 ? c.patients : c.controls)++;
      c.per_site[site_name(r.site)]++;
    }
    return c;
  }

  std::vector<int> labels() const {
    std::vector<int> y;
    y.reserve(rows.size());
    for (const auto& r : rows) y.push_back(r.label);
    return y;
  }
};

inline const char* kManifestHeader = "subject_id,site,path,label,age,sex";

/// Load a manifest CSV. Relative file paths resolve against the manifest's
/// directory and are stored absolute. An optional trailing `subtype` column
/// is carried through untouched. Set check_files=false to skip the existence
/// check (synthetic bookkeeping tests).
inline CohortManifest load_manifest(const std::filesystem::path& csv, bool check_files = true) {
  std::ifstream f(csv);
  if (!f) fail(errc::io_error, "cannot open " + csv.string());
  const auto base = std::filesystem::absolute(csv).parent_path();

  std::string line;
  if (!std::getline(f, line)) fail(errc::bad_field, "empty manifest");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  const bool with_subtype = line == std::string(kManifestHeader) + ",subtype";
  if (!with_subtype && line != kManifestHeader)
    fail(errc::bad_field, "manifest header must be exactly '" + std::string(kManifestHeader) + "' (optionally followed by ',subtype')");
  const size_t columns = with_subtype ? 7 : 6;

  CohortManifest m;
  std::set<std::string> seen;
  size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (with_subtype && cells.size() == columns - 1) cells.push_back("");  // empty trailing subtype
    if (cells.size() != columns)
      fail(errc::bad_field, "line " + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                                " columns, got " + std::to_string(cells.size()));

    SubjectRow r;
    r.subject_id = cells[0];
    if (!seen.insert(r.subject_id).second)
      fail(errc::duplicate_id, "duplicate subject_id '" + r.subject_id + "' at line " + std::to_string(line_no));
    r.site = parse_site(cells[1]);
    std::filesystem::path p = cells[2];
    r.path = p.is_absolute() ? p : base / p;
    if (check_files && !std::filesystem::exists(r.path))
      fail(errc::missing_file, "line " + std::to_string(line_no) + ": no such file " + r.path.string());
    if (cells[3] == "0")
      r.label = 0;
    else if (cells[3] == "1")
      r.label = 1;
    else
      fail(errc::bad_label, "line " + std::to_string(line_no) + ": label must be 0 or 1, got '" + cells[3] + "'");
    try {
      r.age = std::stod(cells[4]);
    } catch (...) {
      fail(errc::bad_field, "line " + std::to_string(line_no) + ": bad age '" + cells[4] + "'");
    }
    if (cells[5] != "M" && cells[5] != "F")
      fail(errc::bad_field, "line " + std::to_string(line_no) + ": sex must be M or F");
    r.sex = cells[5][0];
    if (with_subtype) r.subtype = cells[6];
    m.rows.push_back(std::move(r));
  }
  return m;
}

inline void save_manifest(const CohortManifest& m, const std::filesystem::path& csv) {
  std::ofstream f(csv, std::ios::trunc);
  if (!f) fail(errc::io_error, "cannot open " + csv.string());
  bool with_subtype = false;
  for (const auto& r : m.rows) with_subtype = with_subtype || !r.subtype.empty();
  f << kManifestHeader << (with_subtype ? ",subtype" : "") << "\n";
  for (const auto& r : m.rows) {
    f << r.subject_id << "," << site_name(r.site) << "," << std::filesystem::absolute(r.path).string() << ","
      << r.label << "," << r.age << "," << r.sex;
    if (with_subtype) f << "," << r.subtype;
    f << "\n";
  }
  if (!f) fail(errc::io_error, "short write: " + csv.string());
}

struct SplitSpec {
  enum class Stratify { label, site_label };
  double train_fraction = 0.8;
  Stratify stratify_by = Stratify::label;
  uint64_t seed = 0;
};

/// Deterministic stratified split: per-stratum shuffle, largest-remainder
/// apportionment toward floor(fraction * N) training rows (never less than
/// one row per side overall), and a clamp that keeps both sides of any
/// stratum with >= 2 members nonempty.
inline std::pair<CohortManifest, CohortManifest> stratified_split(const CohortManifest& m, const SplitSpec& spec) {
  require(spec.train_fraction > 0.0 && spec.train_fraction < 1.0, errc::range_error,
          "train fraction must be in (0,1)");
  if (m.size() < 2) fail(errc::stratum_too_small, "need at least 2 rows to split");

  std::map<std::string, std::vector<int>> strata;  // ordered by key
  for (size_t i = 0; i < m.rows.size(); ++i) {
    const auto& r = m.rows[i];
    std::string key = spec.stratify_by == SplitSpec::Stratify::label
                          ? "label=" + std::to_string(r.label)
                          : std::string(site_name(r.site)) + "/label=" + std::to_string(r.label);
    strata[key].push_back(static_cast<int>(i));
  }

  auto target = static_cast<int64_t>(std::floor(spec.train_fraction * static_cast<double>(m.size())));
  target = std::clamp<int64_t>(target, 1, m.size() - 1);
  struct StratumPlan {
    std::vector<int> members;
    int64_t take = 0;
    double remainder = 0;
    size_t order = 0;
  };
  std::vector<StratumPlan> plans;
  int64_t base_total = 0;
  for (auto& [key, members] : strata) {
    StratumPlan p;
    p.members = members;
    const double exact = spec.train_fraction * static_cast<double>(members.size());
    p.take = static_cast<int64_t>(std::floor(exact));
    p.remainder = exact - std::floor(exact);
    p.order = plans.size();
    base_total += p.take;
    plans.push_back(std::move(p));
  }
  // hand out the leftover seats by descending remainder, stratum order on ties
  std::vector<size_t> by_remainder(plans.size());
  for (size_t i = 0; i < plans.size(); ++i) by_remainder[i] = i;
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](size_t a, size_t b) { return plans[a].remainder > plans[b].remainder; });
  for (int64_t extra = target - base_total; extra > 0; --extra) {
    bool placed = false;
    for (size_t i : by_remainder) {
      if (plans[i].take < static_cast<int64_t>(plans[i].members.size())) {
        plans[i].take += 1;
        placed = true;
        break;
      }
    }
    if (!placed) break;
  }
  // both sides of a stratum stay nonempty when counts permit
  for (auto& p : plans) {
    const auto n = static_cast<int64_t>(p.members.size());
    if (n >= 2) p.take = std::clamp<int64_t>(p.take, 1, n - 1);
  }

  CohortManifest train, test;
  for (auto& p : plans) {
    Rng rng = Rng::derive(spec.seed, p.order);
    rng.shuffle(p.members);
    for (size_t i = 0; i < p.members.size(); ++i)
      (static_cast<int64_t>(i) < p.take ? train : test).rows.push_back(m.rows[static_cast<size_t>(p.members[i])]);
  }
  if (train.rows.empty() || test.rows.empty())
    fail(errc::stratum_too_small, "split leaves an empty side; adjust the fraction or cohort");
  return {train, test};
}

}  // namespace cscope
