#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <vector>

#include "cscope/binio.hpp"
#include "cscope/error.hpp"
#include "cscope/parallel.hpp"
#include "cscope/rng.hpp"

namespace cscope {

struct ForestConfig {
  int n_trees = 500;
  int max_depth = 6;
  int max_features = 96;  // candidate features per node, capped at F
  bool bootstrap = true;
  uint64_t seed = 0;

  void validate(int64_t n_features) const {
    require(n_trees >= 1, errc::range_error, "need at least one tree");
    require(max_depth >= 1, errc::range_error, "max_depth must be >= 1");
    require(max_features >= 1 && n_features >= 1, errc::range_error, "max_features must be >= 1");
  }
};

/// Shannon entropy in bits of a count vector, with 0*log0 = 0.
inline double entropy_bits(const std::vector<int64_t>& counts) {
  int64_t total = 0;
  for (int64_t c : counts) {
    require(c >= 0, errc::range_error, "counts must be nonnegative");
    total += c;
  }
  if (total == 0) fail(errc::all_zero, "entropy of an empty node");
  double h = 0;
  for (int64_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

/// Exhaustive scan over midpoints of sorted distinct values for every
/// candidate feature, maximizing information gain. Ties break toward the
/// lowest feature index, then the lowest threshold. Samples with
/// value <= threshold go left. Throws NoSplit when no gain is positive.
inline Split best_split(const std::vector<double>& X, int64_t n_features, const std::vector<int>& y,
                        const std::vector<int>& node_samples, const std::vector<int>& candidate_features) {
  const auto n = static_cast<int64_t>(node_samples.size());
  if (n < 2) fail(errc::no_split, "node has fewer than 2 samples");

  int64_t pos = 0;
  for (int s : node_samples) pos += y[static_cast<size_t>(s)];
  const double parent_h = entropy_bits({n - pos, pos});
  if (parent_h == 0.0) fail(errc::no_split, "node is pure");

  Split best;
  std::vector<std::pair<double, int>> vals(static_cast<size_t>(n));  // (value, label)
  for (int fi : candidate_features) {
    for (size_t i = 0; i < vals.size(); ++i) {
      const int s = node_samples[i];
      vals[i] = {X[static_cast<size_t>(s) * static_cast<size_t>(n_features) + static_cast<size_t>(fi)], y[static_cast<size_t>(s)]};
    }
    std::sort(vals.begin(), vals.end());
    int64_t left_n = 0, left_pos = 0;
    for (int64_t i = 0; i + 1 < n; ++i) {
      left_n += 1;
      left_pos += vals[static_cast<size_t>(i)].second;
      if (vals[static_cast<size_t>(i)].first == vals[static_cast<size_t>(i + 1)].first) continue;  // not a boundary
      const double threshold = vals[static_cast<size_t>(i)].first + 0.5 * (vals[static_cast<size_t>(i + 1)].first - vals[static_cast<size_t>(i)].first);
      const int64_t right_n = n - left_n;
      const int64_t right_pos = pos - left_pos;
      const double hl = entropy_bits({left_n - left_pos, left_pos});
      const double hr = entropy_bits({right_n - right_pos, right_pos});
      const double gain = parent_h - (static_cast<double>(left_n) / n * hl + static_cast<double>(right_n) / n * hr);
      if (gain > best.gain) {  // strict: keeps lowest feature, lowest threshold
        best.feature = fi;
        best.threshold = threshold;
        best.gain = gain;
      }
    }
  }
  if (best.feature < 0) fail(errc::no_split, "no positive-gain split");
  return best;
}

struct TreeNode {
  int32_t feature = -1;     // -1 for leaves
  double threshold = 0.0;
  int32_t left = -1, right = -1;
  uint8_t label = 0;        // leaf majority, ties positive
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  int predict(const double* row) const {
    int32_t i = 0;
    while (nodes[static_cast<size_t>(i)].feature >= 0) {
      const TreeNode& nd = nodes[static_cast<size_t>(i)];
      i = row[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<size_t>(i)].label;
  }
};

namespace detail_forest {

inline int32_t grow(DecisionTree& tree, const std::vector<double>& X, int64_t n_features, const std::vector<int>& y,
                    std::vector<int>& samples, int depth, const ForestConfig& cfg, Rng& rng) {
  int64_t pos = 0;
  for (int s : samples) pos += y[static_cast<size_t>(s)];
  const auto n = static_cast<int64_t>(samples.size());

  auto make_leaf = [&]() {
    TreeNode leaf;
    leaf.label = pos * 2 >= n ? 1 : 0;  // ties positive
    tree.nodes.push_back(leaf);
    return static_cast<int32_t>(tree.nodes.size() - 1);
  };

  if (depth >= cfg.max_depth || n < 2 || pos == 0 || pos == n) return make_leaf();

  const int k = static_cast<int>(std::min<int64_t>(cfg.max_features, n_features));
  const std::vector<int> candidates = rng.sample_indices(static_cast<int>(n_features), k);

  Split split;
  try {
    split = best_split(X, n_features, y, samples, candidates);
  } catch (const error& e) {
    if (e.code() == errc::no_split) return make_leaf();
    throw;
  }

  std::vector<int> left, right;
  for (int s : samples)
    (X[static_cast<size_t>(s) * static_cast<size_t>(n_features) + static_cast<size_t>(split.feature)] <= split.threshold
         ? left
         : right)
        .push_back(s);

  const auto idx = static_cast<int32_t>(tree.nodes.size());
  tree.nodes.emplace_back();
  tree.nodes[static_cast<size_t>(idx)].feature = split.feature;
  tree.nodes[static_cast<size_t>(idx)].threshold = split.threshold;
  const int32_t l = grow(tree, X, n_features, y, left, depth + 1, cfg, rng);
  const int32_t r = grow(tree, X, n_features, y, right, depth + 1, cfg, rng);
  tree.nodes[static_cast<size_t>(idx)].left = l;
  tree.nodes[static_cast<size_t>(idx)].right = r;
  return idx;
}

}  // namespace detail_forest

struct Forest {
  ForestConfig cfg;
  std::vector<DecisionTree> trees;
};

/// Train one tree on the given sample indices (no bootstrap).
inline DecisionTree fit_tree(const std::vector<double>& X, int64_t n_samples, int64_t n_features,
                             const std::vector<int>& y, const ForestConfig& cfg, Rng& rng) {
  std::vector<int> samples(static_cast<size_t>(n_samples));
  for (int64_t i = 0; i < n_samples; ++i) samples[static_cast<size_t>(i)] = static_cast<int>(i);
  DecisionTree tree;
  detail_forest::grow(tree, X, n_features, y, samples, 0, cfg, rng);
  return tree;
}

/// Bootstrap-resampled forest. Tree t draws its own stream from seed + t and
/// writes only its own slot, so concurrent and sequential training produce
/// identical forests.
inline Forest fit_forest(const std::vector<double>& X, int64_t n_samples, int64_t n_features,
                         const std::vector<int>& y, const ForestConfig& cfg, int threads = 1) {
  cfg.validate(n_features);
  require(n_samples >= 2, errc::input_too_small, "need at least 2 samples");
  require(static_cast<size_t>(n_samples) == y.size(), errc::length_mismatch, "labels do not match samples");
  int64_t pos = 0;
  for (int label : y) {
    require(label == 0 || label == 1, errc::bad_label, "labels must be 0/1");
    pos += label;
  }
  if (pos == 0 || pos == n_samples) fail(errc::single_class, "training set holds a single class");

  Forest forest;
  forest.cfg = cfg;
  forest.trees.resize(static_cast<size_t>(cfg.n_trees));
  parallel_for(cfg.n_trees, threads, [&](int64_t t) {
    Rng rng(cfg.seed + static_cast<uint64_t>(t));
    std::vector<int> samples(static_cast<size_t>(n_samples));
    if (cfg.bootstrap) {
      for (auto& s : samples) s = static_cast<int>(rng.index(static_cast<size_t>(n_samples)));
    } else {
      for (int64_t i = 0; i < n_samples; ++i) samples[static_cast<size_t>(i)] = static_cast<int>(i);
    }
    DecisionTree tree;
    detail_forest::grow(tree, X, n_features, y, samples, 0, cfg, rng);
    forest.trees[static_cast<size_t>(t)] = std::move(tree);
  });
  return forest;
}

/// Positive-vote fraction per sample.
inline std::vector<double> predict_proba(const Forest& forest, const std::vector<double>& X, int64_t n_samples,
                                         int64_t n_features) {
  std::vector<double> proba(static_cast<size_t>(n_samples), 0.0);
  for (int64_t i = 0; i < n_samples; ++i) {
    const double* row = X.data() + i * n_features;
    int votes = 0;
    for (const auto& tree : forest.trees) votes += tree.predict(row);
    proba[static_cast<size_t>(i)] = static_cast<double>(votes) / static_cast<double>(forest.trees.size());
  }
  return proba;
}

/// Threshold 0.5, ties positive.
inline std::vector<int> predict(const Forest& forest, const std::vector<double>& X, int64_t n_samples,
                                int64_t n_features) {
  std::vector<int> out(static_cast<size_t>(n_samples));
  const auto proba = predict_proba(forest, X, n_samples, n_features);
  for (size_t i = 0; i < out.size(); ++i) out[i] = proba[i] >= 0.5 ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: magic "CFOR1", config, then per-tree node arrays.
// ---------------------------------------------------------------------------

inline void save_forest(const Forest& forest, const std::filesystem::path& path) {
  std::vector<unsigned char> out{'C', 'F', 'O', 'R', '1'};
  binio::put_le<int32_t>(out, forest.cfg.n_trees);
  binio::put_le<int32_t>(out, forest.cfg.max_depth);
  binio::put_le<int32_t>(out, forest.cfg.max_features);
  binio::put_le<uint8_t>(out, forest.cfg.bootstrap ? 1 : 0);
  binio::put_le<uint64_t>(out, forest.cfg.seed);
  binio::put_le<uint32_t>(out, static_cast<uint32_t>(forest.trees.size()));
  for (const auto& tree : forest.trees) {
    binio::put_le<uint32_t>(out, static_cast<uint32_t>(tree.nodes.size()));
    for (const auto& nd : tree.nodes) {
      binio::put_le<int32_t>(out, nd.feature);
      binio::put_le<double>(out, nd.threshold);
      binio::put_le<int32_t>(out, nd.left);
      binio::put_le<int32_t>(out, nd.right);
      binio::put_le<uint8_t>(out, nd.label);
    }
  }
  binio::write_file(path, out);
}

inline Forest load_forest(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  if (bytes.size() < 5 || std::memcmp(bytes.data(), "CFOR1", 5) != 0)
    fail(errc::bad_magic, "not a CFOR1 forest file: " + path.string());
  binio::Reader r{bytes, 5};
  Forest forest;
  forest.cfg.n_trees = r.get<int32_t>();
  forest.cfg.max_depth = r.get<int32_t>();
  forest.cfg.max_features = r.get<int32_t>();
  forest.cfg.bootstrap = r.get<uint8_t>() != 0;
  forest.cfg.seed = r.get<uint64_t>();
  const auto count = r.get<uint32_t>();
  forest.trees.resize(count);
  for (auto& tree : forest.trees) {
    const auto n = r.get<uint32_t>();
    tree.nodes.resize(n);
    for (auto& nd : tree.nodes) {
      nd.feature = r.get<int32_t>();
      nd.threshold = r.get<double>();
      nd.left = r.get<int32_t>();
      nd.right = r.get<int32_t>();
      nd.label = r.get<uint8_t>();
    }
  }
  return forest;
}

}  // namespace cscope
