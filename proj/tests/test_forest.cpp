#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cscope/forest.hpp"
#include "cscope/metrics.hpp"
#include "test_util.hpp"

using namespace cscope;

namespace {

struct Synth {
  std::vector<double> X;
  std::vector<int> y;
  int64_t n = 0, f = 0;
};

// Two shifted Gaussian clouds; separability controlled by the offset.
Synth make_clouds(int per_class, int features, double offset, uint64_t seed) {
  Synth s;
  s.n = 2 * per_class;
  s.f = features;
  Rng rng(seed);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < per_class; ++i) {
      for (int j = 0; j < features; ++j) s.X.push_back(rng.normal(c * offset, 1.0));
      s.y.push_back(c);
    }
  return s;
}

}  // namespace

TEST_CASE("entropy_bits") {
  CHECK(entropy_bits({5, 5}) == 1.0);
  CHECK(entropy_bits({10, 0}) == 0.0);
  // direct formula for [9,3]
  const double p1 = 9.0 / 12.0, p2 = 3.0 / 12.0;
  CHECK(entropy_bits({9, 3}) == Catch::Approx(-p1 * std::log2(p1) - p2 * std::log2(p2)).margin(1e-15));
  CHECK(entropy_bits({9, 3}) == Catch::Approx(0.8113).margin(1e-4));
  try {
    entropy_bits({0, 0});
    FAIL("expected AllZero");
  } catch (const error& e) {
    CHECK(e.code() == errc::all_zero);
  }
}

TEST_CASE("best_split") {
  SECTION("1D feature [1,2,3,4], labels [0,0,1,1] splits at 2.5 with gain 1") {
    std::vector<double> X{1, 2, 3, 4};
    std::vector<int> y{0, 0, 1, 1};
    Split s = best_split(X, 1, y, {0, 1, 2, 3}, {0});
    CHECK(s.feature == 0);
    CHECK(s.threshold == 2.5);
    CHECK(s.gain == 1.0);
  }
  SECTION("constant feature yields NoSplit") {
    std::vector<double> X{7, 7, 7, 7};
    std::vector<int> y{0, 1, 0, 1};
    try {
      best_split(X, 1, y, {0, 1, 2, 3}, {0});
      FAIL("expected NoSplit");
    } catch (const error& e) {
      CHECK(e.code() == errc::no_split);
    }
  }
  SECTION("two equally good features: lower index wins") {
    // feature 0 and feature 1 are identical perfect splitters
    std::vector<double> X{1, 1, 2, 2, 3, 3, 4, 4};  // rows: (1,1),(2,2),(3,3),(4,4)
    std::vector<int> y{0, 0, 1, 1};
    Split s = best_split(X, 2, y, {0, 1, 2, 3}, {0, 1});
    CHECK(s.feature == 0);
    CHECK(s.threshold == 2.5);
  }
  SECTION("pure node yields NoSplit") {
    std::vector<double> X{1, 2, 3};
    std::vector<int> y{1, 1, 1};
    try {
      best_split(X, 1, y, {0, 1, 2}, {0});
      FAIL("expected NoSplit");
    } catch (const error& e) {
      CHECK(e.code() == errc::no_split);
    }
  }
}

TEST_CASE("fit_forest") {
  SECTION("trivially separable data trains to accuracy 1.0") {
    Synth s = make_clouds(12, 2, 8.0, 1);
    ForestConfig cfg;
    cfg.n_trees = 25;
    cfg.seed = 3;
    Forest forest = fit_forest(s.X, s.n, s.f, s.y, cfg);
    auto pred = predict(forest, s.X, s.n, s.f);
    MetricsReport m = compute_metrics(pred, s.y);
    CHECK(m.accuracy.value() == 1.0);
  }
  SECTION("deterministic for a fixed seed") {
    Synth s = make_clouds(10, 4, 1.0, 2);
    ForestConfig cfg;
    cfg.n_trees = 15;
    cfg.seed = 9;
    Forest a = fit_forest(s.X, s.n, s.f, s.y, cfg);
    Forest b = fit_forest(s.X, s.n, s.f, s.y, cfg);
    Synth probe = make_clouds(10, 4, 1.0, 77);
    CHECK(predict_proba(a, probe.X, probe.n, probe.f) == predict_proba(b, probe.X, probe.n, probe.f));
  }
  SECTION("concurrent training matches sequential exactly") {
    Synth s = make_clouds(12, 5, 1.0, 8);
    ForestConfig cfg;
    cfg.n_trees = 24;
    cfg.seed = 14;
    Forest seq = fit_forest(s.X, s.n, s.f, s.y, cfg, 1);
    Forest par = fit_forest(s.X, s.n, s.f, s.y, cfg, 4);
    REQUIRE(seq.trees.size() == par.trees.size());
    Synth probe = make_clouds(12, 5, 1.0, 99);
    CHECK(predict_proba(seq, probe.X, probe.n, probe.f) == predict_proba(par, probe.X, probe.n, probe.f));
  }
  SECTION("config echo carries the defaults") {
    Synth s = make_clouds(4, 3, 5.0, 3);
    ForestConfig cfg;
    Forest forest = fit_forest(s.X, s.n, s.f, s.y, cfg);
    CHECK(forest.cfg.n_trees == 500);
    CHECK(forest.cfg.max_depth == 6);
    CHECK(forest.cfg.max_features == 96);
    CHECK(forest.cfg.bootstrap);
  }
  SECTION("single-class training set is rejected") {
    std::vector<double> X{1, 2, 3, 4};
    std::vector<int> y{1, 1, 1, 1};
    try {
      fit_forest(X, 4, 1, y, ForestConfig{});
      FAIL("expected SingleClass");
    } catch (const error& e) {
      CHECK(e.code() == errc::single_class);
    }
  }
  SECTION("depth never exceeds the cap") {
    Synth s = make_clouds(40, 3, 0.5, 4);  // noisy: forces deep growth attempts
    ForestConfig cfg;
    cfg.n_trees = 10;
    cfg.max_depth = 6;
    cfg.seed = 5;
    Forest forest = fit_forest(s.X, s.n, s.f, s.y, cfg);
    for (const auto& tree : forest.trees) {
      // walk depths iteratively
      std::vector<std::pair<int32_t, int>> stack{{0, 0}};
      while (!stack.empty()) {
        auto [idx, depth] = stack.back();
        stack.pop_back();
        CHECK(depth <= 6);
        const TreeNode& nd = tree.nodes[static_cast<size_t>(idx)];
        if (nd.feature >= 0) {
          stack.push_back({nd.left, depth + 1});
          stack.push_back({nd.right, depth + 1});
        }
      }
    }
  }
  SECTION("forest beats or matches a single tree on most datasets") {
    int forest_wins = 0;
    const int trials = 20;
    for (int trial = 0; trial < trials; ++trial) {
      Synth s = make_clouds(15, 5, 1.2, 100 + static_cast<uint64_t>(trial));
      ForestConfig cfg;
      cfg.n_trees = 30;
      cfg.seed = 100 + static_cast<uint64_t>(trial);
      Forest forest = fit_forest(s.X, s.n, s.f, s.y, cfg);
      Rng tree_rng(cfg.seed);
      DecisionTree tree = fit_tree(s.X, s.n, s.f, s.y, cfg, tree_rng);
      int fa = 0, ta = 0;
      auto fp = predict(forest, s.X, s.n, s.f);
      for (int64_t i = 0; i < s.n; ++i) {
        fa += fp[static_cast<size_t>(i)] == s.y[static_cast<size_t>(i)];
        ta += tree.predict(s.X.data() + i * s.f) == s.y[static_cast<size_t>(i)];
      }
      if (fa >= ta) ++forest_wins;
    }
    CHECK(forest_wins >= 18);  // >= 90% of datasets
  }
}

TEST_CASE("predict_proba") {
  Synth s = make_clouds(10, 2, 9.0, 6);
  SECTION("unanimous forests give probability 1") {
    ForestConfig cfg;
    cfg.n_trees = 20;
    cfg.seed = 11;
    Forest forest = fit_forest(s.X, s.n, s.f, s.y, cfg);
    auto proba = predict_proba(forest, s.X, s.n, s.f);
    // class-1 rows sit 9 sigma away: every tree votes positive there
    for (int64_t i = s.n / 2; i < s.n; ++i) CHECK(proba[static_cast<size_t>(i)] == 1.0);
  }
  SECTION("probability 0.5 classifies positive") {
    std::vector<double> proba_like{0.5};
    CHECK((proba_like[0] >= 0.5 ? 1 : 0) == 1);
    // and through the API: a 2-tree forest with disagreeing trees
    Forest forest;
    forest.cfg.n_trees = 2;
    TreeNode leaf0;
    leaf0.label = 0;
    TreeNode leaf1;
    leaf1.label = 1;
    forest.trees.push_back(DecisionTree{{leaf0}});
    forest.trees.push_back(DecisionTree{{leaf1}});
    std::vector<double> X{0.0};
    CHECK(predict_proba(forest, X, 1, 1)[0] == 0.5);
    CHECK(predict(forest, X, 1, 1)[0] == 1);
  }
  SECTION("single-tree forest equals direct tree traversal") {
    std::vector<double> X{1, 2, 10, 11};
    std::vector<int> y{0, 0, 1, 1};
    ForestConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    cfg.seed = 4;
    Forest forest = fit_forest(X, 4, 1, y, cfg);
    Rng rng(cfg.seed + 0);
    DecisionTree tree = fit_tree(X, 4, 1, y, cfg, rng);
    for (int64_t i = 0; i < 4; ++i)
      CHECK(predict_proba(forest, X, 4, 1)[static_cast<size_t>(i)] == static_cast<double>(tree.predict(X.data() + i)));
  }
}

TEST_CASE("forest persistence round trip") {
  testutil::TempDir td;
  Synth s = make_clouds(8, 3, 2.0, 7);
  ForestConfig cfg;
  cfg.n_trees = 12;
  cfg.seed = 13;
  Forest forest = fit_forest(s.X, s.n, s.f, s.y, cfg);
  auto p = td.file("forest.bin");
  save_forest(forest, p);
  Forest loaded = load_forest(p);
  CHECK(loaded.cfg.n_trees == cfg.n_trees);
  CHECK(loaded.cfg.seed == cfg.seed);
  CHECK(predict_proba(loaded, s.X, s.n, s.f) == predict_proba(forest, s.X, s.n, s.f));
}

TEST_CASE("compute_metrics") {
  SECTION("perfect predictions") {
    MetricsReport m = compute_metrics({1, 0, 1}, {1, 0, 1});
    CHECK(m.accuracy.value() == 1.0);
    CHECK(m.sensitivity.value() == 1.0);
    CHECK(m.specificity.value() == 1.0);
  }
  SECTION("hand fixture TP=10 FN=2 TN=5 FP=3") {
    std::vector<int> labels, preds;
    auto push = [&](int n, int label, int pred) {
      for (int i = 0; i < n; ++i) {
        labels.push_back(label);
        preds.push_back(pred);
      }
    };
    push(10, 1, 1);
    push(2, 1, 0);
    push(5, 0, 0);
    push(3, 0, 1);
    MetricsReport m = compute_metrics(preds, labels);
    CHECK(m.tp == 10);
    CHECK(m.fn == 2);
    CHECK(m.tn == 5);
    CHECK(m.fp == 3);
    CHECK(m.accuracy.value() == Catch::Approx(0.75).margin(1e-15));
    CHECK(m.sensitivity.value() == Catch::Approx(10.0 / 12.0).margin(1e-15));
    CHECK(m.specificity.value() == Catch::Approx(0.625).margin(1e-15));
  }
  SECTION("permutation invariance") {
    std::vector<int> preds{1, 0, 1, 1, 0, 0, 1};
    std::vector<int> labels{1, 1, 0, 1, 0, 1, 0};
    MetricsReport a = compute_metrics(preds, labels);
    // rotate the pairs
    std::vector<int> p2(preds.begin() + 3, preds.end());
    p2.insert(p2.end(), preds.begin(), preds.begin() + 3);
    std::vector<int> l2(labels.begin() + 3, labels.end());
    l2.insert(l2.end(), labels.begin(), labels.begin() + 3);
    MetricsReport b = compute_metrics(p2, l2);
    CHECK(a.tp == b.tp);
    CHECK(a.fp == b.fp);
    CHECK(a.tn == b.tn);
    CHECK(a.fn == b.fn);
  }
  SECTION("length mismatch is typed") {
    try {
      compute_metrics({1, 0}, {1});
      FAIL("expected LengthMismatch");
    } catch (const error& e) {
      CHECK(e.code() == errc::length_mismatch);
    }
  }
  SECTION("zero denominators leave ratios absent") {
    MetricsReport m = compute_metrics({1, 1}, {1, 1});  // no negatives at all
    CHECK(m.sensitivity.has_value());
    CHECK_FALSE(m.specificity.has_value());
    std::string line = render_metrics(m);
    CHECK(line.find("specificity") == std::string::npos);
    CHECK(line.find("sensitivity=1.000") != std::string::npos);
  }
}

TEST_CASE("render_metrics reproduces the reporting row format") {
  MetricsReport r = MetricsReport::from_rates(0.77, 0.91, 0.54, 10, 5, 6, 1);
  std::string line = render_metrics(r);
  CHECK(line == "accuracy=0.770 sensitivity=0.910 specificity=0.540 tp=10 fp=5 tn=6 fn=1");
}

TEST_CASE("fixture confusion matrix TP=10 FN=1 TN=6 FP=5") {
  MetricsReport m = MetricsReport::from_counts(10, 5, 6, 1);
  CHECK(m.sensitivity.value() == Catch::Approx(10.0 / 11.0).margin(1e-12));
  CHECK(m.specificity.value() == Catch::Approx(6.0 / 11.0).margin(1e-12));
  CHECK(m.accuracy.value() == Catch::Approx(16.0 / 22.0).margin(1e-12));
  // the triple rounds to the familiar (0.909, 0.545, 0.727)
  CHECK(m.sensitivity.value() == Catch::Approx(0.909).margin(5e-4));
  CHECK(m.specificity.value() == Catch::Approx(0.545).margin(5e-4));
  CHECK(m.accuracy.value() == Catch::Approx(0.727).margin(5e-4));
}
