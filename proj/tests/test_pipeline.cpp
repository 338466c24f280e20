#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <set>

#include "cscope/phantom.hpp"
#include "cscope/pipeline.hpp"
#include "test_util.hpp"

using namespace cscope;

namespace {

void touch(const std::filesystem::path& p) {
  std::ofstream f(p);
  f << "";
}

std::string manifest_line(const std::string& id, const std::string& site, const std::string& path, int label,
                          double age, char sex) {
  return id + "," + site + "," + path + "," + std::to_string(label) + "," + std::to_string(age) + "," + sex;
}

}  // namespace

TEST_CASE("load_manifest") {
  testutil::TempDir td;
  SECTION("well-formed 3-row manifest loads with counts") {
    for (const char* n : {"a.nii", "b.nii", "c.nii"}) touch(td.file(n));
    std::ofstream f(td.file("m.csv"));
    f << kManifestHeader << "\n";
    f << manifest_line("s1", "UCLA", "a.nii", 0, 30, 'M') << "\n";
    f << manifest_line("s2", "COBRE", "b.nii", 1, 40, 'F') << "\n";
    f << manifest_line("s3", "SYNTH", "c.nii", 1, 25, 'M') << "\n";
    f.close();
    CohortManifest m = load_manifest(td.file("m.csv"));
    REQUIRE(m.size() == 3);
    CohortCounts c = m.counts();
    CHECK(c.controls == 1);
    CHECK(c.patients == 2);
    CHECK(c.per_site["UCLA"] == 1);
    CHECK(m.rows[0].path.is_absolute());
  }
  SECTION("a manifest mirroring the two-site demographics table") {
    // UCLA: 122 controls + 50 patients; COBRE: 84 controls + 69 strict + 11
    // schizoaffective (collapsed to label 1) = 336 rows, 206 controls, 130 patients.
    std::ofstream f(td.file("full.csv"));
    f << kManifestHeader << "\n";
    int id = 0;
    auto rows = [&](int n, const char* site, int label) {
      for (int i = 0; i < n; ++i, ++id)
        f << manifest_line("sub" + std::to_string(id), site, "v" + std::to_string(id) + ".nii", label, 33, 'M')
          << "\n";
    };
    rows(122, "UCLA", 0);
    rows(50, "UCLA", 1);
    rows(84, "COBRE", 0);
    rows(69, "COBRE", 1);
    rows(11, "COBRE", 1);
    f.close();
    CohortManifest m = load_manifest(td.file("full.csv"), /*check_files=*/false);
    CohortCounts c = m.counts();
    CHECK(c.total == 336);
    CHECK(c.controls == 206);
    CHECK(c.patients == 130);
  }
  SECTION("optional subtype column survives a round trip and is ignored by splits") {
    touch(td.file("a.nii"));
    touch(td.file("b.nii"));
    std::ofstream f(td.file("sub.csv"));
    f << kManifestHeader << ",subtype\n";
    f << manifest_line("s1", "COBRE", "a.nii", 1, 40, 'F') << ",strict\n";
    f << manifest_line("s2", "COBRE", "b.nii", 1, 38, 'M') << ",affective\n";
    f.close();
    CohortManifest m = load_manifest(td.file("sub.csv"));
    REQUIRE(m.size() == 2);
    CHECK(m.rows[0].subtype == "strict");
    CHECK(m.rows[1].subtype == "affective");
    CHECK(m.rows[1].label == 1);
    save_manifest(m, td.file("sub2.csv"));
    CohortManifest r = load_manifest(td.file("sub2.csv"));
    CHECK(r.rows[0].subtype == "strict");
  }
  SECTION("duplicate subject ids are rejected") {
    touch(td.file("a.nii"));
    std::ofstream f(td.file("dup.csv"));
    f << kManifestHeader << "\n";
    f << manifest_line("s1", "UCLA", "a.nii", 0, 30, 'M') << "\n";
    f << manifest_line("s1", "UCLA", "a.nii", 1, 31, 'F') << "\n";
    f.close();
    try {
      load_manifest(td.file("dup.csv"));
      FAIL("expected DuplicateId");
    } catch (const error& e) {
      CHECK(e.code() == errc::duplicate_id);
    }
  }
  SECTION("missing files and bad labels are typed") {
    std::ofstream f(td.file("miss.csv"));
    f << kManifestHeader << "\n";
    f << manifest_line("s1", "UCLA", "nothere.nii", 0, 30, 'M') << "\n";
    f.close();
    try {
      load_manifest(td.file("miss.csv"));
      FAIL("expected MissingFile");
    } catch (const error& e) {
      CHECK(e.code() == errc::missing_file);
    }

    touch(td.file("x.nii"));
    std::ofstream g(td.file("bad.csv"));
    g << kManifestHeader << "\n";
    g << manifest_line("s1", "UCLA", "x.nii", 2, 30, 'M') << "\n";
    g.close();
    try {
      load_manifest(td.file("bad.csv"));
      FAIL("expected BadLabel");
    } catch (const error& e) {
      CHECK(e.code() == errc::bad_label);
    }
  }
}

TEST_CASE("stratified_split") {
  auto synth = [](int controls, int patients) {
    CohortManifest m;
    for (int i = 0; i < controls + patients; ++i) {
      SubjectRow r;
      r.subject_id = "s" + std::to_string(i);
      r.site = Site::synth;
      r.path = "unused";
      r.label = i < controls ? 0 : 1;
      m.rows.push_back(r);
    }
    return m;
  };

  SECTION("10 samples (5/5) at 0.8 give 8 train (4/4) and 2 test (1/1)") {
    SplitSpec s;
    s.train_fraction = 0.8;
    s.seed = 7;
    auto [train, test] = stratified_split(synth(5, 5), s);
    CHECK(train.size() == 8);
    CHECK(test.size() == 2);
    CHECK(train.counts().controls == 4);
    CHECK(train.counts().patients == 4);
    CHECK(test.counts().controls == 1);
    CHECK(test.counts().patients == 1);
  }
  SECTION("2 samples (1/1) at 0.5 put one on each side") {
    SplitSpec s;
    s.train_fraction = 0.5;
    auto [train, test] = stratified_split(synth(1, 1), s);
    CHECK(train.size() == 1);
    CHECK(test.size() == 1);
    CHECK(train.counts().controls + test.counts().controls == 1);
    CHECK(train.counts().patients + test.counts().patients == 1);
  }
  SECTION("same seed means identical membership; disjoint union equals input") {
    CohortManifest m = synth(13, 9);
    SplitSpec s;
    s.train_fraction = 0.75;
    s.seed = 42;
    auto [tr1, te1] = stratified_split(m, s);
    auto [tr2, te2] = stratified_split(m, s);
    auto ids = [](const CohortManifest& x) {
      std::set<std::string> out;
      for (const auto& r : x.rows) out.insert(r.subject_id);
      return out;
    };
    CHECK(ids(tr1) == ids(tr2));
    CHECK(ids(te1) == ids(te2));
    std::set<std::string> all = ids(tr1);
    for (const auto& id : ids(te1)) CHECK(all.insert(id).second);  // disjoint
    CHECK(all.size() == static_cast<size_t>(m.size()));            // union is everything
  }
  SECTION("both classes present on both sides when counts permit") {
    SplitSpec s;
    s.train_fraction = 0.9;
    s.seed = 3;
    auto [train, test] = stratified_split(synth(3, 17), s);
    CHECK(train.counts().controls >= 1);
    CHECK(test.counts().controls >= 1);
    CHECK(train.counts().patients >= 1);
    CHECK(test.counts().patients >= 1);
  }
  SECTION("site x label stratification keeps per-site proportions") {
    CohortManifest m;
    int id = 0;
    for (auto [site, label, n] : {std::tuple{Site::ucla, 0, 8}, {Site::ucla, 1, 4}, {Site::cobre, 0, 6},
                                  {Site::cobre, 1, 6}}) {
      for (int i = 0; i < n; ++i) {
        SubjectRow r;
        r.subject_id = "s" + std::to_string(id++);
        r.site = site;
        r.path = "unused";
        r.label = label;
        m.rows.push_back(r);
      }
    }
    SplitSpec s;
    s.train_fraction = 0.75;
    s.stratify_by = SplitSpec::Stratify::site_label;
    s.seed = 5;
    auto [train, test] = stratified_split(m, s);
    CHECK(train.size() == 18);
    CHECK(test.size() == 6);
    CHECK(train.counts().per_site["UCLA"] == 9);
    CHECK(train.counts().per_site["COBRE"] == 9);
  }
}

TEST_CASE("generate_phantom") {
  testutil::TempDir td;
  PhantomSpec spec;
  spec.n_per_class = 2;
  spec.nx = spec.ny = spec.nz = 8;
  spec.timesteps = 10;
  spec.seed = 5;

  SECTION("writes the volumes, atlas and manifest") {
    CohortManifest m = generate_phantom(spec, td.file("ph"));
    CHECK(m.size() == 4);
    CHECK(std::filesystem::exists(td.file("ph") / "atlas.nii"));
    CHECK(std::filesystem::exists(td.file("ph") / "atlas.txt"));
    CHECK(std::filesystem::exists(td.file("ph") / "manifest.csv"));
    int files = 0;
    for (const auto& r : m.rows) files += std::filesystem::exists(r.path);
    CHECK(files == 4);
    CohortManifest reloaded = load_manifest(td.file("ph") / "manifest.csv");
    CHECK(reloaded.size() == 4);
    Volume4D v = read_volume(m.rows[0].path);
    CHECK(v.nt == 10);
    CHECK(v.nx == 8);
  }
  SECTION("class means inside a signal block differ by the configured offset") {
    PhantomSpec s2 = spec;
    s2.n_per_class = 3;
    s2.nx = s2.ny = s2.nz = 12;
    s2.timesteps = 12;
    s2.class_offset = 18.0;
    s2.noise_sigma = 6.0;
    s2.temporal_events = false;
    CohortManifest m = generate_phantom(s2, td.file("ph2"));
    AtlasLabels atlas = load_atlas(td.file("ph2") / "atlas.nii", td.file("ph2") / "atlas.txt");
    double mean0 = 0, mean1 = 0;
    int64_t n0 = 0, n1 = 0;
    for (const auto& r : m.rows) {
      Volume4D v = read_volume(r.path);
      for (int t = 0; t < v.nt; ++t)
        for (size_t i = 0; i < v.frame_size(); ++i) {
          const int block = static_cast<int>(atlas.labels.data[i]);
          if (block < 1 || !s2.is_signal_block(block)) continue;
          const double val = v.data[i + v.frame_size() * static_cast<size_t>(t)];
          if (r.label == 0) {
            mean0 += val;
            ++n0;
          } else {
            mean1 += val;
            ++n1;
          }
        }
    }
    mean0 /= static_cast<double>(n0);
    mean1 /= static_cast<double>(n1);
    // oracle: standard error of the mean; 3 sigma over sqrt(signal voxel count x T)
    const double bound = 3.0 * s2.noise_sigma / std::sqrt(static_cast<double>(n0));
    CHECK(std::fabs((mean0 - mean1) - s2.class_offset) <= bound + 1e-3);
  }
  SECTION("fixed seed reproduces files bytewise") {
    generate_phantom(spec, td.file("pa"));
    generate_phantom(spec, td.file("pb"));
    for (const char* name : {"synth000.nii", "synth003.nii", "atlas.nii", "atlas.txt"}) {
      auto read = [](const std::filesystem::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      };
      REQUIRE(read(td.file("pa") / name) == read(td.file("pb") / name));
    }
  }
  SECTION("temporal events induce within-block coherence above cross-block") {
    PhantomSpec s3 = spec;
    s3.nx = s3.ny = s3.nz = 16;
    s3.timesteps = 24;
    s3.temporal_events = true;
    s3.event_amplitude = 25.0;
    s3.class1_event_scale = 0.0;
    s3.block_coupling = 0.5;
    s3.seed = 11;
    CohortManifest m = generate_phantom(s3, td.file("ph3"));
    // a finer 4x4x4 sub-block atlas: each sub-ROI nests inside one phantom block
    AtlasLabels fine = make_block_atlas(16, 16, 16, 4, Mat4::scaling(3, 3, 3));
    AtlasLabels coarse = load_atlas(td.file("ph3") / "atlas.nii", td.file("ph3") / "atlas.txt");

    // map each fine ROI to its parent block via any member voxel
    std::vector<int> parent(static_cast<size_t>(fine.roi_count()) + 1, 0);
    for (size_t i = 0; i < fine.labels.size(); ++i)
      parent[static_cast<size_t>(fine.labels.data[i])] = static_cast<int>(coarse.labels.data[i]);

    Volume4D v = read_volume(m.rows[0].path);  // a class-0 subject
    Connectome c = pearson_matrix(extract_roi_timeseries(v, fine));
    double within = 0, cross = 0;
    int64_t nw = 0, nc = 0;
    for (int i = 0; i < c.r_count; ++i)
      for (int j = i + 1; j < c.r_count; ++j) {
        const int pi = parent[static_cast<size_t>(i) + 1], pj = parent[static_cast<size_t>(j) + 1];
        if (!s3.is_signal_block(pi) || !s3.is_signal_block(pj)) continue;
        if (pi == pj) {
          within += std::fabs(c.at(i, j));
          ++nw;
        } else {
          cross += std::fabs(c.at(i, j));
          ++nc;
        }
      }
    REQUIRE(nw > 0);
    REQUIRE(nc > 0);
    CHECK(within / static_cast<double>(nw) > cross / static_cast<double>(nc));
  }
}

TEST_CASE("feature builders") {
  testutil::TempDir td;
  PhantomSpec spec;
  spec.n_per_class = 2;
  spec.nx = spec.ny = spec.nz = 10;
  spec.timesteps = 8;
  spec.temporal_events = true;
  spec.seed = 21;
  CohortManifest m = generate_phantom(spec, td.file("ph"));
  AtlasLabels atlas = load_atlas(td.file("ph") / "atlas.nii", td.file("ph") / "atlas.txt");

  SECTION("connectome features are R^2 wide") {
    FeatureDataset ds = connectome_features(m, atlas);
    CHECK(ds.sample_shape == Shape{64});
    CHECK(ds.size() == 4);
    CHECK(ds.labels == std::vector<int>{0, 0, 1, 1});
  }
  SECTION("aggregate features carry the grid in tensor layout") {
    FeatureDataset ds = aggregate_features(m, AggregateMode::max);
    CHECK(ds.sample_shape == Shape{1, 10, 10, 10});
    CHECK(ds.size() == 4);
  }
  SECTION("parallel feature extraction matches sequential") {
    FeatureDataset seq = connectome_features(m, atlas, 0, 1);
    FeatureDataset par = connectome_features(m, atlas, 0, 4);
    REQUIRE(seq.samples.size() == par.samples.size());
    for (size_t i = 0; i < seq.samples.size(); ++i) CHECK(seq.samples[i] == par.samples[i]);
  }
  SECTION("trim flows through the preprocessing") {
    Volume4D v = load_preprocessed(m.rows[0].path, 3, 0.0);
    CHECK(v.nt == 5);
  }
}

TEST_CASE("train_run and evaluate_run round trip") {
  testutil::TempDir td;
  PhantomSpec spec;
  spec.n_per_class = 8;
  spec.nx = spec.ny = spec.nz = 10;
  spec.timesteps = 12;
  spec.temporal_events = true;
  spec.event_amplitude = 25.0;
  spec.class_offset = 15.0;
  spec.seed = 31;
  CohortManifest m = generate_phantom(spec, td.file("ph"));

  SECTION("random forest run") {
    RunOptions opt;
    opt.model = TrainModel::rf;
    opt.seed = 7;
    opt.atlas_nii = td.file("ph") / "atlas.nii";
    opt.atlas_names = td.file("ph") / "atlas.txt";
    train_run(m, opt, td.file("run_rf"));
    CHECK(std::filesystem::exists(td.file("run_rf") / "forest.bin"));
    CHECK(std::filesystem::exists(td.file("run_rf") / "run.cfg"));
    CHECK(std::filesystem::exists(td.file("run_rf") / "train_manifest.csv"));
    EvaluateResult ev = evaluate_run(td.file("run_rf"));
    CHECK(std::filesystem::exists(td.file("run_rf") / "metrics.json"));
    CHECK(ev.metrics.tp + ev.metrics.fp + ev.metrics.tn + ev.metrics.fn == 4);  // 20% of 16 rounds to 4 held out
    CHECK(ev.rendered.find("accuracy=") != std::string::npos);
    auto cfg = read_run_cfg(td.file("run_rf") / "run.cfg");
    CHECK(cfg["n_trees"] == "500");
    CHECK(cfg["max_depth"] == "6");
    CHECK(cfg["model"] == "rf");
  }
  SECTION("vanilla run with custom epochs echoes the effective config") {
    RunOptions opt;
    opt.model = TrainModel::vanilla;
    opt.seed = 7;
    opt.epochs = 5;
    opt.atlas_nii = td.file("ph") / "atlas.nii";
    opt.atlas_names = td.file("ph") / "atlas.txt";
    RunResult r = train_run(m, opt, td.file("run_v"));
    CHECK(r.loss.size() == 5);
    auto cfg = read_run_cfg(td.file("run_v") / "run.cfg");
    CHECK(cfg["epochs"] == "5");
    CHECK(cfg["optimizer"] == "adam");
    CHECK(cfg["input_dim"] == "64");
    EvaluateResult ev = evaluate_run(td.file("run_v"));
    CHECK(ev.metrics.accuracy.has_value());
    // loss.csv exists with one row per epoch
    std::ifstream f(td.file("run_v") / "loss.csv");
    std::string line;
    int lines = 0;
    while (std::getline(f, line)) ++lines;
    CHECK(lines == 6);
  }
  SECTION("identical seeds reproduce identical metrics") {
    RunOptions opt;
    opt.model = TrainModel::rf;
    opt.seed = 9;
    opt.atlas_nii = td.file("ph") / "atlas.nii";
    opt.atlas_names = td.file("ph") / "atlas.txt";
    train_run(m, opt, td.file("ra"));
    train_run(m, opt, td.file("rb"));
    EvaluateResult a = evaluate_run(td.file("ra"));
    EvaluateResult b = evaluate_run(td.file("rb"));
    CHECK(a.rendered == b.rendered);
    CHECK(a.metrics.tp == b.metrics.tp);
    CHECK(a.metrics.fp == b.metrics.fp);
  }
}
