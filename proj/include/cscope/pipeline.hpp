#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "cscope/connectome.hpp"
#include "cscope/error.hpp"
#include "cscope/forest.hpp"
#include "cscope/manifest.hpp"
#include "cscope/models.hpp"
#include "cscope/nifti.hpp"
#include "cscope/parallel.hpp"
#include "cscope/volume_ops.hpp"

namespace cscope {

namespace detail_pipeline {
using cscope::parallel_for;
}  // namespace detail_pipeline

/// Per-subject preprocessing shared by the feature builders.
inline Volume4D load_preprocessed(const std::filesystem::path& path, int trim, double smooth_fwhm) {
  Volume4D v = read_volume(path);
  if (trim > 0) v = trim_initial(v, trim);
  if (smooth_fwhm > 0) {
    SmoothingParams p;
    p.fwhm_mm = smooth_fwhm;
    for (int a = 0; a < 3; ++a) p.voxel_size_mm[static_cast<size_t>(a)] = std::max(1e-6, v.affine.column_norm(a));
    v = gaussian_smooth(v, p);
  }
  return v;
}

/// Flattened Pearson connectomes per subject.
inline FeatureDataset connectome_features(const CohortManifest& m, const AtlasLabels& atlas, int trim = 0,
                                          int threads = 1) {
  FeatureDataset ds;
  const int64_t r = atlas.roi_count();
  ds.sample_shape = {r * r};
  ds.samples.resize(static_cast<size_t>(m.size()));
  ds.labels = m.labels();
  detail_pipeline::parallel_for(m.size(), threads, [&](int64_t i) {
    Volume4D v = load_preprocessed(m.rows[static_cast<size_t>(i)].path, trim, 0.0);
    RoiTimeSeries ts = extract_roi_timeseries(v, atlas);
    Connectome c = pearson_matrix(ts);
    ds.samples[static_cast<size_t>(i)] = flatten(c);
  });
  return ds;
}

/// Per-subject temporally aggregated 3D images, flattened into tensor layout
/// {1, Z, Y, X} (the volume's x-y plane stays the in-plane pair).
inline FeatureDataset aggregate_features(const CohortManifest& m, AggregateMode mode, int trim = 0,
                                         double smooth_fwhm = 0.0, int threads = 1) {
  FeatureDataset ds;
  ds.samples.resize(static_cast<size_t>(m.size()));
  ds.labels = m.labels();
  std::vector<Shape> shapes(static_cast<size_t>(m.size()));
  detail_pipeline::parallel_for(m.size(), threads, [&](int64_t i) {
    Volume4D v = load_preprocessed(m.rows[static_cast<size_t>(i)].path, trim, smooth_fwhm);
    Volume3D a = aggregate_time(v, mode);
    shapes[static_cast<size_t>(i)] = {1, a.nz, a.ny, a.nx};
    ds.samples[static_cast<size_t>(i)] = std::move(a.data);
  });
  for (const auto& s : shapes)
    if (s != shapes[0]) fail(errc::shape_mismatch, "subjects sit on different grids");
  ds.sample_shape = shapes.empty() ? Shape{1, 0, 0, 0} : shapes[0];
  return ds;
}

// ---------------------------------------------------------------------------
// Run directories
// ---------------------------------------------------------------------------

inline void write_run_cfg(const std::filesystem::path& path, const std::map<std::string, std::string>& kv) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(errc::io_error, "cannot open " + path.string());
  for (const auto& [k, v] : kv) f << k << "=" << v << "\n";
  if (!f) fail(errc::io_error, "short write: " + path.string());
}

inline std::map<std::string, std::string> read_run_cfg(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail(errc::io_error, "cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(f, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(errc::io_error, "cannot open " + path.string());
  f << "epoch,train_loss\n";
  char buf[40];
  for (size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, losses[i]);
    f << buf;
  }
}

// ---------------------------------------------------------------------------
// Experiment driver: train + evaluate with persisted artifacts
// ---------------------------------------------------------------------------

enum class TrainModel { rf, vanilla, sae, cnn3d };

inline const char* train_model_name(TrainModel m) {
  switch (m) {
    case TrainModel::rf: return "rf";
    case TrainModel::vanilla: return "vanilla";
    case TrainModel::sae: return "sae";
    case TrainModel::cnn3d: return "cnn3d";
  }
  return "?";
}

inline TrainModel parse_train_model(const std::string& s) {
  if (s == "rf") return TrainModel::rf;
  if (s == "vanilla") return TrainModel::vanilla;
  if (s == "sae") return TrainModel::sae;
  if (s == "cnn3d") return TrainModel::cnn3d;
  fail(errc::usage, "unknown model '" + s + "' (rf, vanilla, sae, cnn3d)");
}

struct RunOptions {
  TrainModel model = TrainModel::vanilla;
  double split_fraction = 0.8;
  uint64_t seed = 7;
  int epochs = -1;  // -1: model default (30; 50 for cnn3d)
  int batch_size = 8;
  std::string optimizer;        // "": model default
  double learning_rate = -1.0;  // <0: model default
  bool augment = false;
  bool augment_each_epoch = true;   // false: one fixed augmentation pass
  bool fine_tune_encoder = false;   // sae: update the encoder in stage 2
  std::filesystem::path atlas_nii, atlas_names;  // connectome-feature models
  AggregateMode aggregate = AggregateMode::max;  // cnn3d
  int trim = 0;
  double smooth_fwhm = 0.0;
  int threads = 1;
};

namespace detail_pipeline {

inline FeatureDataset features_for(const CohortManifest& m, const RunOptions& opt) {
  if (opt.model == TrainModel::cnn3d)
    return aggregate_features(m, opt.aggregate, opt.trim, opt.smooth_fwhm, opt.threads);
  require(!opt.atlas_nii.empty() && !opt.atlas_names.empty(), errc::usage,
          "connectome-based models need --atlas and --names");
  AtlasLabels atlas = load_atlas(opt.atlas_nii, opt.atlas_names);
  return connectome_features(m, atlas, opt.trim, opt.threads);
}

inline void flatten_dataset(const FeatureDataset& ds, std::vector<double>& X, std::vector<int>& y) {
  const auto f = static_cast<size_t>(ds.feature_count());
  X.clear();
  X.reserve(static_cast<size_t>(ds.size()) * f);
  for (const auto& s : ds.samples) X.insert(X.end(), s.begin(), s.end());
  y = ds.labels;
}

inline TrainConfig resolved_train_config(const RunOptions& opt, TrainModel stage) {
  TrainConfig cfg;
  cfg.batch_size = opt.batch_size;
  cfg.seed = opt.seed;
  switch (stage) {
    case TrainModel::vanilla:
      cfg.optimizer = OptKind::adam;
      cfg.learning_rate = 0.001;
      cfg.epochs = 30;
      break;
    case TrainModel::sae:  // stage 1: autoencoder defaults
      cfg.optimizer = OptKind::sgd;
      cfg.learning_rate = 0.1;
      cfg.epochs = 30;
      break;
    case TrainModel::cnn3d:
      cfg.optimizer = OptKind::adam;
      cfg.learning_rate = 0.001;
      cfg.epochs = 50;
      cfg.augment = opt.augment;
      cfg.augment_each_epoch = opt.augment_each_epoch;
      break;
    default:
      break;
  }
  if (opt.epochs > 0) cfg.epochs = opt.epochs;
  if (opt.learning_rate > 0) cfg.learning_rate = opt.learning_rate;
  if (opt.optimizer == "sgd") cfg.optimizer = OptKind::sgd;
  if (opt.optimizer == "adam") cfg.optimizer = OptKind::adam;
  return cfg;
}

inline std::map<std::string, std::string> echo_config(const RunOptions& opt, const TrainConfig& cfg,
                                                      int64_t input_dim) {
  std::map<std::string, std::string> kv;
  kv["model"] = train_model_name(opt.model);
  kv["split"] = std::to_string(opt.split_fraction);
  kv["seed"] = std::to_string(opt.seed);
  kv["threads"] = std::to_string(opt.threads);
  kv["trim"] = std::to_string(opt.trim);
  kv["smooth_fwhm"] = std::to_string(opt.smooth_fwhm);
  kv["input_dim"] = std::to_string(input_dim);
  if (opt.model == TrainModel::cnn3d) {
    kv["aggregate"] = opt.aggregate == AggregateMode::max ? "max" : "min";
    kv["augment"] = opt.augment ? "1" : "0";
    kv["augment_each_epoch"] = opt.augment_each_epoch ? "1" : "0";
  } else {
    kv["atlas"] = opt.atlas_nii.string();
    kv["names"] = opt.atlas_names.string();
  }
  if (opt.model == TrainModel::sae) kv["fine_tune_encoder"] = opt.fine_tune_encoder ? "1" : "0";
  if (opt.model != TrainModel::rf) {
    kv["epochs"] = std::to_string(cfg.epochs);
    kv["batch_size"] = std::to_string(cfg.batch_size);
    kv["optimizer"] = cfg.optimizer == OptKind::sgd ? "sgd" : "adam";
    kv["learning_rate"] = std::to_string(cfg.learning_rate);
  } else {
    kv["n_trees"] = "500";
    kv["max_depth"] = "6";
    kv["max_features"] = "96";
  }
  return kv;
}

}  // namespace detail_pipeline

struct RunResult {
  std::vector<double> loss;  // classifier-stage loss history (empty for rf)
};

/// Train the requested model on a stratified split of the manifest and
/// persist every artifact needed to evaluate the run later.
inline RunResult train_run(const CohortManifest& manifest, const RunOptions& opt,
                           const std::filesystem::path& run_dir) {
  namespace dp = detail_pipeline;
  std::filesystem::create_directories(run_dir);

  SplitSpec split;
  split.train_fraction = opt.split_fraction;
  split.seed = opt.seed;
  auto [train_m, test_m] = stratified_split(manifest, split);
  save_manifest(train_m, run_dir / "train_manifest.csv");
  save_manifest(test_m, run_dir / "test_manifest.csv");

  FeatureDataset train_ds = dp::features_for(train_m, opt);
  const int64_t input_dim = train_ds.feature_count();

  RunResult result;
  TrainConfig cfg = dp::resolved_train_config(opt, opt.model);

  switch (opt.model) {
    case TrainModel::rf: {
      std::vector<double> X;
      std::vector<int> y;
      dp::flatten_dataset(train_ds, X, y);
      ForestConfig fc;
      fc.seed = opt.seed;
      Forest forest = fit_forest(X, train_ds.size(), input_dim, y, fc, opt.threads);
      save_forest(forest, run_dir / "forest.bin");
      break;
    }
    case TrainModel::vanilla: {
      Model m(build_vanilla(opt.seed, input_dim));
      result.loss = train_classifier(m, train_ds, cfg).epoch_loss;
      m.save(run_dir / "model.ckpt");
      write_loss_csv(run_dir / "loss.csv", result.loss);
      break;
    }
    case TrainModel::sae: {
      Model sae(build_sae(opt.seed, input_dim));
      TrainResult stage1 = train_autoencoder(sae, train_ds, cfg);
      write_loss_csv(run_dir / "sae_loss.csv", stage1.epoch_loss);

      Model clf(build_latent_classifier(opt.seed + 1, sae.spec().latent_dim));
      TrainConfig cfg2 = dp::resolved_train_config(opt, TrainModel::vanilla);  // Adam defaults
      cfg2.epochs = cfg.epochs;
      result.loss = train_latent_classifier(sae, clf, train_ds, cfg2, opt.fine_tune_encoder).epoch_loss;
      sae.save(run_dir / "sae.ckpt");  // after stage 2: fine-tuning may have moved the encoder
      clf.save(run_dir / "model.ckpt");
      write_loss_csv(run_dir / "loss.csv", result.loss);
      break;
    }
    case TrainModel::cnn3d: {
      const Shape& s = train_ds.sample_shape;
      Model m(build_cnn3d(opt.seed, s[1], s[2], s[3]));
      result.loss = train_classifier(m, train_ds, cfg).epoch_loss;
      m.save(run_dir / "model.ckpt");
      write_loss_csv(run_dir / "loss.csv", result.loss);
      break;
    }
  }
  write_run_cfg(run_dir / "run.cfg", dp::echo_config(opt, cfg, input_dim));
  return result;
}

struct EvaluateResult {
  MetricsReport metrics;
  std::string rendered;
};

/// Re-derive features for the held-out manifest from the echoed config, load
/// the persisted model, and report metrics. Writes metrics.json into the run
/// directory.
inline EvaluateResult evaluate_run(const std::filesystem::path& run_dir, int threads = 1) {
  auto cfg = read_run_cfg(run_dir / "run.cfg");
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = cfg.find(key);
    if (it == cfg.end()) fail(errc::bad_field, "run.cfg lacks '" + key + "'");
    return it->second;
  };

  CohortManifest test_m = load_manifest(run_dir / "test_manifest.csv");
  RunOptions opt;
  opt.model = parse_train_model(need("model"));
  opt.trim = std::stoi(need("trim"));
  opt.smooth_fwhm = std::stod(need("smooth_fwhm"));
  opt.threads = threads;
  if (opt.model == TrainModel::cnn3d) {
    opt.aggregate = need("aggregate") == "min" ? AggregateMode::min : AggregateMode::max;
  } else {
    opt.atlas_nii = need("atlas");
    opt.atlas_names = need("names");
  }
  opt.seed = static_cast<uint64_t>(std::stoull(need("seed")));

  FeatureDataset test_ds = detail_pipeline::features_for(test_m, opt);
  const int64_t input_dim = test_ds.feature_count();
  if (input_dim != std::stoll(need("input_dim")))
    fail(errc::shape_mismatch, "held-out features disagree with the trained input dimension");

  EvaluateResult out;
  switch (opt.model) {
    case TrainModel::rf: {
      Forest forest = load_forest(run_dir / "forest.bin");
      std::vector<double> X;
      std::vector<int> y;
      detail_pipeline::flatten_dataset(test_ds, X, y);
      out.metrics = compute_metrics(predict(forest, X, test_ds.size(), input_dim), y);
      break;
    }
    case TrainModel::vanilla: {
      Model m(build_vanilla(opt.seed, input_dim));
      m.load(run_dir / "model.ckpt");
      out.metrics = evaluate_model(m, test_ds).metrics;
      break;
    }
    case TrainModel::sae: {
      Model sae(build_sae(opt.seed, input_dim));
      sae.load(run_dir / "sae.ckpt");
      FeatureDataset latents = encode_dataset(sae, test_ds);
      Model clf(build_latent_classifier(opt.seed + 1, sae.spec().latent_dim));
      clf.load(run_dir / "model.ckpt");
      out.metrics = evaluate_model(clf, latents).metrics;
      break;
    }
    case TrainModel::cnn3d: {
      const Shape& s = test_ds.sample_shape;
      Model m(build_cnn3d(opt.seed, s[1], s[2], s[3]));
      m.load(run_dir / "model.ckpt");
      out.metrics = evaluate_model(m, test_ds).metrics;
      break;
    }
  }
  out.rendered = render_metrics(out.metrics);
  write_metrics_json(out.metrics, run_dir / "metrics.json");
  return out;
}

}  // namespace cscope
