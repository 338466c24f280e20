// connectoscope: command-line driver for the fMRI classification toolkit.
//
// Subcommands: phantom, aggregate, connectome, train, evaluate,
// export-connectivity. Exit codes: 0 success, 2 usage error, 3 data error,
// 4 numeric error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "cscope/connectoscope.hpp"

namespace fs = std::filesystem;
using namespace cscope;

namespace {

int exit_code_for(errc c) {
  switch (c) {
    case errc::usage:
      return 2;
    case errc::range_error:
    case errc::shape_mismatch:
    case errc::input_too_small:
    case errc::batch_too_small:
    case errc::all_zero:
    case errc::trim_too_long:
      return 4;
    default:
      return 3;
  }
}

struct GlobalOpts {
  uint64_t seed = 0;
  int threads = 1;
  std::string out;
};

fs::path require_out(const GlobalOpts& g, const std::string& sub) {
  if (g.out.empty()) fail(errc::usage, sub + " needs --out");
  fs::path dir(g.out);
  fs::create_directories(dir);
  return dir;
}

void echo_stage_cfg(const fs::path& dir, std::map<std::string, std::string> kv, const GlobalOpts& g) {
  kv["seed"] = std::to_string(g.seed);
  kv["threads"] = std::to_string(g.threads);
  write_run_cfg(dir / "run.cfg", kv);
}

std::string basename_noext(const fs::path& p) {
  std::string stem = p.stem().string();
  if (p.extension() == ".gz") stem = fs::path(stem).stem().string();
  return stem;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"connectoscope: fMRI connectome and volumetric classification toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--threads", g.threads, "worker threads for per-subject stages")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory");

  // ---- phantom ----
  auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic cohort with known class structure");
  PhantomSpec ph;
  std::vector<int> ph_shape{61, 73, 61};
  cmd_phantom->add_option("--per-class", ph.n_per_class, "subjects per class");
  cmd_phantom->add_option("--shape", ph_shape, "grid extents X Y Z")->expected(3);
  cmd_phantom->add_option("--timesteps", ph.timesteps, "frames per subject");
  cmd_phantom->add_option("--baseline", ph.baseline, "baseline intensity");
  cmd_phantom->add_option("--noise-sigma", ph.noise_sigma, "voxel noise sigma");
  cmd_phantom->add_option("--offset", ph.class_offset, "class-1 intensity reduction in signal blocks");
  cmd_phantom->add_flag("--temporal-events", ph.temporal_events, "inject shared activation series");
  cmd_phantom->add_option("--event-amplitude", ph.event_amplitude, "class-0 activation amplitude");
  cmd_phantom->add_option("--class1-event-scale", ph.class1_event_scale, "activation scale for class 1");
  cmd_phantom->add_option("--coupling", ph.block_coupling, "cross-block coupling rho in [0,1]");
  cmd_phantom->add_option("--blocks-per-axis", ph.blocks_per_axis, "atlas blocks per axis");

  // ---- aggregate ----
  auto* cmd_agg = app.add_subcommand("aggregate", "collapse each subject's time axis to a 3D image");
  std::string agg_manifest, agg_mode = "max";
  int agg_trim = 0;
  double agg_fwhm = 0.0;
  cmd_agg->add_option("--manifest", agg_manifest, "cohort manifest CSV")->required();
  cmd_agg->add_option("--mode", agg_mode, "max or min")->check(CLI::IsMember({"max", "min"}));
  cmd_agg->add_option("--trim", agg_trim, "initial frames to drop");
  cmd_agg->add_option("--fwhm", agg_fwhm, "Gaussian smoothing FWHM in mm (0 = off)");

  // ---- connectome ----
  auto* cmd_conn = app.add_subcommand("connectome", "per-subject Pearson connectomes from an atlas");
  std::string conn_manifest, conn_atlas, conn_names;
  int conn_trim = 0;
  bool conn_group = false;
  cmd_conn->add_option("--manifest", conn_manifest, "cohort manifest CSV")->required();
  cmd_conn->add_option("--atlas", conn_atlas, "label atlas NIfTI")->required();
  cmd_conn->add_option("--names", conn_names, "ROI name list (one per line)")->required();
  cmd_conn->add_option("--trim", conn_trim, "initial frames to drop");
  cmd_conn->add_flag("--group-average", conn_group, "also write per-class group means");

  // ---- train ----
  auto* cmd_train = app.add_subcommand("train", "train a classifier on a stratified split");
  std::string tr_model = "vanilla", tr_manifest, tr_atlas, tr_names, tr_aggregate = "max", tr_optimizer;
  double tr_split = 0.8, tr_lr = -1.0, tr_fwhm = 0.0;
  int tr_epochs = -1, tr_batch = 8, tr_trim = 0;
  bool tr_augment = false, tr_augment_once = false, tr_fine_tune = false;
  cmd_train->add_option("--model", tr_model, "rf, vanilla, sae or cnn3d")
      ->check(CLI::IsMember({"rf", "vanilla", "sae", "cnn3d"}));
  cmd_train->add_option("--manifest", tr_manifest, "cohort manifest CSV")->required();
  cmd_train->add_option("--split", tr_split, "train fraction in (0,1)");
  cmd_train->add_option("--atlas", tr_atlas, "label atlas NIfTI (connectome-feature models)");
  cmd_train->add_option("--names", tr_names, "ROI name list (connectome-feature models)");
  cmd_train->add_option("--aggregate", tr_aggregate, "cnn3d temporal aggregation: max or min")
      ->check(CLI::IsMember({"max", "min"}));
  cmd_train->add_option("--trim", tr_trim, "initial frames to drop");
  cmd_train->add_option("--fwhm", tr_fwhm, "smoothing FWHM in mm before aggregation");
  cmd_train->add_option("--epochs", tr_epochs, "training epochs (default per model)");
  cmd_train->add_option("--batch-size", tr_batch, "minibatch size");
  cmd_train->add_option("--optimizer", tr_optimizer, "sgd or adam")->check(CLI::IsMember({"", "sgd", "adam"}));
  cmd_train->add_option("--lr", tr_lr, "learning rate (default per model)");
  cmd_train->add_flag("--augment", tr_augment, "cnn3d rotation augmentation");
  cmd_train->add_flag("--augment-once", tr_augment_once, "augment once up front instead of every epoch");
  cmd_train->add_flag("--fine-tune-encoder", tr_fine_tune, "sae: update the encoder during stage 2");

  // ---- evaluate ----
  auto* cmd_eval = app.add_subcommand("evaluate", "evaluate a finished run on its held-out split");
  std::string eval_run;
  cmd_eval->add_option("--run", eval_run, "run directory produced by train")->required();

  // ---- export-connectivity ----
  auto* cmd_export = app.add_subcommand("export-connectivity", "render a connectome as SVG or an edge list");
  std::string ex_connectome, ex_format = "svg-heatmap", ex_out;
  double ex_threshold = 0.0;
  cmd_export->add_option("--connectome", ex_connectome, "connectome CSV")->required();
  cmd_export->add_option("--format", ex_format, "svg-heatmap or edge-csv")
      ->check(CLI::IsMember({"svg-heatmap", "edge-csv"}));
  cmd_export->add_option("--threshold", ex_threshold, "minimum |r| for edges, in [0,1]");
  cmd_export->add_option("--file", ex_out, "output file (default derived from --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cmd_phantom->parsed()) {
      fs::path dir = require_out(g, "phantom");
      ph.nx = ph_shape[0];
      ph.ny = ph_shape[1];
      ph.nz = ph_shape[2];
      ph.seed = g.seed;
      CohortManifest m = generate_phantom(ph, dir);
      CohortCounts c = m.counts();
      echo_stage_cfg(dir,
                     {{"stage", "phantom"},
                      {"per_class", std::to_string(ph.n_per_class)},
                      {"shape", std::to_string(ph.nx) + "x" + std::to_string(ph.ny) + "x" + std::to_string(ph.nz)},
                      {"timesteps", std::to_string(ph.timesteps)},
                      {"noise_sigma", std::to_string(ph.noise_sigma)},
                      {"offset", std::to_string(ph.class_offset)},
                      {"temporal_events", ph.temporal_events ? "1" : "0"},
                      {"event_amplitude", std::to_string(ph.event_amplitude)},
                      {"class1_event_scale", std::to_string(ph.class1_event_scale)},
                      {"coupling", std::to_string(ph.block_coupling)},
                      {"blocks_per_axis", std::to_string(ph.blocks_per_axis)}},
                     g);
      std::printf("phantom: %lld subjects (%lld control, %lld patient) in %s\n",
                  static_cast<long long>(c.total), static_cast<long long>(c.controls),
                  static_cast<long long>(c.patients), dir.string().c_str());
    } else if (cmd_agg->parsed()) {
      fs::path dir = require_out(g, "aggregate");
      CohortManifest m = load_manifest(agg_manifest);
      const AggregateMode mode = agg_mode == "min" ? AggregateMode::min : AggregateMode::max;
      std::vector<fs::path> written(static_cast<size_t>(m.size()));
      detail_pipeline::parallel_for(m.size(), g.threads, [&](int64_t i) {
        const auto& row = m.rows[static_cast<size_t>(i)];
        Volume4D v = load_preprocessed(row.path, agg_trim, agg_fwhm);
        Volume3D a = aggregate_time(v, mode);
        Volume4D out3(a.nx, a.ny, a.nz, 1);
        out3.data = a.data;
        out3.affine = a.affine;
        const fs::path p = dir / (row.subject_id + "_" + agg_mode + ".nii");
        write_volume(out3, dtype::float32, p);
        written[static_cast<size_t>(i)] = p;
      });
      echo_stage_cfg(dir,
                     {{"stage", "aggregate"},
                      {"manifest", fs::absolute(agg_manifest).string()},
                      {"mode", agg_mode},
                      {"trim", std::to_string(agg_trim)},
                      {"fwhm", std::to_string(agg_fwhm)}},
                     g);
      std::printf("aggregate: wrote %zu volumes to %s\n", written.size(), dir.string().c_str());
    } else if (cmd_conn->parsed()) {
      fs::path dir = require_out(g, "connectome");
      CohortManifest m = load_manifest(conn_manifest);
      AtlasLabels atlas = load_atlas(conn_atlas, conn_names);
      std::vector<Connectome> all(static_cast<size_t>(m.size()));
      detail_pipeline::parallel_for(m.size(), g.threads, [&](int64_t i) {
        const auto& row = m.rows[static_cast<size_t>(i)];
        Volume4D v = load_preprocessed(row.path, conn_trim, 0.0);
        Connectome c = pearson_matrix(extract_roi_timeseries(v, atlas));
        c.subject_id = row.subject_id;
        save_connectome_csv(c, dir / (row.subject_id + ".csv"));
        all[static_cast<size_t>(i)] = std::move(c);
      });
      if (conn_group) {
        for (int label : {0, 1}) {
          std::vector<Connectome> group;
          for (int64_t i = 0; i < m.size(); ++i)
            if (m.rows[static_cast<size_t>(i)].label == label) group.push_back(all[static_cast<size_t>(i)]);
          if (group.empty()) continue;
          save_connectome_csv(group_average(group),
                              dir / (label == 0 ? "group_control.csv" : "group_schizophrenia.csv"));
        }
      }
      echo_stage_cfg(dir,
                     {{"stage", "connectome"},
                      {"manifest", fs::absolute(conn_manifest).string()},
                      {"atlas", fs::absolute(conn_atlas).string()},
                      {"names", fs::absolute(conn_names).string()},
                      {"trim", std::to_string(conn_trim)},
                      {"group_average", conn_group ? "1" : "0"}},
                     g);
      std::printf("connectome: wrote %lld matrices (R=%d) to %s\n", static_cast<long long>(m.size()),
                  atlas.roi_count(), dir.string().c_str());
    } else if (cmd_train->parsed()) {
      fs::path dir = require_out(g, "train");
      CohortManifest m = load_manifest(tr_manifest);
      RunOptions opt;
      opt.model = parse_train_model(tr_model);
      opt.split_fraction = tr_split;
      opt.seed = g.seed;
      opt.epochs = tr_epochs;
      opt.batch_size = tr_batch;
      opt.optimizer = tr_optimizer;
      opt.learning_rate = tr_lr;
      opt.augment = tr_augment;
      opt.augment_each_epoch = !tr_augment_once;
      opt.fine_tune_encoder = tr_fine_tune;
      opt.atlas_nii = tr_atlas;
      opt.atlas_names = tr_names;
      opt.aggregate = tr_aggregate == "min" ? AggregateMode::min : AggregateMode::max;
      opt.trim = tr_trim;
      opt.smooth_fwhm = tr_fwhm;
      opt.threads = g.threads;
      RunResult r = train_run(m, opt, dir);
      if (!r.loss.empty())
        std::printf("train: %s finished, final epoch loss %.6f, artifacts in %s\n", tr_model.c_str(),
                    r.loss.back(), dir.string().c_str());
      else
        std::printf("train: %s finished, artifacts in %s\n", tr_model.c_str(), dir.string().c_str());
    } else if (cmd_eval->parsed()) {
      EvaluateResult ev = evaluate_run(eval_run, g.threads);
      std::printf("%s\n", ev.rendered.c_str());
    } else if (cmd_export->parsed()) {
      Connectome c = load_connectome_csv(ex_connectome);
      fs::path out_file;
      if (!ex_out.empty()) {
        out_file = ex_out;
      } else {
        fs::path dir = require_out(g, "export-connectivity");
        out_file = dir / (basename_noext(ex_connectome) + (ex_format == "edge-csv" ? "_edges.csv" : "_heatmap.svg"));
      }
      export_connectivity(c, ex_threshold, out_file,
                          ex_format == "edge-csv" ? ExportFormat::edge_csv : ExportFormat::svg_heatmap);
      std::printf("export-connectivity: wrote %s\n", out_file.string().c_str());
    }
  } catch (const error& e) {
    std::fprintf(stderr, "connectoscope: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "connectoscope: %s\n", e.what());
    return 3;
  }
  return 0;
}
