#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cscope/checkpoint.hpp"
#include "cscope/error.hpp"
#include "cscope/metrics.hpp"
#include "cscope/optim.hpp"
#include "cscope/rng.hpp"
#include "cscope/tensor.hpp"
#include "cscope/volume_ops.hpp"

namespace cscope {

enum class ModelKind { vanilla, sae, latent_classifier, cnn3d };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::vanilla: return "vanilla";
    case ModelKind::sae: return "sae";
    case ModelKind::latent_classifier: return "latent_classifier";
    case ModelKind::cnn3d: return "cnn3d";
  }
  return "?";
}

enum class Activation { none, relu, selu, sigmoid };

struct LayerDef {
  enum class Kind { dense, conv, pool, bnorm, dropout, flatten };
  Kind kind = Kind::dense;
  int64_t in = 0, out = 0;   // dense dims or conv channels
  int64_t kernel = 3;        // conv kernel edge
  int64_t pool = 2;          // pooling window edge
  Activation act = Activation::none;
  double rate = 0.0;         // dropout rate
};

/// Declarative model description. Layer shapes chain; the final classifier
/// layer is a single sigmoid unit for every classifier kind.
struct ModelSpec {
  ModelKind kind = ModelKind::vanilla;
  Shape input_shape;                 // per-sample: {F} or {C,D,H,W}
  std::vector<LayerDef> layers;
  uint64_t seed = 0;
  double l1_coeff = 0.0;             // SAE latent penalty
  size_t encoder_end = 0;            // SAE: layers [0, encoder_end) form the encoder
  int64_t latent_dim = 0;
  std::vector<Shape> stage_shapes;   // cnn3d: spatial dims after each conv / pool
  int64_t flatten_dim = 0;

  /// Widths through the dense stack: input dim plus each dense output.
  std::vector<int64_t> dense_widths() const {
    std::vector<int64_t> w;
    if (input_shape.size() == 1) w.push_back(input_shape[0]);
    for (const auto& l : layers)
      if (l.kind == LayerDef::Kind::dense) w.push_back(l.out);
    return w;
  }
};

namespace detail_models {

inline void push_mlp(std::vector<LayerDef>& layers, int64_t in, int64_t out, Activation act, double drop_after) {
  layers.push_back({LayerDef::Kind::dense, in, out, 0, 0, act, 0.0});
  if (drop_after > 0) layers.push_back({LayerDef::Kind::dropout, out, out, 0, 0, Activation::none, drop_after});
}

inline int64_t scaled_width(int64_t input_dim, int64_t base_width, int64_t min_width = 2) {
  const double ratio = static_cast<double>(base_width) / 9216.0;
  return std::max<int64_t>(min_width, std::llround(static_cast<double>(input_dim) * ratio));
}

}  // namespace detail_models

/// Dense classifier stack over the given widths, ReLU hidden layers with
/// dropout, one sigmoid output unit.
inline ModelSpec build_mlp(ModelKind kind, const std::vector<int64_t>& widths, double dropout_rate, uint64_t seed) {
  require(widths.size() >= 2, errc::shape_mismatch, "an MLP needs at least input and output widths");
  ModelSpec spec;
  spec.kind = kind;
  spec.seed = seed;
  spec.input_shape = {widths.front()};
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    detail_models::push_mlp(spec.layers, widths[i], widths[i + 1], last ? Activation::sigmoid : Activation::relu,
                            last ? 0.0 : dropout_rate);
  }
  return spec;
}

/// Flattened-connectome classifier: 9216 -> 213 -> 106 -> 53 -> 28 -> 1,
/// ReLU hidden layers, sigmoid output, dropout 0.3 between layers. The
/// hidden widths stay fixed when the input dimension differs.
inline ModelSpec build_vanilla(uint64_t seed, int64_t input_dim = 9216) {
  return build_mlp(ModelKind::vanilla, {input_dim, 213, 106, 53, 28, 1}, 0.3, seed);
}

/// Sparse autoencoder: 9216 -> 4096 -> 2048 -> 1024 latent and a mirrored
/// decoder, SeLU activations, L1 penalty 0.001 on latent activations. For
/// other input sizes the widths scale by the same 9:4:2:1 profile, with the
/// latent floored at 16 (narrower bottlenecks stop carrying class geometry)
/// and the funnel kept monotone.
inline ModelSpec build_sae(uint64_t seed, int64_t input_dim = 9216) {
  using detail_models::scaled_width;
  const int64_t latent = std::min(input_dim, std::max<int64_t>(scaled_width(input_dim, 1024, 1), 16));
  const int64_t h2 = std::max(scaled_width(input_dim, 2048), latent);
  const int64_t h1 = std::max(scaled_width(input_dim, 4096), h2);
  ModelSpec spec;
  spec.kind = ModelKind::sae;
  spec.seed = seed;
  spec.input_shape = {input_dim};
  spec.l1_coeff = 0.001;
  spec.latent_dim = latent;
  auto dense_layer = [&](int64_t in, int64_t out, Activation act) {
    spec.layers.push_back({LayerDef::Kind::dense, in, out, 0, 0, act, 0.0});
  };
  dense_layer(input_dim, h1, Activation::selu);
  dense_layer(h1, h2, Activation::selu);
  dense_layer(h2, latent, Activation::selu);
  spec.encoder_end = spec.layers.size();
  dense_layer(latent, h2, Activation::selu);
  dense_layer(h2, h1, Activation::selu);
  dense_layer(h1, input_dim, Activation::none);  // linear reconstruction
  return spec;
}

/// Classifier over SAE latents: 1024 -> 512 -> 128 -> 64 -> 32 -> 1 with
/// ReLU, dropout 0.3, sigmoid output.
inline ModelSpec build_latent_classifier(uint64_t seed, int64_t input_dim = 1024) {
  return build_mlp(ModelKind::latent_classifier, {input_dim, 512, 128, 64, 32, 1}, 0.3, seed);
}

/// Volumetric classifier: stages of [conv k3 + ReLU -> maxpool 2 -> batchnorm]
/// with 64/128/256 filters (as many stages as the input admits), then
/// flatten -> dense 512 + ReLU + dropout 0.3 -> dense 1 + sigmoid.
inline ModelSpec build_cnn3d(uint64_t seed, int64_t d = 61, int64_t h = 73, int64_t w = 61) {
  ModelSpec spec;
  spec.kind = ModelKind::cnn3d;
  spec.seed = seed;
  spec.input_shape = {1, d, h, w};
  int64_t channels = 1;
  for (int64_t filters : {int64_t{64}, int64_t{128}, int64_t{256}}) {
    if (d < 3 || h < 3 || w < 3) break;
    if (d - 2 < 2 || h - 2 < 2 || w - 2 < 2) break;  // pool must fit after the conv
    spec.layers.push_back({LayerDef::Kind::conv, channels, filters, 3, 0, Activation::relu, 0.0});
    d -= 2;
    h -= 2;
    w -= 2;
    spec.stage_shapes.push_back({d, h, w});
    spec.layers.push_back({LayerDef::Kind::pool, filters, filters, 0, 2, Activation::none, 0.0});
    d /= 2;
    h /= 2;
    w /= 2;
    spec.stage_shapes.push_back({d, h, w});
    spec.layers.push_back({LayerDef::Kind::bnorm, filters, filters, 0, 0, Activation::none, 0.0});
    channels = filters;
  }
  require(!spec.stage_shapes.empty(), errc::input_too_small, "input admits no conv stage");
  spec.flatten_dim = channels * d * h * w;
  spec.layers.push_back({LayerDef::Kind::flatten, spec.flatten_dim, spec.flatten_dim, 0, 0, Activation::none, 0.0});
  detail_models::push_mlp(spec.layers, spec.flatten_dim, 512, Activation::relu, 0.3);
  detail_models::push_mlp(spec.layers, 512, 1, Activation::sigmoid, 0.0);
  return spec;
}

/// Materialized model: parameters plus batch-norm running stats.
class Model {
public:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) { init_params(); }

  const ModelSpec& spec() const { return spec_; }

  bool has_batchnorm() const {
    for (const auto& l : spec_.layers)
      if (l.kind == LayerDef::Kind::bnorm) return true;
    return false;
  }

  std::vector<Tensor> trainable_params() { return params_in_range(0, layer_params_.size()); }

  /// Parameters of the SAE encoder half only.
  std::vector<Tensor> encoder_params() {
    require(spec_.kind == ModelKind::sae, errc::shape_mismatch, "encoder_params() is for SAE models");
    return params_in_range(0, spec_.encoder_end);
  }

  int64_t parameter_count() {
    int64_t n = 0;
    for (auto& t : trainable_params()) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& t : trainable_params()) t.zero_grad();
  }

  /// Full forward pass. The per-sample shape must match the spec exactly.
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) {
    validate_input(x);
    return run(x, mode, rng, 0, spec_.layers.size());
  }

  /// SAE encoder half.
  Tensor encode(const Tensor& x, Mode mode, Rng& rng) {
    require(spec_.kind == ModelKind::sae, errc::shape_mismatch, "encode() is for SAE models");
    validate_input(x);
    return run(x, mode, rng, 0, spec_.encoder_end);
  }

  /// SAE decoder half (input: latent activations).
  Tensor decode(const Tensor& latent, Mode mode, Rng& rng) {
    require(spec_.kind == ModelKind::sae, errc::shape_mismatch, "decode() is for SAE models");
    return run(latent, mode, rng, spec_.encoder_end, spec_.layers.size());
  }

  std::vector<std::pair<std::string, Tensor>> named_tensors() {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t i = 0; i < layer_params_.size(); ++i) {
      auto& lp = layer_params_[i];
      const std::string prefix = "layer" + std::to_string(i) + ".";
      if (lp.w.defined()) out.push_back({prefix + "w", lp.w});
      if (lp.b.defined()) out.push_back({prefix + "b", lp.b});
      if (lp.gamma.defined()) out.push_back({prefix + "gamma", lp.gamma});
      if (lp.beta.defined()) out.push_back({prefix + "beta", lp.beta});
      if (lp.bn_slot >= 0) {
        auto& stats = bn_stats_[static_cast<size_t>(lp.bn_slot)];
        out.push_back({prefix + "running_mean",
                       Tensor::from_values({static_cast<int64_t>(stats.mean.size())}, stats.mean)});
        out.push_back({prefix + "running_var",
                       Tensor::from_values({static_cast<int64_t>(stats.var.size())}, stats.var)});
      }
    }
    return out;
  }

  void save(const std::filesystem::path& path) { checkpoint::save(named_tensors(), path); }

  void load(const std::filesystem::path& path) {
    std::map<std::string, checkpoint::Record> by_name;
    for (auto& r : checkpoint::load(path)) by_name[r.name] = std::move(r);
    for (size_t i = 0; i < layer_params_.size(); ++i) {
      auto& lp = layer_params_[i];
      const std::string prefix = "layer" + std::to_string(i) + ".";
      auto restore = [&](const char* key, Tensor& t) {
        auto it = by_name.find(prefix + key);
        if (it == by_name.end()) fail(errc::truncated, "checkpoint is missing " + prefix + key);
        if (it->second.shape != t.shape())
          fail(errc::shape_mismatch, "checkpoint shape differs for " + prefix + key);
        t.values() = it->second.values;
      };
      if (lp.w.defined()) restore("w", lp.w);
      if (lp.b.defined()) restore("b", lp.b);
      if (lp.gamma.defined()) restore("gamma", lp.gamma);
      if (lp.beta.defined()) restore("beta", lp.beta);
      if (lp.bn_slot >= 0) {
        auto& stats = bn_stats_[static_cast<size_t>(lp.bn_slot)];
        auto rm = by_name.find(prefix + "running_mean");
        auto rv = by_name.find(prefix + "running_var");
        if (rm == by_name.end() || rv == by_name.end())
          fail(errc::truncated, "checkpoint is missing running stats for layer " + std::to_string(i));
        stats.mean = rm->second.values;
        stats.var = rv->second.values;
      }
    }
  }

private:
  struct LayerParams {
    Tensor w, b, gamma, beta;
    int bn_slot = -1;
  };

  std::vector<Tensor> params_in_range(size_t from, size_t to) {
    std::vector<Tensor> out;
    for (size_t i = from; i < to && i < layer_params_.size(); ++i) {
      auto& lp = layer_params_[i];
      if (lp.w.defined()) out.push_back(lp.w);
      if (lp.b.defined()) out.push_back(lp.b);
      if (lp.gamma.defined()) out.push_back(lp.gamma);
      if (lp.beta.defined()) out.push_back(lp.beta);
    }
    return out;
  }

  void validate_input(const Tensor& x) const {
    const Shape& xs = x.shape();
    const Shape& in = spec_.input_shape;
    bool ok = xs.size() == in.size() + 1;
    for (size_t i = 0; ok && i < in.size(); ++i) ok = xs[i + 1] == in[i];
    if (!ok)
      fail(errc::shape_mismatch, "input " + shape_string(xs) + " does not match model input " + shape_string(in) +
                                     " (plus batch axis)");
  }

  void init_params() {
    Rng rng(spec_.seed);
    layer_params_.resize(spec_.layers.size());
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
      const LayerDef& l = spec_.layers[i];
      auto& lp = layer_params_[i];
      switch (l.kind) {
        case LayerDef::Kind::dense: {
          lp.w = init_weight(rng, {l.in, l.out}, l.in, l.act);
          lp.b = Tensor::zeros({l.out}, true);
          break;
        }
        case LayerDef::Kind::conv: {
          const int64_t fan_in = l.in * l.kernel * l.kernel * l.kernel;
          lp.w = init_weight(rng, {l.out, l.in, l.kernel, l.kernel, l.kernel}, fan_in, l.act);
          lp.b = Tensor::zeros({l.out}, true);
          break;
        }
        case LayerDef::Kind::bnorm: {
          lp.gamma = Tensor::filled({l.out}, 1.0, true);
          lp.beta = Tensor::zeros({l.out}, true);
          lp.bn_slot = static_cast<int>(bn_stats_.size());
          bn_stats_.emplace_back(l.out);
          break;
        }
        default:
          break;
      }
    }
  }

  /// Kaiming-uniform fan-in init for ReLU-family layers, LeCun-normal for
  /// SeLU layers (needed for self-normalization).
  static Tensor init_weight(Rng& rng, Shape shape, int64_t fan_in, Activation act) {
    std::vector<double> v(static_cast<size_t>(shape_product(shape)));
    if (act == Activation::selu) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& x : v) x = rng.normal(0.0, sd);
    } else {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& x : v) x = rng.uniform(-bound, bound);
    }
    return Tensor::from_values(std::move(shape), std::move(v), true);
  }

  Tensor run(Tensor h, Mode mode, Rng& rng, size_t from, size_t to) {
    for (size_t i = from; i < to; ++i) {
      const LayerDef& l = spec_.layers[i];
      auto& lp = layer_params_[i];
      switch (l.kind) {
        case LayerDef::Kind::dense:
          h = dense(h, lp.w, lp.b);
          break;
        case LayerDef::Kind::conv:
          h = conv3d(h, lp.w, lp.b);
          break;
        case LayerDef::Kind::pool:
          h = maxpool3d(h, l.pool);
          break;
        case LayerDef::Kind::bnorm:
          h = batchnorm(h, lp.gamma, lp.beta, bn_stats_[static_cast<size_t>(lp.bn_slot)], mode);
          break;
        case LayerDef::Kind::dropout:
          h = dropout(h, l.rate, mode, rng);
          break;
        case LayerDef::Kind::flatten:
          h = reshape(h, {h.shape()[0], l.out});
          break;
      }
      switch (l.act) {
        case Activation::relu:
          h = relu(h);
          break;
        case Activation::selu:
          h = selu(h);
          break;
        case Activation::sigmoid:
          h = sigmoid(h);
          break;
        case Activation::none:
          break;
      }
    }
    return h;
  }

  ModelSpec spec_;
  std::vector<LayerParams> layer_params_;
  std::vector<BatchNormStats> bn_stats_;
};

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

/// In-memory dataset: per-sample flat values (matching sample_shape) + labels.
struct FeatureDataset {
  Shape sample_shape;
  std::vector<std::vector<double>> samples;
  std::vector<int> labels;

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
  int64_t feature_count() const { return shape_product(sample_shape); }
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  OptKind optimizer = OptKind::adam;
  double learning_rate = 0.001;
  double l1_coeff = -1.0;          // < 0: take the spec's value (SAE)
  bool augment = false;            // CNN: rotate_axial per batch
  bool augment_each_epoch = true;  // false: one fixed augmentation pass up front
  uint64_t seed = 0;

  void validate() const {
    require(epochs >= 1, errc::range_error, "epochs must be >= 1");
    require(batch_size >= 1, errc::range_error, "batch_size must be >= 1");
  }
};

struct TrainResult {
  std::vector<double> epoch_loss;
};

namespace detail_models {

inline Tensor assemble_batch(const FeatureDataset& ds, const std::vector<int>& idx, size_t begin, size_t count,
                             bool augment, Rng* aug_rng) {
  Shape bs{static_cast<int64_t>(count)};
  bs.insert(bs.end(), ds.sample_shape.begin(), ds.sample_shape.end());
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(shape_product(bs)));
  for (size_t i = 0; i < count; ++i) {
    const auto& s = ds.samples[static_cast<size_t>(idx[begin + i])];
    if (augment && ds.sample_shape.size() == 4) {
      // sample layout {1, D, H, W}; rotate in the (W, H) plane, the axial
      // plane of the originating volume
      const int64_t D = ds.sample_shape[1], H = ds.sample_shape[2], W = ds.sample_shape[3];
      Volume3D v(static_cast<int>(W), static_cast<int>(H), static_cast<int>(D));
      v.data = s;
      Volume3D r = rotate_axial(v, 0.0, aug_rng);
      flat.insert(flat.end(), r.data.begin(), r.data.end());
    } else {
      flat.insert(flat.end(), s.begin(), s.end());
    }
  }
  return Tensor::from_values(std::move(bs), std::move(flat));
}

inline std::vector<double> batch_labels(const FeatureDataset& ds, const std::vector<int>& idx, size_t begin,
                                        size_t count) {
  std::vector<double> y(count);
  for (size_t i = 0; i < count; ++i) y[i] = ds.labels[static_cast<size_t>(idx[begin + i])];
  return y;
}

template <class LossFn>
TrainResult train_loop(Model& model, const FeatureDataset& ds, const TrainConfig& cfg, LossFn make_loss) {
  cfg.validate();
  require(ds.size() >= 1, errc::input_too_small, "empty training set");
  require(ds.feature_count() == shape_product(model.spec().input_shape), errc::shape_mismatch,
          "dataset features do not match the model input");

  Rng rng(cfg.seed);
  FeatureDataset fixed;  // one-shot augmentation copy
  const FeatureDataset* data = &ds;
  if (cfg.augment && !cfg.augment_each_epoch) {
    fixed = ds;
    for (auto& s : fixed.samples) {
      const int64_t D = ds.sample_shape[1], H = ds.sample_shape[2], W = ds.sample_shape[3];
      Volume3D v(static_cast<int>(W), static_cast<int>(H), static_cast<int>(D));
      v.data = s;
      s = rotate_axial(v, 0.0, &rng).data;
    }
    data = &fixed;
  }

  std::vector<Tensor> params = model.trainable_params();
  OptimizerState opt;
  opt.kind = cfg.optimizer;
  opt.learning_rate = cfg.learning_rate;

  std::vector<int> idx(static_cast<size_t>(data->size()));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);

  const size_t min_batch = model.has_batchnorm() ? 2 : 1;
  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(idx);
    double loss_sum = 0;
    int64_t seen = 0;
    for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t count = std::min(static_cast<size_t>(cfg.batch_size), idx.size() - at);
      if (count < min_batch) continue;  // batch-norm cannot take a single sample
      const bool aug = cfg.augment && cfg.augment_each_epoch;
      Tensor x = assemble_batch(*data, idx, at, count, aug, &rng);
      Tensor loss = make_loss(model, x, *data, idx, at, count, rng);
      model.zero_grad();
      loss.backward();
      optimizer_step(params, opt);
      loss_sum += loss.scalar() * static_cast<double>(count);
      seen += static_cast<int64_t>(count);
    }
    require(seen > 0, errc::batch_too_small, "no trainable batch in epoch");
    result.epoch_loss.push_back(loss_sum / static_cast<double>(seen));
  }
  return result;
}

}  // namespace detail_models

/// Binary cross-entropy training for the classifier kinds.
inline TrainResult train_classifier(Model& model, const FeatureDataset& ds, const TrainConfig& cfg) {
  for (int label : ds.labels) require(label == 0 || label == 1, errc::bad_label, "labels must be 0/1");
  require(ds.labels.size() == ds.samples.size(), errc::length_mismatch, "labels do not match samples");
  return detail_models::train_loop(
      model, ds, cfg,
      [](Model& m, Tensor& x, const FeatureDataset& data, const std::vector<int>& idx, size_t at, size_t count,
         Rng& rng) {
        Tensor p = m.forward(x, Mode::train, rng);
        return bce_loss(p, detail_models::batch_labels(data, idx, at, count));
      });
}

/// SAE stage 1: reconstruction MSE plus the latent L1 penalty.
inline TrainResult train_autoencoder(Model& model, const FeatureDataset& ds, const TrainConfig& cfg) {
  require(model.spec().kind == ModelKind::sae, errc::shape_mismatch, "train_autoencoder expects an SAE model");
  const double coeff = cfg.l1_coeff >= 0 ? cfg.l1_coeff : model.spec().l1_coeff;
  return detail_models::train_loop(
      model, ds, cfg,
      [coeff](Model& m, Tensor& x, const FeatureDataset&, const std::vector<int>&, size_t, size_t, Rng& rng) {
        Tensor latent = m.encode(x, Mode::train, rng);
        Tensor recon = m.decode(latent, Mode::train, rng);
        Tensor loss = mse_loss(recon, x);
        if (coeff > 0) loss = add(loss, l1_penalty(latent, coeff));
        return loss;
      });
}

/// SAE stage 2. The default freezes the encoder and trains the classifier on
/// precomputed latents; with fine_tune_encoder the gradient flows back into
/// the encoder and updates it alongside the classifier.
inline TrainResult train_latent_classifier(Model& sae, Model& clf, const FeatureDataset& ds, const TrainConfig& cfg,
                                           bool fine_tune_encoder = false);

struct EvalResult {
  MetricsReport metrics;
  std::vector<double> probabilities;
  std::vector<int> predictions;
};

/// Map a dataset through the SAE encoder (eval mode).
inline FeatureDataset encode_dataset(Model& sae, const FeatureDataset& ds, int batch_size = 32);

/// Eval-mode forward (dropout off, batch-norm running stats), threshold 0.5
/// with ties classified positive.
inline EvalResult evaluate_model(Model& model, const FeatureDataset& ds, int batch_size = 32) {
  EvalResult out;
  Rng rng(0);  // unused in eval mode
  std::vector<int> idx(static_cast<size_t>(ds.size()));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(batch_size)) {
    const size_t count = std::min(static_cast<size_t>(batch_size), idx.size() - at);
    Tensor x = detail_models::assemble_batch(ds, idx, at, count, false, nullptr);
    Tensor p = model.forward(x, Mode::eval, rng);
    for (size_t i = 0; i < count; ++i) {
      const double prob = p.values()[i];
      out.probabilities.push_back(prob);
      out.predictions.push_back(prob >= 0.5 ? 1 : 0);
    }
  }
  out.metrics = compute_metrics(out.predictions, ds.labels);
  return out;
}

inline TrainResult train_latent_classifier(Model& sae, Model& clf, const FeatureDataset& ds, const TrainConfig& cfg,
                                           bool fine_tune_encoder) {
  require(sae.spec().kind == ModelKind::sae, errc::shape_mismatch, "stage 2 needs an SAE front end");
  for (int label : ds.labels) require(label == 0 || label == 1, errc::bad_label, "labels must be 0/1");
  cfg.validate();
  require(ds.size() >= 1, errc::input_too_small, "empty training set");

  if (!fine_tune_encoder) {
    FeatureDataset latents = encode_dataset(sae, ds);
    return train_classifier(clf, latents, cfg);
  }

  Rng rng(cfg.seed);
  std::vector<Tensor> params = clf.trainable_params();
  for (auto& p : sae.encoder_params()) params.push_back(p);
  OptimizerState opt;
  opt.kind = cfg.optimizer;
  opt.learning_rate = cfg.learning_rate;

  std::vector<int> idx(static_cast<size_t>(ds.size()));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  const size_t min_batch = (sae.has_batchnorm() || clf.has_batchnorm()) ? 2 : 1;

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(idx);
    double loss_sum = 0;
    int64_t seen = 0;
    for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t count = std::min(static_cast<size_t>(cfg.batch_size), idx.size() - at);
      if (count < min_batch) continue;
      Tensor x = detail_models::assemble_batch(ds, idx, at, count, false, nullptr);
      Tensor latent = sae.encode(x, Mode::train, rng);
      Tensor p = clf.forward(latent, Mode::train, rng);
      Tensor loss = bce_loss(p, detail_models::batch_labels(ds, idx, at, count));
      sae.zero_grad();
      clf.zero_grad();
      loss.backward();
      optimizer_step(params, opt);
      loss_sum += loss.scalar() * static_cast<double>(count);
      seen += static_cast<int64_t>(count);
    }
    require(seen > 0, errc::batch_too_small, "no trainable batch in epoch");
    result.epoch_loss.push_back(loss_sum / static_cast<double>(seen));
  }
  return result;
}

inline FeatureDataset encode_dataset(Model& sae, const FeatureDataset& ds, int batch_size) {
  FeatureDataset out;
  out.sample_shape = {sae.spec().latent_dim};
  out.labels = ds.labels;
  Rng rng(0);
  std::vector<int> idx(static_cast<size_t>(ds.size()));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(batch_size)) {
    const size_t count = std::min(static_cast<size_t>(batch_size), idx.size() - at);
    Tensor x = detail_models::assemble_batch(ds, idx, at, count, false, nullptr);
    Tensor z = sae.encode(x, Mode::eval, rng);
    const int64_t L = sae.spec().latent_dim;
    for (size_t i = 0; i < count; ++i) {
      out.samples.emplace_back(z.values().begin() + static_cast<std::ptrdiff_t>(i) * L,
                               z.values().begin() + static_cast<std::ptrdiff_t>(i + 1) * L);
    }
  }
  return out;
}

}  // namespace cscope
