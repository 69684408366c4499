#pragma once

// The augmented map network: BEV encoder, optional temporal fusion, raster
// decoder and encoder forming the augmentation branch, latent CNNs and the
// vector decoder. Gradient stops are applied in the backward pass.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "augmap/decoder.hpp"
#include "augmap/map_core.hpp"
#include "augmap/map_io.hpp"
#include "augmap/nn.hpp"
#include "augmap/prediction.hpp"

namespace augmap {

struct AblationConfig {
  bool use_augmentation = false;
  bool stop_grad_d = false;  // raster branch reads a detached B_enc
  bool stop_grad_e = false;  // e_raster reads detached raster probabilities
  bool oracle = false;       // e_raster reads the GT raster
  int cnn1_layers = 0;
  int cnn2_layers = 0;
  int kernel = 3;
  bool use_temporal = false;

  void validate() const;
};

json to_json(const AblationConfig& a);
AblationConfig ablation_from_json(const json& j);

struct ModelConfig {
  GridSpec grid = GridSpec::desk();
  int obs_channels = kNumClasses;
  int dim = 64;
  /// e_BEV widths before the final layer, which always outputs `dim`.
  std::vector<int> ebev_channels = {16, 32, 32};
  int queries = 25;
  int points = 8;
  int offsets = 4;
  int decoder_layers = 2;
  int ffn_hidden = 128;
  AblationConfig ablation;

  void validate() const;
  std::vector<int> d_raster_channels() const { return {dim / 2, dim / 4, dim / 8, kNumClasses}; }
  std::vector<int> e_raster_channels() const { return {dim / 8, dim / 4, dim / 2, dim}; }
  nn::DecoderConfig decoder() const;
};

json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const json& j);

struct FrameInput {
  const RasterMap* observation = nullptr;
  /// Needed for oracle mode; ignored otherwise.
  const RasterMap* gt_raster = nullptr;
  /// Temporal mode: the previous observation and the previous-to-current
  /// ego transform.
  const RasterMap* prev_observation = nullptr;
  EgoTransform transform = EgoTransform::identity();
};

/// Channel-major rasters stacked into a C x (n*H*W) tensor.
template <class T>
nn::Tensor<T> stack_rasters(const std::vector<const RasterMap*>& rasters) {
  if (rasters.empty()) throw std::invalid_argument("stack_rasters: empty batch");
  const GridSpec& g = rasters[0]->grid;
  const int C = rasters[0]->channels, HW = g.cells();
  nn::Tensor<T> t(C, static_cast<int>(rasters.size()), g.height, g.width);
  for (std::size_t b = 0; b < rasters.size(); ++b) {
    const RasterMap& r = *rasters[b];
    if (r.grid != g || r.channels != C) throw std::invalid_argument("stack_rasters: mixed raster shapes");
    for (int c = 0; c < C; ++c)
      for (int p = 0; p < HW; ++p) t.m(c, static_cast<Eigen::Index>(b) * HW + p) = static_cast<T>(r.data[c * HW + p]);
  }
  return t;
}

/// One sample of a tensor as a channel-major grid.
template <class T>
std::vector<float> sample_values(const nn::Tensor<T>& t, int b) {
  const int HW = t.h * t.w;
  std::vector<float> out(static_cast<std::size_t>(t.c) * HW);
  for (int c = 0; c < t.c; ++c)
    for (int p = 0; p < HW; ++p) out[static_cast<std::size_t>(c) * HW + p] = static_cast<float>(t.m(c, b * HW + p));
  return out;
}

/// Bilinear inverse-mapping warp of a previous-frame grid into the current
/// frame; taps outside the previous grid read zero.
struct WarpTaps {
  std::vector<std::array<int, 4>> idx;
  std::vector<std::array<double, 4>> w;
};
WarpTaps warp_taps(const GridSpec& grid, const EgoTransform& prev_to_cur);

template <class T>
nn::Mat<T> apply_warp(const WarpTaps& taps, const nn::Mat<T>& prev) {
  nn::Mat<T> out = nn::Mat<T>::Zero(prev.rows(), prev.cols());
  for (std::size_t p = 0; p < taps.idx.size(); ++p)
    for (int k = 0; k < 4; ++k)
      if (taps.idx[p][k] >= 0 && taps.w[p][k] != 0.0) out.col(p) += static_cast<T>(taps.w[p][k]) * prev.col(taps.idx[p][k]);
  return out;
}

template <class T>
struct ForwardOutput {
  std::vector<std::vector<nn::DecoderLayerOutput<T>>> decoded;  // [sample][layer]
  nn::Tensor<T> raster_logits;  // empty without augmentation or in oracle mode
  nn::Tensor<T> raster_probs;   // GT in oracle mode
  nn::Tensor<T> b_enc, b_align, b_aug, b_vector;
};

template <class T>
struct BackwardTaps {
  nn::Tensor<T> d_vector_input;  // d loss / d B_vector
  nn::Tensor<T> d_raster_input;  // d loss / d (d_raster input)
};

inline constexpr const char* kParamGroups[] = {"e_bev", "temporal", "d_raster", "e_raster", "cnn1", "cnn2", "decoder"};

template <class T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const AblationConfig& a = cfg.ablation;
    std::vector<int> eb = cfg.ebev_channels;
    eb.push_back(cfg.dim);
    e_bev_ = nn::ConvStack<T>("e_bev", "e_bev", cfg.obs_channels, eb, 3, false, rng);
    if (a.use_temporal) gate_ = nn::Conv2d<T>("temporal.gate", "temporal", 2 * cfg.dim, cfg.dim, 3, true, rng);
    if (a.use_augmentation) {
      d_raster_ = nn::ConvStack<T>("d_raster", "d_raster", cfg.dim, cfg.d_raster_channels(), 3, true, rng);
      e_raster_ = nn::ConvStack<T>("e_raster", "e_raster", kNumClasses, cfg.e_raster_channels(), 3, true, rng);
    }
    cnn1_ = nn::ConvStack<T>("cnn1", "cnn1", cfg.dim, std::vector<int>(a.cnn1_layers, cfg.dim), a.kernel, false, rng);
    cnn2_ = nn::ConvStack<T>("cnn2", "cnn2", cfg.dim, std::vector<int>(a.cnn2_layers, cfg.dim), a.kernel, false, rng);
    decoder_ = nn::DeformableDecoder<T>(cfg.decoder(), rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const nn::DeformableDecoder<T>& decoder() const { return decoder_; }

  nn::ParamList<T> params() {
    nn::ParamList<T> out;
    e_bev_.params(out);
    if (cfg_.ablation.use_temporal) gate_.params(out);
    d_raster_.params(out);
    e_raster_.params(out);
    cnn1_.params(out);
    cnn2_.params(out);
    decoder_.params(out);
    return out;
  }

  std::vector<nn::BatchNorm<T>*> norms() {
    std::vector<nn::BatchNorm<T>*> out;
    for (auto* s : {&e_bev_, &d_raster_, &e_raster_, &cnn1_, &cnn2_})
      for (auto* n : s->norms()) out.push_back(n);
    return out;
  }

  ForwardOutput<T> forward(const std::vector<FrameInput>& batch, bool training) {
    if (batch.empty()) throw std::invalid_argument("forward: empty batch");
    const AblationConfig& a = cfg_.ablation;
    const int n = static_cast<int>(batch.size());
    std::vector<const RasterMap*> obs;
    for (const auto& f : batch) {
      if (!f.observation) throw std::invalid_argument("forward: missing observation");
      if (f.observation->grid != cfg_.grid || f.observation->channels != cfg_.obs_channels)
        throw std::invalid_argument("forward: observation shape does not match the model config");
      obs.push_back(f.observation);
    }
    if (a.use_temporal)
      for (const auto& f : batch) {
        if (!f.prev_observation) throw std::invalid_argument("forward: temporal mode needs the previous observation");
        obs.push_back(f.prev_observation);
      }
    if (a.oracle)
      for (const auto& f : batch)
        if (!f.gt_raster || f.gt_raster->grid != cfg_.grid)
          throw std::invalid_argument("forward: oracle mode needs a GT raster per frame");
    training_ = training;
    batch_ = n;

    ForwardOutput<T> out;
    nn::Tensor<T> enc = e_bev_.forward(stack_rasters<T>(obs), training);
    const int HW = cfg_.grid.cells();
    if (a.use_temporal) {
      nn::Tensor<T> cur(cfg_.dim, n, cfg_.grid.height, cfg_.grid.width), warped = cur;
      cur.m = enc.m.leftCols(static_cast<Eigen::Index>(n) * HW);
      for (int b = 0; b < n; ++b) {
        const WarpTaps taps = warp_taps(cfg_.grid, batch[b].transform);
        warped.m.middleCols(static_cast<Eigen::Index>(b) * HW, HW) =
            apply_warp<T>(taps, enc.m.middleCols(static_cast<Eigen::Index>(n + b) * HW, HW));
      }
      nn::Tensor<T> cat(2 * cfg_.dim, n, cfg_.grid.height, cfg_.grid.width);
      cat.m.topRows(cfg_.dim) = warped.m;
      cat.m.bottomRows(cfg_.dim) = cur.m;
      gate_z_ = gate_.forward(cat).m.unaryExpr([](T v) { return static_cast<T>(nn::sigmoid(static_cast<double>(v))); });
      fuse_diff_ = cur.m - warped.m;
      out.b_enc = cur;
      out.b_enc.m = warped.m + gate_z_.cwiseProduct(fuse_diff_);
    } else {
      out.b_enc = std::move(enc);
    }

    if (a.use_augmentation) {
      if (a.oracle) {
        std::vector<const RasterMap*> gts;
        for (const auto& f : batch) gts.push_back(f.gt_raster);
        out.raster_probs = stack_rasters<T>(gts);
      } else {
        out.raster_logits = d_raster_.forward(out.b_enc, training);
        out.raster_probs = out.raster_logits;
        out.raster_probs.m =
            out.raster_logits.m.unaryExpr([](T v) { return static_cast<T>(nn::sigmoid(static_cast<double>(v))); });
      }
      probs_ = out.raster_probs.m;
    }
    out.b_align = cnn1_.forward(out.b_enc, training);
    out.b_aug = out.b_align;
    if (a.use_augmentation) out.b_aug.m += e_raster_.forward(out.raster_probs, training).m;
    out.b_vector = cnn2_.forward(out.b_aug, training);
    out.decoded = decoder_.forward(out.b_vector);
    return out;
  }

  /// Backpropagates the vector loss (decoder output gradients) and the
  /// raster loss (gradient w.r.t. raster probabilities); either may be null.
  BackwardTaps<T> backward(const std::vector<std::vector<nn::DecoderLayerGrad<T>>>* vector_grads,
                           const nn::Tensor<T>* raster_prob_grads) {
    const AblationConfig& a = cfg_.ablation;
    BackwardTaps<T> taps;
    nn::Tensor<T> d_enc;
    bool have_enc = false;
    nn::Mat<T> d_probs;
    bool have_probs = false;

    if (vector_grads) {
      taps.d_vector_input = decoder_.backward(*vector_grads);
      const nn::Tensor<T> d_aug = cnn2_.backward(taps.d_vector_input);
      if (a.use_augmentation) {
        const bool into_probs = !a.stop_grad_e && !a.oracle;
        nn::Tensor<T> dp = e_raster_.backward(d_aug, into_probs);
        if (into_probs) d_probs = std::move(dp.m), have_probs = true;
      }
      d_enc = cnn1_.backward(d_aug);
      have_enc = true;
    }
    if (raster_prob_grads && a.use_augmentation && !a.oracle) {
      if (have_probs) {
        d_probs += raster_prob_grads->m;
      } else {
        d_probs = raster_prob_grads->m;
        have_probs = true;
      }
    }
    if (have_probs) {
      nn::Tensor<T> d_logits(kNumClasses, batch_, cfg_.grid.height, cfg_.grid.width);
      d_logits.m = d_probs.cwiseProduct(probs_.cwiseProduct((1 - probs_.array()).matrix()));
      taps.d_raster_input = d_raster_.backward(d_logits, true);
      if (!a.stop_grad_d) {
        if (have_enc) {
          d_enc.m += taps.d_raster_input.m;
        } else {
          d_enc = taps.d_raster_input;
          have_enc = true;
        }
      }
    }
    if (!have_enc) return taps;

    const int HW = cfg_.grid.cells();
    nn::Tensor<T> d_ebev;
    if (a.use_temporal) {
      // out = warp + z * (cur - warp); the warped previous frame is detached.
      const nn::Mat<T> dz = d_enc.m.cwiseProduct(fuse_diff_);
      nn::Tensor<T> d_pre(cfg_.dim, batch_, cfg_.grid.height, cfg_.grid.width);
      d_pre.m = dz.cwiseProduct(gate_z_.cwiseProduct((1 - gate_z_.array()).matrix()));
      const nn::Tensor<T> d_cat = gate_.backward(d_pre, true);
      d_ebev = nn::Tensor<T>(cfg_.dim, 2 * batch_, cfg_.grid.height, cfg_.grid.width);
      d_ebev.m.leftCols(static_cast<Eigen::Index>(batch_) * HW) =
          d_enc.m.cwiseProduct(gate_z_) + d_cat.m.bottomRows(cfg_.dim);
    } else {
      d_ebev = std::move(d_enc);
    }
    e_bev_.backward(d_ebev, false);
    return taps;
  }

  /// Sum of squared gradients per parameter group.
  std::map<std::string, double> group_grad_sq() {
    std::map<std::string, double> out;
    for (const char* g : kParamGroups) out[g] = 0.0;
    for (auto* p : params()) out[p->group] += static_cast<double>(p->grad.template cast<double>().squaredNorm());
    return out;
  }

  /// Predictions of the last decoder layer for sample `b`.
  MapPrediction prediction(const ForwardOutput<T>& out, int b) const {
    const auto& l = out.decoded.at(b).back();
    MapPrediction p;
    for (int i = 0; i < cfg_.queries; ++i) {
      InstancePrediction inst;
      inst.points = decoder_.to_points(l.point_logits, i);
      for (int c = 0; c <= kNumClasses; ++c) inst.class_logits[c] = static_cast<double>(l.class_logits(c, i));
      if (cfg_.ablation.use_temporal) inst.aux_points = decoder_.to_points(l.aux_logits, i);
      p.instances.push_back(std::move(inst));
    }
    return p;
  }

  MapPrediction layer_prediction(const ForwardOutput<T>& out, int b, int layer) const {
    ForwardOutput<T> view;
    view.decoded = {{out.decoded.at(b).at(layer)}};
    return prediction(view, 0);
  }

 private:
  ModelConfig cfg_;
  nn::ConvStack<T> e_bev_, d_raster_, e_raster_, cnn1_, cnn2_;
  nn::Conv2d<T> gate_;
  nn::DeformableDecoder<T> decoder_;
  bool training_ = false;
  int batch_ = 0;
  nn::Mat<T> probs_, gate_z_, fuse_diff_;
};

/// Decoder output gradient from per-instance loss gradients in meters.
template <class T>
nn::DecoderLayerGrad<T> to_layer_grad(const std::vector<InstancePrediction>& grad, int points, bool with_aux) {
  const int N = static_cast<int>(grad.size());
  nn::DecoderLayerGrad<T> g;
  g.points.resize(2 * points, N);
  g.classes.resize(kNumClasses + 1, N);
  if (with_aux) g.aux = nn::Mat<T>::Zero(2 * points, N);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < points; ++j) {
      g.points(2 * j, i) = static_cast<T>(grad[i].points[j].x);
      g.points(2 * j + 1, i) = static_cast<T>(grad[i].points[j].y);
      if (with_aux && !grad[i].aux_points.empty()) {
        g.aux(2 * j, i) = static_cast<T>(grad[i].aux_points[j].x);
        g.aux(2 * j + 1, i) = static_cast<T>(grad[i].aux_points[j].y);
      }
    }
    for (int c = 0; c <= kNumClasses; ++c) g.classes(c, i) = static_cast<T>(grad[i].class_logits[c]);
  }
  return g;
}

/// Mean over the batch of per-sample Dice losses; fills `grad` (same shape
/// as `probs`) when given.
template <class T>
double batch_dice(const nn::Tensor<T>& probs, const std::vector<const RasterMap*>& gts, nn::Tensor<T>* grad);

/// RasterMap view of one sample of a probability tensor.
template <class T>
RasterMap to_raster(const nn::Tensor<T>& t, int b, const GridSpec& grid) {
  RasterMap r(grid, t.c);
  r.data = sample_values(t, b);
  return r;
}

/// Latent grid of one sample, for analysis.
struct LatentGrid;
template <class T>
LatentGrid to_latent(const nn::Tensor<T>& t, int b, const GridSpec& grid);

inline constexpr int kCheckpointVersion = 1;

/// Writes config, parameters and normalization statistics.
void save_checkpoint(const std::filesystem::path& path, Model<float>& model, const json& extra = json::object());
/// Reads a checkpoint header without building the model.
json read_checkpoint_header(const std::filesystem::path& path);
/// Loads parameters into `model`; throws when the stored config differs.
void load_checkpoint(const std::filesystem::path& path, Model<float>& model);

}  // namespace augmap
