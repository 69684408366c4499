#pragma once

// Run configuration, training loop, evaluation, ablation suites, latent
// analysis and reporting.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "augmap/latent_analysis.hpp"
#include "augmap/losses.hpp"
#include "augmap/metrics.hpp"
#include "augmap/model.hpp"
#include "augmap/scenegen.hpp"

namespace augmap {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 4;
  nn::AdamWConfig optim;
  double min_lr_ratio = 0.01;
  int val_every = 1;  // epochs between validation passes; 0 disables
  int log_every = 1;  // steps between loss log lines
};

struct AnalysisConfig {
  int pca_k = 3;
  int bins = 10;
  std::size_t silhouette_max_cells = 2000;
  std::uint64_t silhouette_seed = 0;
  std::vector<int> figure_scenes = {0, 1, 2};
};

struct AblateConfig {
  std::vector<std::uint64_t> seeds = {17, 42, 1337};
  /// Extent multipliers for the range suite; the cell count stays fixed.
  std::vector<double> range_scales = {1.0, 2.0};
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  /// Built dataset directory; empty means generate from `data` in memory.
  std::filesystem::path dataset_path;
  DatasetConfig data;
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  FocalParams focal;
  double raster_weight = 1.0;
  EvalConfig eval;
  AnalysisConfig analysis;
  AblateConfig ablate;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
  std::uint64_t require_seed() const;
};

/// Applies one `key = value` setting. Throws on unknown keys or bad values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// Flat `key = value` text with `#` comments.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);
/// Every key with its current value, in documentation order.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
std::string config_text(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

/// Loads `dataset_path` when set, else generates the dataset in memory.
Dataset obtain_dataset(const RunConfig& cfg);

/// A frame with everything training and evaluation need.
struct PreparedFrame {
  const Observation* observation = nullptr;
  const Observation* prev_observation = nullptr;
  EgoTransform transform = EgoTransform::identity();
  const VectorMap* gt = nullptr;
  RasterMap gt_raster;
  /// Previous-frame geometry in current coordinates, one per GT polyline,
  /// point-aligned with the resampled GT.
  std::vector<std::vector<Point2>> aux_targets;
};

struct PreparedScene {
  std::string id;
  std::vector<PreparedFrame> frames;  // frames usable under the config
};

/// Frames from 0 (or 1 in temporal mode). `scenes` must outlive the result.
std::vector<PreparedScene> prepare_split(const std::vector<SceneRecord>& scenes, const ModelConfig& model);

/// Same-class previous-frame polyline with the smallest Chamfer distance,
/// transformed into the current frame, resampled to `n_points` and ordered
/// like `gt_resampled`. Falls back to `gt_resampled` when the class is
/// absent from the previous frame.
std::vector<Point2> aux_target(const Polyline& gt_resampled, const VectorMap& prev_map, const EgoTransform& prev_to_cur,
                               int n_points);

struct SceneScore {
  std::string id;
  double mAP = 0.0;
};

struct EvalOutcome {
  json report;
  MapScore score;
  IouResult iou;
  bool has_raster = false;
  std::vector<SceneScore> per_scene;
};

EvalOutcome evaluate(Model<float>& model, const std::vector<PreparedScene>& scenes, const RunConfig& cfg);

struct StepLog {
  long step = 0;
  double total = 0, line = 0, cls = 0, trans = 0, dice = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOutcome {
  std::unique_ptr<Model<float>> model;
  json record;
  double final_val_map = 0.0;
  std::optional<double> best_val_map;
  std::filesystem::path final_checkpoint, best_checkpoint;
};

/// Trains from scratch. With a non-empty `out` the loss log, checkpoints
/// and run record are written there.
TrainOutcome train(const RunConfig& cfg, const Dataset& data, const std::filesystem::path& out);

/// Loads a checkpoint whose stored model config replaces cfg.model.
std::unique_ptr<Model<float>> load_model(const std::filesystem::path& checkpoint, RunConfig& cfg);

struct AblationRow {
  std::string name;
  RunConfig cfg;
};

struct RowResult {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<double> map, miou;
  std::vector<std::array<double, kNumClasses>> ap;
  std::vector<std::string> failures;
  bool failed() const { return !failures.empty(); }
};

std::vector<std::string> ablation_suites();
/// Row configurations of a suite derived from `base`.
std::vector<AblationRow> suite_rows(const std::string& suite, const RunConfig& base);
/// Trains every row on every configured seed. Rows that fail keep their
/// error and the suite continues.
std::vector<RowResult> run_ablation(const std::string& suite, const RunConfig& base, const std::filesystem::path& out,
                                    const std::function<void(const std::string&)>& log = {});
std::string ablation_csv(const std::vector<RowResult>& rows);
std::string ablation_text(const std::vector<RowResult>& rows);

struct SceneAnalysis {
  std::string id;
  std::optional<double> silhouette;
  double mi = 0.0;
  double variance = 0.0;
  double mAP = 0.0;
};

struct AnalysisResult {
  std::vector<SceneAnalysis> scenes;
  json report;
};

/// Per-scene statistics on the grid feeding the vector decoder, averaged
/// over the scene's usable frames. With `figures_dir` set, figures of the
/// last frame of each scene in cfg.analysis.figure_scenes are written.
AnalysisResult analyze_latents(Model<float>& model, const std::vector<PreparedScene>& scenes,
                               const std::vector<SceneScore>& scores, const RunConfig& cfg,
                               const std::filesystem::path& figures_dir = {});

/// Welch tests of a > b on per-scene MI and Silhouette.
json compare_analyses(const AnalysisResult& a, const AnalysisResult& b);

/// Raster and vector gradient coverage of the latent grids for one frame.
struct Coverage {
  std::optional<double> raster;  // absent without a raster branch
  double vector = 0.0;
};
Coverage gradient_coverage(Model<float>& model, const PreparedFrame& frame, const RunConfig& cfg);

/// Markdown summary of every artifact found under `dir`.
std::string build_report(const std::filesystem::path& dir);

/// Records produced files in `dir`/manifest.json.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const json& extra = json::object());

}  // namespace augmap
