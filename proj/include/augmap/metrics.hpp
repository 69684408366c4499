#pragma once

// Chamfer-threshold average precision for vector maps and per-class IoU
// for rasters.

#include <array>
#include <optional>
#include <vector>

#include "augmap/map_core.hpp"
#include "augmap/map_io.hpp"
#include "augmap/prediction.hpp"

namespace augmap {

struct EvalConfig {
  std::vector<double> thresholds{0.5, 1.0, 1.5};
  int n_samples = 100;
  double iou_binarize = 0.5;

  void validate() const;
};

struct ScoredPolyline {
  int frame = 0;
  int instance = 0;
  MapClass cls = MapClass::Div;
  std::vector<Point2> points;
  double confidence = 0.0;
};

/// Keeps predictions whose argmax over all C+1 classes is a real class;
/// the label is that class and the confidence 1 - p(empty).
std::vector<ScoredPolyline> score_predictions(const MapPrediction& pred, int frame);

/// AP of one class. `gts[f]` holds frame f's GT polylines of that class.
/// Returns nullopt when there are no GT instances at all. Predictions
/// with zero confidence are ignored.
std::optional<double> average_precision(const std::vector<ScoredPolyline>& preds,
                                        const std::vector<std::vector<Polyline>>& gts, double tau,
                                        int n_samples = 100);

struct MapScore {
  std::array<std::optional<double>, kNumClasses> ap;  // averaged over thresholds
  double mAP = 0.0;
  /// ap_at[t][c]: AP at thresholds[t].
  std::vector<std::array<std::optional<double>, kNumClasses>> ap_at;
};

/// `preds` may mix classes and frames; `gts[f]` is frame f's map.
MapScore map_score(const std::vector<ScoredPolyline>& preds, const std::vector<VectorMap>& gts,
                   const EvalConfig& cfg);

/// Mean of the present entries; 0 when none is present.
double mean_present(const std::array<std::optional<double>, kNumClasses>& v);

struct IouResult {
  std::array<std::optional<double>, kNumClasses> iou;
  double mIoU = 0.0;
};

/// Probabilities are binarized at `threshold`; classes whose union is
/// empty are absent.
IouResult iou(const RasterMap& prob, const RasterMap& gt, double threshold = 0.5);

/// Dataset-level IoU from summed intersections and unions.
class IouAccumulator {
 public:
  void add(const RasterMap& prob, const RasterMap& gt, double threshold = 0.5);
  IouResult result() const;

 private:
  std::array<long long, kNumClasses> inter_{};
  std::array<long long, kNumClasses> uni_{};
};

/// {range, thresholds, per_class:{AP_*, IoU_*}, mAP, mIoU, n_frames}.
json eval_report(const GridSpec& grid, const EvalConfig& cfg, const MapScore& m, const IouResult& r, int n_frames);

}  // namespace augmap
