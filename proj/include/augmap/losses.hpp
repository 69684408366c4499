#pragma once

// Set-prediction losses: bipartite matching, permutation-minimized line
// loss, focal classification, auxiliary transformation loss and Dice.
// Every loss returns its gradient alongside the value.

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "augmap/map_core.hpp"
#include "augmap/prediction.hpp"

namespace augmap {

struct LossWeights {
  double line = 50.0;   // lambda1
  double cls = 5.0;     // lambda2
  double trans = 0.1;   // lambda3

  void validate() const;
};

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

/// Smooth L1 transition point, meters.
inline constexpr double kSmoothL1Beta = 1.0;

double smooth_l1(double d, double beta = kSmoothL1Beta);
double smooth_l1_grad(double d, double beta = kSmoothL1Beta);

/// An element of the permutation group: point j of the prediction is
/// compared against point index(j) of the target.
struct PointOrder {
  int shift = 0;
  bool reversed = false;

  int index(int j, int n) const;
};

/// Identity and reversal for open lines; every cyclic shift in both
/// directions for closed loops. Identity comes first.
std::vector<PointOrder> permutation_group(int n, bool closed);

struct LineLossResult {
  double value = 0.0;
  PointOrder order;
  std::vector<Point2> grad;  // d value / d pred
};

/// min over the group of (1/Np) sum_j smoothL1(pred_j - gt_order(j)), with
/// smooth L1 summed over both coordinates. Ties keep the earliest order.
LineLossResult line_loss(const std::vector<Point2>& pred, const std::vector<Point2>& gt, bool closed);

struct FocalResult {
  double value = 0.0;
  ClassLogits grad{};
};

/// -alpha_t (1 - p_t)^gamma log p_t over a softmax; alpha applies to real
/// classes and 1 - alpha to the empty class.
FocalResult focal_class_loss(const ClassLogits& logits, int target, const FocalParams& fp = {});

struct TransformLossResult {
  double value = 0.0;
  std::vector<Point2> grad;
};

/// Sum over points of smooth L1 between aux points and the transformed
/// previous-frame target.
TransformLossResult transform_loss(const std::vector<Point2>& aux, const std::vector<Point2>& target);

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (prediction, gt), sorted by prediction
  std::vector<int> unmatched_preds;
  double cost = 0.0;

  /// GT index assigned to each prediction, -1 for unmatched.
  std::vector<int> gt_of_pred(int n_preds) const;
};

/// Minimum-cost assignment of every row to a distinct column. Rows must
/// not outnumber columns. Among equal-cost optima the one whose
/// per-column row sequence is lexicographically smallest is returned
/// (unassigned columns order after every row). Returns row_of_col.
std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost_by_row);

/// cost(i, j) = w.line * L_line(pred_i, gt_j) + w.cls * (-log p_i(class_j)).
/// Every GT polyline must already carry as many points as the predictions.
Assignment match_instances(const MapPrediction& pred, const std::vector<Polyline>& gt, const LossWeights& w);

/// GT polylines resampled to `n_points`.
std::vector<Polyline> resample_targets(const VectorMap& gt, int n_points);

struct VectorLossResult {
  double total = 0.0;
  // Weighted components; total = line + cls + trans.
  double line = 0.0;
  double cls = 0.0;
  double trans = 0.0;
  // Unweighted sums over instances.
  double line_sum = 0.0;
  double cls_sum = 0.0;
  double trans_sum = 0.0;
  Assignment assignment;
  std::vector<InstancePrediction> grad;  // same shape as the prediction
};

/// Matched pairs contribute line, class and (when aux points and a target
/// exist) transformation terms; unmatched predictions contribute the
/// class term for the empty class. `aux_targets[j]`, when present and non
/// empty, is GT j's previous-frame geometry in current coordinates with
/// the same point count.
VectorLossResult vector_loss(const MapPrediction& pred, const VectorMap& gt, const LossWeights& w,
                             const FocalParams& fp = {},
                             const std::vector<std::vector<Point2>>* aux_targets = nullptr);

inline constexpr double kDiceEps = 1e-5;

/// Mean over channels of 1 - (2 sum pg + eps) / (sum p^2 + sum g^2 + eps).
/// Arrays are channel-major with `plane` elements per channel. `grad`,
/// when non-empty, receives d loss / d p.
template <class T>
double dice_loss(std::span<const T> p, std::span<const T> g, int channels, std::span<T> grad = {});

}  // namespace augmap
