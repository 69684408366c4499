#pragma once

// Decoder outputs in ego-frame meters, shared by losses, metrics and the
// model.

#include <array>
#include <vector>

#include "augmap/map_core.hpp"

namespace augmap {

using ClassLogits = std::array<double, kNumClasses + 1>;

struct InstancePrediction {
  std::vector<Point2> points;
  ClassLogits class_logits{};
  /// Frame t-1 geometry predicted in frame t coordinates; empty when
  /// temporal mode is off.
  std::vector<Point2> aux_points;
};

struct MapPrediction {
  std::vector<InstancePrediction> instances;
};

/// Numerically stable softmax over the C+1 logits.
ClassLogits softmax(const ClassLogits& logits);

}  // namespace augmap
