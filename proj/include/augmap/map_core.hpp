#pragma once

// Geometry primitives shared by every other module: the metric BEV grid,
// class-labelled polylines, per-class rasters and rigid ego transforms.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace augmap {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Map element classes. The numeric value doubles as the raster channel
/// index and as the class index used by the decoder heads.
enum class MapClass : int { Ped = 0, Div = 1, Bound = 2 };

inline constexpr int kNumClasses = 3;
/// Index of the "no object" class in a prediction's class logits.
inline constexpr int kEmptyClass = kNumClasses;

std::string_view class_name(MapClass c);
MapClass class_from_name(std::string_view name);

/// Metric extent of the perception range and its cell resolution.
/// Rows run along x (longitudinal), columns along y (lateral).
struct GridSpec {
  double x_min = -15.0;
  double x_max = 15.0;
  double y_min = -7.5;
  double y_max = 7.5;
  int height = 50;
  int width = 25;

  double cell_x() const { return (x_max - x_min) / height; }
  double cell_y() const { return (y_max - y_min) / width; }
  int cells() const { return height * width; }

  /// Throws std::invalid_argument when the spec violates its invariants.
  void validate() const;

  /// Continuous grid coordinates of a metric point (cell centres sit at
  /// integer + 0.5).
  double row_coord(double x) const { return (x - x_min) * height / (x_max - x_min); }
  double col_coord(double y) const { return (y - y_min) * width / (y_max - y_min); }
  Point2 cell_center(int row, int col) const;

  /// 30 m x 15 m at 0.6 m cells; the default training grid.
  static GridSpec desk();
  /// 60 m x 30 m at 100 x 50 cells.
  static GridSpec paper_scale();

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct CellIndex {
  int row = 0;
  int col = 0;

  friend bool operator==(const CellIndex&, const CellIndex&) = default;
  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

struct Polyline {
  MapClass cls = MapClass::Div;
  std::vector<Point2> points;
  /// Closed loops do not repeat their first point; closure is implicit.
  bool closed = false;

  void validate() const;
  double length() const;
};

struct VectorMap {
  std::vector<Polyline> polylines;

  std::size_t count(MapClass c) const;
};

/// Per-class occupancy layers stored channel-major: [channel][row][col].
struct RasterMap {
  GridSpec grid;
  int channels = kNumClasses;
  std::vector<float> data;

  RasterMap() = default;
  RasterMap(const GridSpec& g, int c);

  float& at(int c, int row, int col) {
    return data[(static_cast<std::size_t>(c) * grid.height + row) * grid.width + col];
  }
  float at(int c, int row, int col) const {
    return data[(static_cast<std::size_t>(c) * grid.height + row) * grid.width + col];
  }
  std::size_t plane() const { return static_cast<std::size_t>(grid.height) * grid.width; }
};

/// Rigid 4x4 homogeneous transform, row-major.
struct EgoTransform {
  std::array<double, 16> m{};

  static EgoTransform identity();
  /// Rotation about z by `yaw` followed by translation (tx, ty).
  static EgoTransform from_yaw_translation(double yaw, double tx, double ty);

  void validate() const;
  EgoTransform inverse() const;
  EgoTransform operator*(const EgoTransform& rhs) const;
  /// Lifts (x, y) to (x, y, 0, 1), transforms, and projects back to x, y.
  Point2 apply(Point2 p) const;

  double operator()(int r, int c) const { return m[r * 4 + c]; }
};

/// Floor binning with the max boundary clamped into the last cell.
/// Returns nullopt for points outside the grid extent; throws on
/// non-finite coordinates.
std::optional<CellIndex> world_to_grid(Point2 p, const GridSpec& grid);

/// Every cell containing at least one point of the segment, using the same
/// half-open binning as world_to_grid. Parts outside the grid are ignored.
std::vector<CellIndex> segment_cells(Point2 a, Point2 b, const GridSpec& grid);

bool point_in_polygon(Point2 p, const std::vector<Point2>& polygon);

/// Binary per-class raster. Open lines and closed non-crossing loops are
/// traced cell by cell and dilated to `line_width` cells; closed crossings
/// are filled by cell-centre containment.
RasterMap rasterize_map(const VectorMap& vmap, const GridSpec& grid, int line_width = 1);

/// `n` points equally spaced by arc length. Open lines keep both endpoints;
/// closed loops are sampled around the full perimeter without repeating
/// the start point.
Polyline resample_polyline(const Polyline& p, int n);

/// Symmetric mean of nearest-point distances after resampling both lines
/// to `n_samples` points.
double chamfer_distance(const Polyline& a, const Polyline& b, int n_samples = 100);

VectorMap transform_map(const VectorMap& vmap, const EgoTransform& t);

/// Clips a polyline to the grid rectangle. Open lines may split into
/// several pieces; pieces shorter than `min_length` are dropped. Closed
/// loops are clipped as polygons.
std::vector<Polyline> clip_to_grid(const Polyline& p, const GridSpec& grid, double min_length);

double point_segment_distance(Point2 p, Point2 a, Point2 b);

}  // namespace augmap
