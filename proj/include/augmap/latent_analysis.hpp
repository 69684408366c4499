#pragma once

// Structure statistics over latent BEV grids: cluster quality against GT
// labels, principal components, mutual information, spatial variance,
// regression and significance tests.

#include <cstdint>
#include <optional>
#include <vector>

#include "augmap/map_core.hpp"

namespace augmap {

/// H x W x D feature grid, channel-major ([d][row][col]) like RasterMap.
struct LatentGrid {
  GridSpec grid;
  int dim = 0;
  std::vector<float> data;

  LatentGrid() = default;
  LatentGrid(const GridSpec& g, int d);

  float& at(int d, int row, int col) {
    return data[(static_cast<std::size_t>(d) * grid.height + row) * grid.width + col];
  }
  float at(int d, int row, int col) const {
    return data[(static_cast<std::size_t>(d) * grid.height + row) * grid.width + col];
  }
  std::size_t cells() const { return static_cast<std::size_t>(grid.height) * grid.width; }
};

/// Row-major per-cell labels; bit c is set when channel c of the GT is on.
std::vector<int> cell_labels(const RasterMap& gt);

struct SilhouetteOptions {
  std::size_t max_cells = 2000;
  std::uint64_t seed = 0;
};

/// Mean silhouette over cells in clusters of size at least two, using
/// Euclidean distances between cell features. Grids with more than
/// max_cells cells are subsampled with a per-label proportional quota.
/// nullopt when fewer than two clusters remain.
std::optional<double> silhouette(const LatentGrid& latent, const std::vector<int>& labels,
                                 const SilhouetteOptions& opt = {});

/// Silhouette on an explicit point set; `points` is n x dim row-major.
std::optional<double> silhouette_points(const std::vector<double>& points, int dim, const std::vector<int>& labels);

struct PcaResult {
  int k = 0;
  int dim = 0;
  std::vector<double> components;          // k x dim, row-major
  std::vector<double> projections;         // cells x k, row-major
  std::vector<double> explained_variance;  // population variance along each component
  double total_variance = 0.0;
};

/// Components of the per-scene centered cell features, ordered by variance.
/// Each component's largest-magnitude coordinate is positive. Throws when
/// the latent has no variance.
PcaResult pca_components(const LatentGrid& latent, int k);

/// MI in nats between two discrete labelings.
double mutual_information_discrete(const std::vector<int>& u, const std::vector<std::int64_t>& v);

/// Joint equidistant bin index over the k projection dimensions, each
/// binned between its own min and max.
std::vector<std::int64_t> joint_bins(const std::vector<double>& projections, int k, int bins);

double mutual_information(const std::vector<int>& labels, const std::vector<double>& projections, int k,
                          int bins = 10);

/// Mean over channels of the population variance across cells.
double spatial_variance(const LatentGrid& latent);

/// Fraction of cells whose gradient vector has L2 norm above `eps`.
double gradient_coverage(const LatentGrid& grad, double eps = 1e-12);

struct Regression {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

Regression correlate(const std::vector<double>& xs, const std::vector<double>& ys);

struct TTest {
  double t = 0.0;
  double dof = 0.0;
  double p = 0.5;
};

/// One-sided Welch test of mean(a) > mean(b).
TTest welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
};

MeanStd mean_std(const std::vector<double>& v);

}  // namespace augmap
