#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "augmap/latent_analysis.hpp"

using namespace augmap;

namespace {

LatentGrid random_latent(std::mt19937_64& rng, int h, int w, int d) {
  GridSpec g = GridSpec::desk();
  g.height = h;
  g.width = w;
  LatentGrid l(g, d);
  std::normal_distribution<float> n(0, 1);
  for (auto& v : l.data) v = n(rng);
  return l;
}

double brute_silhouette(const std::vector<std::vector<double>>& pts, const std::vector<int>& lab) {
  const std::size_t n = pts.size();
  auto dist = [&](std::size_t a, std::size_t b) {
    long double s = 0;
    for (std::size_t d = 0; d < pts[a].size(); ++d) s += (long double)(pts[a][d] - pts[b][d]) * (pts[a][d] - pts[b][d]);
    return static_cast<double>(std::sqrt(s));
  };
  std::map<int, int> size;
  for (int l : lab) ++size[l];
  long double total = 0;
  int count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (size[lab[i]] < 2) continue;
    std::map<int, long double> sum;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && size[lab[j]] >= 2) sum[lab[j]] += dist(i, j);
    const long double a = sum[lab[i]] / (size[lab[i]] - 1);
    long double b = 1e300;
    for (auto& [l, s] : sum)
      if (l != lab[i]) b = std::min(b, s / size[l]);
    total += (b - a) / std::max(a, b);
    ++count;
  }
  return static_cast<double>(total / count);
}

double t_density(double x, double nu) {
  return std::exp(std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2)) / std::sqrt(nu * M_PI) *
         std::pow(1 + x * x / nu, -(nu + 1) / 2);
}

// Upper tail of Student's t by composite Simpson integration of the density.
double t_upper_tail(double t, double nu) {
  const int n = 200000;
  const double h = std::abs(t) / n;
  double s = t_density(0, nu) + t_density(std::abs(t), nu);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * t_density(i * h, nu);
  const double half = s * h / 3;
  return t >= 0 ? 0.5 - half : 0.5 + half;
}

}  // namespace

TEST(CellLabels, Bitmask) {
  RasterMap r(GridSpec::desk(), 3);
  auto l = cell_labels(r);
  EXPECT_TRUE(std::all_of(l.begin(), l.end(), [](int v) { return v == 0; }));
  r.at(1, 2, 3) = 1.0f;
  r.at(0, 4, 4) = 1.0f;
  r.at(2, 4, 4) = 1.0f;
  l = cell_labels(r);
  EXPECT_EQ(l[2 * 25 + 3], 2);
  EXPECT_EQ(l[4 * 25 + 4], 5);
}

TEST(Silhouette, SeparatedClustersScoreOne) {
  const std::vector<double> pts{0, 0, 0, 0, 10, 10, 10, 10};
  EXPECT_DOUBLE_EQ(*silhouette_points(pts, 2, {0, 0, 1, 1}), 1.0);
  EXPECT_FALSE(silhouette_points(pts, 2, {0, 0, 0, 0}).has_value());
  EXPECT_FALSE(silhouette_points(pts, 2, {0, 0, 0, 1}).has_value());
}

TEST(Silhouette, MatchesBruteForce) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  std::uniform_int_distribution<int> lab(0, 3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<double>> pts(50, std::vector<double>(5));
    std::vector<double> flat;
    std::vector<int> labels;
    for (auto& p : pts) {
      const int l = lab(rng);
      labels.push_back(l);
      for (auto& v : p) flat.push_back(v = n(rng) + l);
    }
    labels[0] = 7;  // singleton, excluded
    EXPECT_NEAR(*silhouette_points(flat, 5, labels), brute_silhouette(pts, labels), 1e-9);
  }
}

TEST(Silhouette, RandomLabelsScoreNearZero) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  double mean = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> flat(500 * 4);
    for (auto& v : flat) v = n(rng);
    std::vector<int> labels(500);
    for (int i = 0; i < 500; ++i) labels[i] = i % 3;
    std::shuffle(labels.begin(), labels.end(), rng);
    const double s = *silhouette_points(flat, 4, labels);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
    mean += s / 20;
  }
  EXPECT_LT(std::abs(mean), 0.05);
}

TEST(Silhouette, SubsamplesLargeGridsDeterministically) {
  std::mt19937_64 rng(3);
  auto l = random_latent(rng, 50, 60, 4);
  std::vector<int> labels(l.cells());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (i % 7 == 0) ? 2 : (i % 3 == 0 ? 1 : 0);
  const auto a = silhouette(l, labels, {1000, 5});
  const auto b = silhouette(l, labels, {1000, 5});
  ASSERT_TRUE(a && b);
  EXPECT_EQ(*a, *b);
  EXPECT_LT(std::abs(*a), 0.1);
}

TEST(Pca, RankOneLatent) {
  GridSpec g = GridSpec::desk();
  LatentGrid l(g, 8);
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n(0, 1);
  std::vector<float> dir(8), coef(l.cells());
  for (auto& v : dir) v = n(rng);
  for (auto& v : coef) v = n(rng);
  for (int d = 0; d < 8; ++d)
    for (std::size_t i = 0; i < l.cells(); ++i) l.data[d * l.cells() + i] = dir[d] * coef[i];
  const auto r = pca_components(l, 3);
  EXPECT_GE(r.explained_variance[0] / r.total_variance, 0.999);
}

TEST(Pca, OrthonormalOrderedAndReconstructs) {
  std::mt19937_64 rng(5);
  auto l = random_latent(rng, 20, 10, 6);
  for (std::size_t i = 0; i < l.cells(); ++i) l.data[i] *= 3.0f;  // anisotropy
  const int D = 6;
  const auto full = pca_components(l, D);
  double sum = 0;
  for (double v : full.explained_variance) sum += v;
  EXPECT_NEAR(sum, full.total_variance, 1e-6 * full.total_variance);
  for (int i = 0; i < D; ++i) {
    if (i > 0) {
      EXPECT_LE(full.explained_variance[i], full.explained_variance[i - 1]);
    }
    int arg = 0;
    for (int d = 0; d < D; ++d) {
      if (std::abs(full.components[i * D + d]) > std::abs(full.components[i * D + arg])) arg = d;
    }
    EXPECT_GT(full.components[i * D + arg], 0.0);
    for (int j = 0; j < D; ++j) {
      double dot = 0;
      for (int d = 0; d < D; ++d) dot += full.components[i * D + d] * full.components[j * D + d];
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-6);
    }
  }
  // Residual of the rank-k reconstruction equals n times the tail variance.
  const int k = 2;
  const auto r = pca_components(l, k);
  const std::size_t n = l.cells();
  std::vector<double> mean(D, 0.0);
  for (int d = 0; d < D; ++d)
    for (std::size_t i = 0; i < n; ++i) mean[d] += l.data[d * n + i] / static_cast<double>(n);
  long double resid = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < D; ++d) {
      double rec = 0;
      for (int c = 0; c < k; ++c) rec += r.projections[i * k + c] * r.components[c * D + d];
      const double e = (l.data[d * n + i] - mean[d]) - rec;
      resid += e * e;
    }
  double tail = 0;
  for (int i = k; i < D; ++i) tail += full.explained_variance[i];
  EXPECT_NEAR(static_cast<double>(resid), n * tail, 1e-6 * n * tail);
}

TEST(Pca, ZeroVarianceThrows) {
  LatentGrid l(GridSpec::desk(), 4);
  EXPECT_THROW(pca_components(l, 2), std::invalid_argument);
  EXPECT_THROW(pca_components(l, 5), std::invalid_argument);
}

TEST(MutualInformation, ConstantLabelsCarryNothing) {
  std::mt19937_64 rng(6);
  std::vector<double> proj(300);
  std::normal_distribution<double> n(0, 1);
  for (auto& v : proj) v = n(rng);
  EXPECT_EQ(mutual_information(std::vector<int>(100, 3), proj, 3, 10), 0.0);
}

TEST(MutualInformation, SelfPartitionGivesEntropy) {
  std::vector<int> u;
  std::vector<std::int64_t> v;
  for (int i = 0; i < 100; ++i) u.push_back(i % 7 == 0 ? 4 : (i % 2)), v.push_back(u.back());
  std::map<int, double> h;
  for (int x : u) h[x] += 0.01;
  double ent = 0;
  for (auto& [k, p] : h) ent -= p * std::log(p);
  EXPECT_NEAR(mutual_information_discrete(u, v), ent, 1e-12);
}

TEST(MutualInformation, MatchesContingencyTable) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> lab(0, 3);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const int cells = 200, k = 3, bins = 10;
    std::vector<int> u(cells);
    std::vector<double> proj(cells * k);
    for (int i = 0; i < cells; ++i) {
      u[i] = lab(rng);
      for (int d = 0; d < k; ++d) proj[i * k + d] = n(rng) + 0.7 * u[i] * (d == 0);
    }
    // Independent binning: edges lo + j * width, with the max in the last bin.
    std::vector<int> v(cells, 0);
    for (int d = 0, mult = 1; d < k; ++d, mult *= bins) {
      double lo = 1e300, hi = -1e300;
      for (int i = 0; i < cells; ++i) lo = std::min(lo, proj[i * k + d]), hi = std::max(hi, proj[i * k + d]);
      for (int i = 0; i < cells; ++i) {
        int b = 0;
        while (b < bins - 1 && proj[i * k + d] >= lo + (b + 1) * (hi - lo) / bins) ++b;
        v[i] += b * mult;
      }
    }
    std::vector<std::vector<long double>> table(4, std::vector<long double>(1000, 0));
    for (int i = 0; i < cells; ++i) table[u[i]][v[i]] += 1.0L / cells;
    long double mi = 0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 1000; ++b) {
        if (table[a][b] == 0) continue;
        long double pa = 0, pb = 0;
        for (int bb = 0; bb < 1000; ++bb) pa += table[a][bb];
        for (int aa = 0; aa < 4; ++aa) pb += table[aa][b];
        mi += table[a][b] * std::log(table[a][b] / (pa * pb));
      }
    EXPECT_NEAR(mutual_information(u, proj, k, bins), static_cast<double>(mi), 1e-12);

    // Relabeling bijection leaves MI unchanged.
    std::vector<int> relabeled(u);
    for (auto& x : relabeled) x = (x * 5 + 2) % 17;
    EXPECT_EQ(mutual_information(relabeled, proj, k, bins), mutual_information(u, proj, k, bins));
  }
}

TEST(MutualInformation, ConstantDimensionUsesOneBin) {
  std::vector<double> proj{1, 5, 1, 6, 1, 7};
  const auto v = joint_bins(proj, 2, 10);
  EXPECT_EQ(v, (std::vector<std::int64_t>{0, 50, 90}));
}

TEST(SpatialVariance, Examples) {
  LatentGrid l(GridSpec::desk(), 2);
  std::fill(l.data.begin(), l.data.end(), 3.0f);
  EXPECT_EQ(spatial_variance(l), 0.0);
  for (std::size_t i = 0; i < l.cells(); ++i) l.data[i] = (i % 2) ? 1.0f : 0.0f;
  // 1250 cells: 625 ones, so Bernoulli(1/2) variance in channel 0.
  EXPECT_NEAR(spatial_variance(l), 0.25 / 2, 1e-15);

  std::mt19937_64 rng(8);
  auto r = random_latent(rng, 13, 9, 5);
  long double ref = 0;
  for (int d = 0; d < 5; ++d) {
    long double m = 0;
    for (std::size_t i = 0; i < r.cells(); ++i) m += r.data[d * r.cells() + i];
    m /= r.cells();
    long double s = 0;
    for (std::size_t i = 0; i < r.cells(); ++i) s += (r.data[d * r.cells() + i] - m) * (r.data[d * r.cells() + i] - m);
    ref += s / r.cells();
  }
  EXPECT_NEAR(spatial_variance(r), static_cast<double>(ref / 5), 1e-10);
}

TEST(GradientCoverage, CountsCellsAboveThreshold) {
  LatentGrid g(GridSpec::desk(), 3);
  EXPECT_EQ(gradient_coverage(g), 0.0);
  g.at(2, 0, 0) = 1e-6f;
  g.at(0, 5, 5) = 1e-20f;
  EXPECT_NEAR(gradient_coverage(g), 1.0 / 1250, 1e-15);
}

TEST(Correlate, ExactLineAndHandCase) {
  const auto r = correlate({1, 2, 3, 4}, {3, 5, 7, 9});
  EXPECT_NEAR(r.slope, 2.0, 1e-12);
  EXPECT_NEAR(r.intercept, 1.0, 1e-12);
  EXPECT_NEAR(r.r2, 1.0, 1e-12);
  // x = 1..5, y = {2, 4, 5, 4, 5}: Sxx = 10, Sxy = 6, slope 0.6, intercept 2.2,
  // SSres = 2.4, SStot = 6, R^2 = 0.6.
  const auto h = correlate({1, 2, 3, 4, 5}, {2, 4, 5, 4, 5});
  EXPECT_NEAR(h.slope, 0.6, 1e-12);
  EXPECT_NEAR(h.intercept, 2.2, 1e-12);
  EXPECT_NEAR(h.r2, 0.6, 1e-12);
  EXPECT_THROW(correlate({1, 1, 1}, {1, 2, 3}), std::invalid_argument);
}

TEST(Correlate, IndependentDataHasLowR2) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  double mean_r2 = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(200), y(200);
    for (auto& v : x) v = n(rng);
    for (auto& v : y) v = n(rng);
    mean_r2 += correlate(x, y).r2 / 20;
  }
  EXPECT_LT(mean_r2, 0.05);
}

TEST(Welch, Examples) {
  const std::vector<double> a{1, 2, 3, 4};
  auto r = welch_t_test(a, a);
  EXPECT_EQ(r.t, 0.0);
  EXPECT_NEAR(r.p, 0.5, 1e-15);

  std::mt19937_64 rng(10);
  std::normal_distribution<double> j(0, 1e-3);
  std::vector<double> hi(30), lo(30);
  for (auto& v : hi) v = 10.0 + j(rng);
  for (auto& v : lo) v = j(rng);
  EXPECT_LT(welch_t_test(hi, lo).p, 1e-3);
  EXPECT_GT(welch_t_test(lo, hi).p, 0.999);
  EXPECT_NEAR(welch_t_test({2, 2}, {2, 2}).p, 0.5, 0.0);
}

TEST(Welch, MatchesNumericalIntegration) {
  const std::vector<double> a{27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4};
  const std::vector<double> b{27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4};
  const auto r = welch_t_test(b, a);
  const auto ma = mean_std(a), mb = mean_std(b);
  const double va = ma.std * ma.std / 15, vb = mb.std * mb.std / 15;
  EXPECT_NEAR(r.t, (mb.mean - ma.mean) / std::sqrt(va + vb), 1e-12);
  EXPECT_NEAR(r.dof, (va + vb) * (va + vb) / (va * va / 14 + vb * vb / 14), 1e-9);
  EXPECT_NEAR(r.p, t_upper_tail(r.t, r.dof), 1e-3);
  EXPECT_NEAR(welch_t_test(a, b).p, t_upper_tail(-r.t, r.dof), 1e-3);
}
