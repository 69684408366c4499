#include "augmap/latent_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

namespace augmap {

LatentGrid::LatentGrid(const GridSpec& g, int d) : grid(g), dim(d), data(static_cast<std::size_t>(d) * g.cells(), 0.0f) {}

std::vector<int> cell_labels(const RasterMap& gt) {
  std::vector<int> out(gt.plane(), 0);
  for (int c = 0; c < gt.channels; ++c)
    for (int y = 0; y < gt.grid.height; ++y)
      for (int x = 0; x < gt.grid.width; ++x)
        if (gt.at(c, y, x) > 0.5f) out[static_cast<std::size_t>(y) * gt.grid.width + x] |= 1 << c;
  return out;
}

namespace {

void check_labels(const LatentGrid& latent, const std::vector<int>& labels) {
  if (labels.size() != latent.cells()) throw std::invalid_argument("labels do not match the latent grid");
}

// Row-major cells x dim copy in double.
std::vector<double> cell_features(const LatentGrid& latent) {
  const std::size_t n = latent.cells();
  std::vector<double> f(n * latent.dim);
  for (int d = 0; d < latent.dim; ++d)
    for (std::size_t i = 0; i < n; ++i) f[i * latent.dim + d] = latent.data[d * n + i];
  return f;
}

}  // namespace

std::optional<double> silhouette_points(const std::vector<double>& points, int dim, const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  if (points.size() != n * static_cast<std::size_t>(dim)) throw std::invalid_argument("silhouette: shape mismatch");
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  std::vector<std::size_t> keep;
  std::map<int, int> cluster_of_label;
  for (const auto& [l, s] : sizes)
    if (s >= 2) cluster_of_label.emplace(l, static_cast<int>(cluster_of_label.size()));
  if (cluster_of_label.size() < 2) return std::nullopt;
  std::vector<int> cl;
  for (std::size_t i = 0; i < n; ++i)
    if (cluster_of_label.count(labels[i])) keep.push_back(i), cl.push_back(cluster_of_label[labels[i]]);
  const std::size_t m = keep.size();
  const int nc = static_cast<int>(cluster_of_label.size());
  std::vector<double> counts(nc, 0.0);
  for (int c : cl) counts[c] += 1.0;

  // Sum of distances from each kept point to every cluster.
  std::vector<double> sums(m * nc, 0.0);
  for (std::size_t a = 0; a < m; ++a) {
    const double* pa = &points[keep[a] * dim];
    for (std::size_t b = a + 1; b < m; ++b) {
      const double* pb = &points[keep[b] * dim];
      double s = 0.0;
      for (int d = 0; d < dim; ++d) s += (pa[d] - pb[d]) * (pa[d] - pb[d]);
      const double dist = std::sqrt(s);
      sums[a * nc + cl[b]] += dist;
      sums[b * nc + cl[a]] += dist;
    }
  }
  double total = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    const double ai = sums[a * nc + cl[a]] / (counts[cl[a]] - 1.0);
    double bi = std::numeric_limits<double>::infinity();
    for (int c = 0; c < nc; ++c)
      if (c != cl[a]) bi = std::min(bi, sums[a * nc + c] / counts[c]);
    const double den = std::max(ai, bi);
    total += den > 0.0 ? (bi - ai) / den : 0.0;
  }
  return total / m;
}

std::optional<double> silhouette(const LatentGrid& latent, const std::vector<int>& labels,
                                 const SilhouetteOptions& opt) {
  check_labels(latent, labels);
  const std::vector<double> feats = cell_features(latent);
  const std::size_t n = labels.size();
  if (n <= opt.max_cells) return silhouette_points(feats, latent.dim, labels);

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[labels[i]].push_back(i);
  // Proportional quotas with largest-remainder rounding.
  std::vector<std::pair<int, std::size_t>> quota;
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (const auto& [l, idx] : members) {
    const double exact = static_cast<double>(idx.size()) * opt.max_cells / n;
    const auto q = static_cast<std::size_t>(std::floor(exact));
    quota.emplace_back(l, q);
    remainders.emplace_back(exact - q, l);
    assigned += q;
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < opt.max_cells && r < remainders.size(); ++r, ++assigned)
    for (auto& [l, q] : quota)
      if (l == remainders[r].second) ++q;

  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> chosen;
  for (const auto& [l, q] : quota) {
    auto idx = members[l];
    std::shuffle(idx.begin(), idx.end(), rng);
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(q));
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<double> sub(chosen.size() * latent.dim);
  std::vector<int> sub_labels;
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    std::copy_n(&feats[chosen[r] * latent.dim], latent.dim, &sub[r * latent.dim]);
    sub_labels.push_back(labels[chosen[r]]);
  }
  return silhouette_points(sub, latent.dim, sub_labels);
}

PcaResult pca_components(const LatentGrid& latent, int k) {
  if (k < 1 || k > latent.dim) throw std::invalid_argument("pca: k must be in [1, D]");
  const std::size_t n = latent.cells();
  const int D = latent.dim;
  const std::vector<double> f = cell_features(latent);
  Eigen::MatrixXd X = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      f.data(), static_cast<Eigen::Index>(n), D);
  X.rowwise() -= X.colwise().mean();
  const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(n);
  const double total = cov.trace();
  if (!(total > 0.0)) throw std::invalid_argument("pca: latent has zero variance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error("pca: eigendecomposition failed");

  PcaResult r;
  r.k = k;
  r.dim = D;
  r.total_variance = total;
  Eigen::MatrixXd comps(D, k);
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd v = es.eigenvectors().col(D - 1 - i);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    comps.col(i) = v;
    r.explained_variance.push_back(std::max(0.0, es.eigenvalues()(D - 1 - i)));
  }
  r.components.resize(static_cast<std::size_t>(k) * D);
  for (int i = 0; i < k; ++i)
    for (int d = 0; d < D; ++d) r.components[i * D + d] = comps(d, i);
  const Eigen::MatrixXd proj = X * comps;
  r.projections.resize(n * k);
  for (std::size_t c = 0; c < n; ++c)
    for (int i = 0; i < k; ++i) r.projections[c * k + i] = proj(static_cast<Eigen::Index>(c), i);
  return r;
}

double mutual_information_discrete(const std::vector<int>& u, const std::vector<std::int64_t>& v) {
  if (u.size() != v.size() || u.empty()) throw std::invalid_argument("mutual_information: size mismatch");
  // Categories are numbered by first appearance so the summation order does
  // not depend on the label values.
  std::unordered_map<int, int> uid;
  std::unordered_map<std::int64_t, int> vid;
  std::map<std::pair<int, int>, int> pair_id;
  std::vector<double> cu, cv, cuv;
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const auto [iu, nu] = uid.try_emplace(u[i], static_cast<int>(cu.size()));
    if (nu) cu.push_back(0.0);
    const auto [iv, nv] = vid.try_emplace(v[i], static_cast<int>(cv.size()));
    if (nv) cv.push_back(0.0);
    const std::pair<int, int> key{iu->second, iv->second};
    const auto [ip, np] = pair_id.try_emplace(key, static_cast<int>(cuv.size()));
    if (np) cuv.push_back(0.0), pairs.push_back(key);
    cu[key.first] += 1.0;
    cv[key.second] += 1.0;
    cuv[ip->second] += 1.0;
  }
  const double n = static_cast<double>(u.size());
  double mi = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k)
    mi += cuv[k] / n * std::log(cuv[k] * n / (cu[pairs[k].first] * cv[pairs[k].second]));
  return std::max(0.0, mi);
}

std::vector<std::int64_t> joint_bins(const std::vector<double>& projections, int k, int bins) {
  if (k < 1 || bins < 1 || projections.size() % k != 0) throw std::invalid_argument("joint_bins: bad shape");
  const std::size_t n = projections.size() / k;
  std::vector<std::int64_t> v(n, 0);
  std::int64_t stride = 1;
  for (int d = 0; d < k; ++d) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < n; ++i) lo = std::min(lo, projections[i * k + d]), hi = std::max(hi, projections[i * k + d]);
    for (std::size_t i = 0; i < n; ++i) {
      int b = 0;
      if (hi > lo) b = std::min(bins - 1, static_cast<int>(std::floor((projections[i * k + d] - lo) / (hi - lo) * bins)));
      v[i] += b * stride;
    }
    stride *= bins;
  }
  return v;
}

double mutual_information(const std::vector<int>& labels, const std::vector<double>& projections, int k, int bins) {
  return mutual_information_discrete(labels, joint_bins(projections, k, bins));
}

double spatial_variance(const LatentGrid& latent) {
  const std::size_t n = latent.cells();
  if (latent.dim == 0 || n == 0) return 0.0;
  double total = 0.0;
  for (int d = 0; d < latent.dim; ++d) {
    const float* x = &latent.data[d * n];
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (x[i] - mean) * (x[i] - mean);
    total += ss / n;
  }
  return total / latent.dim;
}

double gradient_coverage(const LatentGrid& grad, double eps) {
  const std::size_t n = grad.cells();
  std::size_t covered = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int d = 0; d < grad.dim; ++d) s += static_cast<double>(grad.data[d * n + i]) * grad.data[d * n + i];
    covered += std::sqrt(s) > eps;
  }
  return static_cast<double>(covered) / n;
}

Regression correlate(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 3) throw std::invalid_argument("correlate: need >= 3 paired values");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("correlate: xs have zero variance");
  Regression r;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (r.intercept + r.slope * xs[i]);
    ss_res += e * e;
  }
  r.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return r;
}

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / (v.size() - 1));
  }
  return m;
}

TTest welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_t_test: each sample needs >= 2 values");
  const MeanStd sa = mean_std(a), sb = mean_std(b);
  const double va = sa.std * sa.std / a.size(), vb = sb.std * sb.std / b.size();
  TTest r;
  const double se2 = va + vb;
  if (se2 == 0.0) {
    r.dof = static_cast<double>(a.size() + b.size() - 2);
    if (sa.mean == sb.mean) return r;
    r.t = sa.mean > sb.mean ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = sa.mean > sb.mean ? 0.0 : 1.0;
    return r;
  }
  r.t = (sa.mean - sb.mean) / std::sqrt(se2);
  r.dof = se2 * se2 / (va * va / (a.size() - 1) + vb * vb / (b.size() - 1));
  const boost::math::students_t dist(r.dof);
  r.p = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

}  // namespace augmap
