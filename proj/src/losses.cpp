#include "augmap/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace augmap {

ClassLogits softmax(const ClassLogits& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  ClassLogits p{};
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += (p[k] = std::exp(logits[k] - mx));
  for (auto& v : p) v /= s;
  return p;
}

void LossWeights::validate() const {
  if (!(line >= 0.0) || !(cls >= 0.0) || !(trans >= 0.0))
    throw std::invalid_argument("loss weights must be nonnegative");
}

double smooth_l1(double d, double beta) {
  const double a = std::abs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

double smooth_l1_grad(double d, double beta) {
  if (std::abs(d) < beta) return d / beta;
  return d > 0 ? 1.0 : -1.0;
}

int PointOrder::index(int j, int n) const {
  const int k = reversed ? (n - 1 - j) : j;
  return (k + shift) % n;
}

std::vector<PointOrder> permutation_group(int n, bool closed) {
  std::vector<PointOrder> g;
  if (!closed) return {{0, false}, {0, true}};
  for (int dir = 0; dir < 2; ++dir)
    for (int s = 0; s < n; ++s) g.push_back({s, dir == 1});
  return g;
}

namespace {

double ordered_line_cost(const std::vector<Point2>& pred, const std::vector<Point2>& gt, PointOrder o) {
  const int n = static_cast<int>(pred.size());
  double s = 0.0;
  for (int j = 0; j < n; ++j) {
    const Point2& q = gt[o.index(j, n)];
    s += smooth_l1(pred[j].x - q.x) + smooth_l1(pred[j].y - q.y);
  }
  return s / n;
}

void check_same_size(const std::vector<Point2>& a, const std::vector<Point2>& b, const char* what) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument(std::string(what) + ": point counts differ");
}

double neg_log_prob(const ClassLogits& z, int k) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  return mx + std::log(s) - z[k];
}

double line_cost(const std::vector<Point2>& pred, const std::vector<Point2>& gt, bool closed) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : permutation_group(static_cast<int>(pred.size()), closed))
    best = std::min(best, ordered_line_cost(pred, gt, o));
  return best;
}

// Hungarian algorithm with potentials; rows <= cols. Returns row_of_col
// (-1 when unassigned) and the total cost.
std::pair<std::vector<int>, double> hungarian(const std::vector<std::vector<double>>& a,
                                              const std::vector<int>& rows, const std::vector<int>& cols,
                                              std::vector<double>* u_out = nullptr,
                                              std::vector<double>* v_out = nullptr) {
  const int n = static_cast<int>(rows.size()), m = static_cast<int>(cols.size());
  std::vector<int> row_of_col(m, -1);
  if (n == 0) {
    if (u_out) u_out->assign(0, 0.0);
    if (v_out) v_out->assign(m, 0.0);
    return {row_of_col, 0.0};
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  auto c = [&](int i, int j) { return a[rows[i - 1]][cols[j - 1]]; };
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) {
      row_of_col[j - 1] = p[j] - 1;
      total += c(p[j], j);
    }
  if (u_out) u_out->assign(u.begin() + 1, u.end());
  if (v_out) v_out->assign(v.begin() + 1, v.end());
  return {row_of_col, total};
}

}  // namespace

LineLossResult line_loss(const std::vector<Point2>& pred, const std::vector<Point2>& gt, bool closed) {
  check_same_size(pred, gt, "line_loss");
  const int n = static_cast<int>(pred.size());
  LineLossResult r;
  r.value = std::numeric_limits<double>::infinity();
  for (const auto& o : permutation_group(n, closed)) {
    const double v = ordered_line_cost(pred, gt, o);
    if (v < r.value) r.value = v, r.order = o;
  }
  r.grad.resize(n);
  for (int j = 0; j < n; ++j) {
    const Point2& q = gt[r.order.index(j, n)];
    r.grad[j] = {smooth_l1_grad(pred[j].x - q.x) / n, smooth_l1_grad(pred[j].y - q.y) / n};
  }
  return r;
}

FocalResult focal_class_loss(const ClassLogits& logits, int target, const FocalParams& fp) {
  if (target < 0 || target > kEmptyClass) throw std::invalid_argument("focal_class_loss: bad target");
  const ClassLogits p = softmax(logits);
  const double alpha = target == kEmptyClass ? 1.0 - fp.alpha : fp.alpha;
  const double pt = p[target];
  const double log_pt = -neg_log_prob(logits, target);
  const double q = 1.0 - pt;
  FocalResult r;
  r.value = -alpha * std::pow(q, fp.gamma) * log_pt;
  // d value / d p_t, times p_t.
  const double dq = fp.gamma == 0.0 ? 0.0 : fp.gamma * std::pow(q, fp.gamma - 1.0);
  const double g = -alpha * (-dq * log_pt * pt + std::pow(q, fp.gamma));
  for (int k = 0; k <= kEmptyClass; ++k) r.grad[k] = g * ((k == target ? 1.0 : 0.0) - p[k]);
  return r;
}

TransformLossResult transform_loss(const std::vector<Point2>& aux, const std::vector<Point2>& target) {
  check_same_size(aux, target, "transform_loss");
  TransformLossResult r;
  r.grad.resize(aux.size());
  for (std::size_t j = 0; j < aux.size(); ++j) {
    const double dx = aux[j].x - target[j].x, dy = aux[j].y - target[j].y;
    r.value += smooth_l1(dx) + smooth_l1(dy);
    r.grad[j] = {smooth_l1_grad(dx), smooth_l1_grad(dy)};
  }
  return r;
}

std::vector<int> Assignment::gt_of_pred(int n_preds) const {
  std::vector<int> out(n_preds, -1);
  for (const auto& [p, g] : pairs) out[p] = g;
  return out;
}

std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const int m = n == 0 ? 0 : static_cast<int>(cost[0].size());
  if (n == 0) return {};
  if (n > m) throw std::invalid_argument("assignment: more rows than columns");
  double scale = 1.0;
  for (const auto& row : cost) {
    if (static_cast<int>(row.size()) != m) throw std::invalid_argument("assignment: ragged cost matrix");
    for (double c : row) {
      if (!std::isfinite(c)) throw std::invalid_argument("assignment: non-finite cost");
      scale = std::max(scale, std::abs(c));
    }
  }
  const double tol = 1e-9 * scale * n;

  std::vector<int> rows(n), cols(m);
  std::iota(rows.begin(), rows.end(), 0);
  std::iota(cols.begin(), cols.end(), 0);
  std::vector<double> u, v;
  auto [row_of_col, best] = hungarian(cost, rows, cols, &u, &v);

  // Every optimal assignment uses only tight edges; if the found one is
  // the only tight edge per row, the optimum is unique.
  std::vector<std::vector<char>> tight(n, std::vector<char>(m));
  int n_tight = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) n_tight += tight[i][j] = cost[i][j] - u[i] - v[j] <= tol;
  if (n_tight == n) return row_of_col;

  // Fix columns in order, giving each the smallest row that still admits
  // an optimal completion.
  std::vector<int> result(m, -1);
  std::vector<int> free_rows = rows;
  double fixed = 0.0;
  for (int k = 0; k < m; ++k) {
    std::vector<int> rest_cols(cols.begin() + k + 1, cols.end());
    const bool must_assign = static_cast<int>(free_rows.size()) > static_cast<int>(rest_cols.size());
    int chosen = -1;
    double chosen_total = std::numeric_limits<double>::infinity();
    for (std::size_t ri = 0; ri < free_rows.size(); ++ri) {
      const int r = free_rows[ri];
      if (!tight[r][k] && !must_assign) continue;
      std::vector<int> rest_rows = free_rows;
      rest_rows.erase(rest_rows.begin() + ri);
      if (rest_rows.size() > rest_cols.size()) continue;
      const double total = fixed + cost[r][k] + hungarian(cost, rest_rows, rest_cols).second;
      if (total <= best + tol) {
        chosen = r, chosen_total = total;
        break;
      }
      if (must_assign && total < chosen_total) chosen = r, chosen_total = total;
    }
    if (chosen >= 0 && (chosen_total <= best + tol || must_assign)) {
      result[k] = chosen;
      fixed += cost[chosen][k];
      free_rows.erase(std::find(free_rows.begin(), free_rows.end(), chosen));
    }
  }
  return result;
}

Assignment match_instances(const MapPrediction& pred, const std::vector<Polyline>& gt, const LossWeights& w) {
  w.validate();
  const int n_pred = static_cast<int>(pred.instances.size());
  const int n_gt = static_cast<int>(gt.size());
  if (n_gt > n_pred)
    throw std::invalid_argument("match_instances: " + std::to_string(n_gt) + " GT instances exceed " +
                                std::to_string(n_pred) + " predictions");
  for (const auto& g : gt)
    if (n_pred > 0 && g.points.size() != pred.instances[0].points.size())
      throw std::invalid_argument("match_instances: GT not resampled to the prediction point count");

  Assignment a;
  std::vector<std::vector<double>> cost(n_gt, std::vector<double>(n_pred));
  for (int j = 0; j < n_gt; ++j)
    for (int i = 0; i < n_pred; ++i) {
      const auto& inst = pred.instances[i];
      cost[j][i] = w.line * line_cost(inst.points, gt[j].points, gt[j].closed) +
                   w.cls * neg_log_prob(inst.class_logits, static_cast<int>(gt[j].cls));
    }
  const auto row_of_col = n_gt == 0 ? std::vector<int>(n_pred, -1) : solve_assignment(cost);
  for (int i = 0; i < n_pred; ++i) {
    if (row_of_col[i] >= 0) {
      a.pairs.emplace_back(i, row_of_col[i]);
      a.cost += cost[row_of_col[i]][i];
    } else {
      a.unmatched_preds.push_back(i);
    }
  }
  return a;
}

std::vector<Polyline> resample_targets(const VectorMap& gt, int n_points) {
  std::vector<Polyline> out;
  out.reserve(gt.polylines.size());
  for (const auto& p : gt.polylines) out.push_back(resample_polyline(p, n_points));
  return out;
}

VectorLossResult vector_loss(const MapPrediction& pred, const VectorMap& gt, const LossWeights& w,
                             const FocalParams& fp, const std::vector<std::vector<Point2>>* aux_targets) {
  VectorLossResult r;
  const int n_pred = static_cast<int>(pred.instances.size());
  if (n_pred == 0) throw std::invalid_argument("vector_loss: empty prediction");
  const int np = static_cast<int>(pred.instances[0].points.size());
  const auto targets = resample_targets(gt, np);
  if (aux_targets && aux_targets->size() != targets.size())
    throw std::invalid_argument("vector_loss: one aux target slot per GT instance required");
  r.assignment = match_instances(pred, targets, w);

  r.grad.resize(n_pred);
  for (int i = 0; i < n_pred; ++i) {
    r.grad[i].points.assign(pred.instances[i].points.size(), Point2{});
    r.grad[i].aux_points.assign(pred.instances[i].aux_points.size(), Point2{});
  }
  for (const auto& [i, j] : r.assignment.pairs) {
    const auto& inst = pred.instances[i];
    const auto& tgt = targets[j];
    const auto ll = line_loss(inst.points, tgt.points, tgt.closed);
    r.line_sum += ll.value;
    for (int k = 0; k < np; ++k) r.grad[i].points[k] = {w.line * ll.grad[k].x, w.line * ll.grad[k].y};

    const auto fl = focal_class_loss(inst.class_logits, static_cast<int>(tgt.cls), fp);
    r.cls_sum += fl.value;
    for (int k = 0; k <= kEmptyClass; ++k) r.grad[i].class_logits[k] = w.cls * fl.grad[k];

    if (aux_targets && !(*aux_targets)[j].empty() && !inst.aux_points.empty()) {
      const auto& raw = (*aux_targets)[j];
      if (static_cast<int>(raw.size()) != np) throw std::invalid_argument("vector_loss: aux target point count");
      std::vector<Point2> ordered(np);
      for (int k = 0; k < np; ++k) ordered[k] = raw[ll.order.index(k, np)];
      const auto tl = transform_loss(inst.aux_points, ordered);
      r.trans_sum += tl.value;
      for (int k = 0; k < np; ++k) r.grad[i].aux_points[k] = {w.trans * tl.grad[k].x, w.trans * tl.grad[k].y};
    }
  }
  for (int i : r.assignment.unmatched_preds) {
    const auto fl = focal_class_loss(pred.instances[i].class_logits, kEmptyClass, fp);
    r.cls_sum += fl.value;
    for (int k = 0; k <= kEmptyClass; ++k) r.grad[i].class_logits[k] = w.cls * fl.grad[k];
  }
  r.line = w.line * r.line_sum;
  r.cls = w.cls * r.cls_sum;
  r.trans = w.trans * r.trans_sum;
  r.total = r.line + r.cls + r.trans;
  return r;
}

template <class T>
double dice_loss(std::span<const T> p, std::span<const T> g, int channels, std::span<T> grad) {
  if (channels <= 0 || p.size() != g.size() || p.size() % channels != 0)
    throw std::invalid_argument("dice_loss: shape mismatch");
  if (!grad.empty() && grad.size() != p.size()) throw std::invalid_argument("dice_loss: gradient shape mismatch");
  const std::size_t plane = p.size() / channels;
  double total = 0.0;
  for (int c = 0; c < channels; ++c) {
    const std::size_t off = c * plane;
    double inter = 0.0, s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double pv = p[off + i], gv = g[off + i];
      inter += pv * gv;
      s += pv * pv + gv * gv;
    }
    const double num = 2.0 * inter + kDiceEps, den = s + kDiceEps;
    total += 1.0 - num / den;
    if (!grad.empty()) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double pv = p[off + i], gv = g[off + i];
        grad[off + i] = static_cast<T>(-(2.0 * gv * den - num * 2.0 * pv) / (den * den) / channels);
      }
    }
  }
  return total / channels;
}

template double dice_loss<float>(std::span<const float>, std::span<const float>, int, std::span<float>);
template double dice_loss<double>(std::span<const double>, std::span<const double>, int, std::span<double>);

}  // namespace augmap
