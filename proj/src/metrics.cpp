#include "augmap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace augmap {

void EvalConfig::validate() const {
  if (thresholds.empty()) throw std::invalid_argument("eval: no thresholds");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0)) throw std::invalid_argument("eval: thresholds must be positive");
    if (i > 0 && thresholds[i] <= thresholds[i - 1]) throw std::invalid_argument("eval: thresholds must ascend");
  }
  if (n_samples < 2) throw std::invalid_argument("eval: n_samples must be >= 2");
  if (!(iou_binarize > 0.0 && iou_binarize < 1.0)) throw std::invalid_argument("eval: iou_binarize must be in (0,1)");
}

std::vector<ScoredPolyline> score_predictions(const MapPrediction& pred, int frame) {
  std::vector<ScoredPolyline> out;
  for (std::size_t i = 0; i < pred.instances.size(); ++i) {
    const auto& inst = pred.instances[i];
    const ClassLogits p = softmax(inst.class_logits);
    const int arg = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    if (arg == kEmptyClass) continue;
    out.push_back({frame, static_cast<int>(i), static_cast<MapClass>(arg), inst.points, 1.0 - p[kEmptyClass]});
  }
  return out;
}

namespace {

// Resampling that tolerates collapsed predictions.
std::vector<Point2> metric_samples(const std::vector<Point2>& pts, bool closed, int n) {
  Polyline p{MapClass::Div, pts, closed};
  if (closed && p.points.size() > 1 && p.points.front() == p.points.back()) p.points.pop_back();
  if (p.points.size() < 2 || p.length() <= 0.0) return std::vector<Point2>(n, pts.empty() ? Point2{} : pts[0]);
  return resample_polyline(p, n).points;
}

double sampled_chamfer(const std::vector<Point2>& a, const std::vector<Point2>& b) {
  auto directed = [](const std::vector<Point2>& s, const std::vector<Point2>& t) {
    double sum = 0.0;
    for (const auto& p : s) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : t) best = std::min(best, (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y));
      sum += std::sqrt(best);
    }
    return sum / s.size();
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

struct Candidate {
  double confidence;
  int frame;
  int instance;
  std::vector<double> dist;  // to each GT of the same class in the frame
};

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.frame != b.frame) return a.frame < b.frame;
  return a.instance < b.instance;
}

std::optional<double> ap_from_candidates(std::vector<const Candidate*> order, const std::vector<int>& gt_per_frame,
                                         double tau) {
  long long n_pos = 0;
  for (int c : gt_per_frame) n_pos += c;
  if (n_pos == 0) return std::nullopt;
  std::sort(order.begin(), order.end(), [](const Candidate* a, const Candidate* b) { return ranks_before(*a, *b); });

  std::vector<std::vector<char>> taken(gt_per_frame.size());
  for (std::size_t f = 0; f < gt_per_frame.size(); ++f) taken[f].assign(gt_per_frame[f], 0);
  std::vector<double> precision, recall;
  long long tp = 0, fp = 0;
  for (const Candidate* c : order) {
    int best = -1;
    double best_d = tau;
    for (std::size_t g = 0; g < c->dist.size(); ++g)
      if (!taken[c->frame][g] && c->dist[g] < best_d) best_d = c->dist[g], best = static_cast<int>(g);
    if (best >= 0) {
      taken[c->frame][best] = 1;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / n_pos);
  }
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i) precision[i] = std::max(precision[i], precision[i + 1]);
  double area = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    area += (recall[i] - prev_r) * precision[i];
    prev_r = recall[i];
  }
  return area;
}

std::vector<Candidate> build_candidates(const std::vector<ScoredPolyline>& preds, MapClass cls,
                                        const std::vector<std::vector<std::vector<Point2>>>& gt_samples,
                                        int n_samples) {
  std::vector<Candidate> out;
  for (const auto& p : preds) {
    if (p.cls != cls || !(p.confidence > 0.0)) continue;
    if (p.frame < 0 || p.frame >= static_cast<int>(gt_samples.size()))
      throw std::out_of_range("prediction frame " + std::to_string(p.frame) + " has no GT");
    const auto s = metric_samples(p.points, cls == MapClass::Ped, n_samples);
    Candidate c{p.confidence, p.frame, p.instance, {}};
    for (const auto& g : gt_samples[p.frame]) c.dist.push_back(sampled_chamfer(s, g));
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

std::optional<double> average_precision(const std::vector<ScoredPolyline>& preds,
                                        const std::vector<std::vector<Polyline>>& gts, double tau, int n_samples) {
  std::vector<std::vector<std::vector<Point2>>> samples(gts.size());
  std::vector<int> counts;
  for (std::size_t f = 0; f < gts.size(); ++f) {
    for (const auto& g : gts[f]) samples[f].push_back(metric_samples(g.points, g.closed, n_samples));
    counts.push_back(static_cast<int>(gts[f].size()));
  }
  const MapClass cls = !preds.empty() ? preds[0].cls : MapClass::Div;
  for (const auto& p : preds)
    if (p.cls != cls) throw std::invalid_argument("average_precision: predictions of mixed classes");
  const auto cands = build_candidates(preds, cls, samples, n_samples);
  std::vector<const Candidate*> order;
  for (const auto& c : cands) order.push_back(&c);
  return ap_from_candidates(order, counts, tau);
}

double mean_present(const std::array<std::optional<double>, kNumClasses>& v) {
  double s = 0.0;
  int n = 0;
  for (const auto& x : v)
    if (x) s += *x, ++n;
  return n ? s / n : 0.0;
}

MapScore map_score(const std::vector<ScoredPolyline>& preds, const std::vector<VectorMap>& gts,
                   const EvalConfig& cfg) {
  cfg.validate();
  MapScore out;
  out.ap_at.resize(cfg.thresholds.size());
  for (int c = 0; c < kNumClasses; ++c) {
    const auto cls = static_cast<MapClass>(c);
    std::vector<std::vector<std::vector<Point2>>> samples(gts.size());
    std::vector<int> counts(gts.size(), 0);
    for (std::size_t f = 0; f < gts.size(); ++f)
      for (const auto& g : gts[f].polylines)
        if (g.cls == cls) {
          samples[f].push_back(metric_samples(g.points, g.closed, cfg.n_samples));
          ++counts[f];
        }
    const auto cands = build_candidates(preds, cls, samples, cfg.n_samples);
    std::vector<const Candidate*> order;
    for (const auto& cd : cands) order.push_back(&cd);
    double sum = 0.0;
    bool present = true;
    for (std::size_t t = 0; t < cfg.thresholds.size(); ++t) {
      const auto ap = ap_from_candidates(order, counts, cfg.thresholds[t]);
      out.ap_at[t][c] = ap;
      if (!ap) present = false;
      else sum += *ap;
    }
    if (present) out.ap[c] = sum / cfg.thresholds.size();
  }
  out.mAP = mean_present(out.ap);
  return out;
}

namespace {

void check_shapes(const RasterMap& prob, const RasterMap& gt) {
  if (!(prob.grid == gt.grid) || prob.channels != kNumClasses || gt.channels != kNumClasses ||
      prob.data.size() != gt.data.size())
    throw std::invalid_argument("iou: raster shapes differ");
}

}  // namespace

IouResult iou(const RasterMap& prob, const RasterMap& gt, double threshold) {
  IouAccumulator acc;
  acc.add(prob, gt, threshold);
  return acc.result();
}

void IouAccumulator::add(const RasterMap& prob, const RasterMap& gt, double threshold) {
  check_shapes(prob, gt);
  const std::size_t plane = prob.plane();
  for (int c = 0; c < kNumClasses; ++c)
    for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
      const bool p = prob.data[i] >= threshold, g = gt.data[i] >= 0.5f;
      inter_[c] += p && g;
      uni_[c] += p || g;
    }
}

IouResult IouAccumulator::result() const {
  IouResult r;
  for (int c = 0; c < kNumClasses; ++c)
    if (uni_[c] > 0) r.iou[c] = static_cast<double>(inter_[c]) / static_cast<double>(uni_[c]);
  r.mIoU = mean_present(r.iou);
  return r;
}

json eval_report(const GridSpec& grid, const EvalConfig& cfg, const MapScore& m, const IouResult& r, int n_frames) {
  json per_class = json::object();
  for (int c = 0; c < kNumClasses; ++c) {
    const std::string name(class_name(static_cast<MapClass>(c)));
    per_class["AP_" + name] = m.ap[c] ? json(*m.ap[c]) : json(nullptr);
    per_class["IoU_" + name] = r.iou[c] ? json(*r.iou[c]) : json(nullptr);
  }
  return json{{"range", json{{"x", {grid.x_min, grid.x_max}}, {"y", {grid.y_min, grid.y_max}}}},
              {"thresholds", cfg.thresholds},
              {"per_class", per_class},
              {"mAP", m.mAP},
              {"mIoU", r.mIoU},
              {"n_frames", n_frames}};
}

}  // namespace augmap
