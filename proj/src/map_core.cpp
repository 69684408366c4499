#include "augmap/map_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace augmap {

std::string_view class_name(MapClass c) {
  switch (c) {
    case MapClass::Ped: return "ped";
    case MapClass::Div: return "div";
    case MapClass::Bound: return "bound";
  }
  throw std::invalid_argument("invalid map class");
}

MapClass class_from_name(std::string_view name) {
  if (name == "ped") return MapClass::Ped;
  if (name == "div") return MapClass::Div;
  if (name == "bound") return MapClass::Bound;
  throw std::invalid_argument("unknown map class '" + std::string(name) + "'");
}

void GridSpec::validate() const {
  if (height < 2 || width < 2) throw std::invalid_argument("grid needs at least 2x2 cells");
  if (!(x_max > x_min) || !(y_max > y_min)) throw std::invalid_argument("grid extent must be positive");
  if (!std::isfinite(x_min) || !std::isfinite(x_max) || !std::isfinite(y_min) || !std::isfinite(y_max))
    throw std::invalid_argument("grid extent must be finite");
  if (!(x_min < 0.0 && x_max > 0.0 && y_min < 0.0 && y_max > 0.0))
    throw std::invalid_argument("ego origin must lie inside the grid");
}

Point2 GridSpec::cell_center(int row, int col) const {
  return {x_min + (row + 0.5) * cell_x(), y_min + (col + 0.5) * cell_y()};
}

GridSpec GridSpec::desk() { return GridSpec{}; }

GridSpec GridSpec::paper_scale() { return GridSpec{-30.0, 30.0, -15.0, 15.0, 100, 50}; }

void Polyline::validate() const {
  if (points.size() < 2) throw std::invalid_argument("polyline needs at least 2 points");
  for (const auto& p : points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw std::invalid_argument("polyline has non-finite point");
  if (closed && points.front() == points.back())
    throw std::invalid_argument("closed polyline must not repeat its first point");
}

double Polyline::length() const {
  double len = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    len += std::hypot(points[i].x - points[i - 1].x, points[i].y - points[i - 1].y);
  if (closed && points.size() > 1)
    len += std::hypot(points.front().x - points.back().x, points.front().y - points.back().y);
  return len;
}

std::size_t VectorMap::count(MapClass c) const {
  return static_cast<std::size_t>(
      std::count_if(polylines.begin(), polylines.end(), [c](const Polyline& p) { return p.cls == c; }));
}

RasterMap::RasterMap(const GridSpec& g, int c)
    : grid(g), channels(c), data(static_cast<std::size_t>(c) * g.height * g.width, 0.0f) {}

EgoTransform EgoTransform::identity() {
  EgoTransform t;
  t.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  return t;
}

EgoTransform EgoTransform::from_yaw_translation(double yaw, double tx, double ty) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  EgoTransform t;
  t.m = {c, -s, 0, tx, s, c, 0, ty, 0, 0, 1, 0, 0, 0, 0, 1};
  return t;
}

void EgoTransform::validate() const {
  for (double v : m)
    if (!std::isfinite(v)) throw std::invalid_argument("transform has non-finite entries");
  if (m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0)
    throw std::invalid_argument("transform bottom row must be (0,0,0,1)");
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += m[k * 4 + i] * m[k * 4 + j];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-6)
        throw std::invalid_argument("transform rotation block is not orthonormal");
    }
  }
}

EgoTransform EgoTransform::inverse() const {
  EgoTransform r = identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.m[i * 4 + j] = m[j * 4 + i];
  for (int i = 0; i < 3; ++i) {
    double t = 0.0;
    for (int k = 0; k < 3; ++k) t -= r.m[i * 4 + k] * m[k * 4 + 3];
    r.m[i * 4 + 3] = t;
  }
  return r;
}

EgoTransform EgoTransform::operator*(const EgoTransform& rhs) const {
  EgoTransform r;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += m[i * 4 + k] * rhs.m[k * 4 + j];
      r.m[i * 4 + j] = s;
    }
  return r;
}

Point2 EgoTransform::apply(Point2 p) const {
  const std::array<double, 4> h{p.x, p.y, 0.0, 1.0};
  double out[2];
  for (int r = 0; r < 2; ++r) {
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += m[r * 4 + k] * h[k];
    out[r] = s;
  }
  return {out[0], out[1]};
}

std::optional<CellIndex> world_to_grid(Point2 p, const GridSpec& grid) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw std::invalid_argument("world_to_grid: non-finite point");
  if (p.x < grid.x_min || p.x > grid.x_max || p.y < grid.y_min || p.y > grid.y_max) return std::nullopt;
  const int row = std::min(static_cast<int>(std::floor(grid.row_coord(p.x))), grid.height - 1);
  const int col = std::min(static_cast<int>(std::floor(grid.col_coord(p.y))), grid.width - 1);
  return CellIndex{std::max(row, 0), std::max(col, 0)};
}

namespace {

// Liang-Barsky clip of segment a->b against the closed rectangle. Returns the
// parameter interval, or nullopt when the segment misses it.
std::optional<std::pair<double, double>> clip_segment(Point2 a, Point2 b, double x0, double x1, double y0,
                                                      double y1) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  double t0 = 0.0, t1 = 1.0;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - x0, x1 - a.x, a.y - y0, y1 - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return std::nullopt;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      if (r > t1) return std::nullopt;
      t0 = std::max(t0, r);
    } else {
      if (r < t0) return std::nullopt;
      t1 = std::min(t1, r);
    }
  }
  if (t0 > t1) return std::nullopt;
  return std::make_pair(t0, t1);
}

Point2 lerp(Point2 a, Point2 b, double t) { return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)}; }

double dist(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

std::vector<CellIndex> segment_cells(Point2 a, Point2 b, const GridSpec& grid) {
  if (!std::isfinite(a.x) || !std::isfinite(a.y) || !std::isfinite(b.x) || !std::isfinite(b.y))
    throw std::invalid_argument("segment_cells: non-finite point");
  const auto range = clip_segment(a, b, grid.x_min, grid.x_max, grid.y_min, grid.y_max);
  if (!range) return {};

  // Work in continuous grid coordinates, where cell boundaries are integers.
  const double ra = grid.row_coord(a.x), rb = grid.row_coord(b.x);
  const double ca = grid.col_coord(a.y), cb = grid.col_coord(b.y);
  const auto [t0, t1] = *range;

  auto cell_at = [&](double r, double c) {
    const int row = std::clamp(static_cast<int>(std::floor(r)), 0, grid.height - 1);
    const int col = std::clamp(static_cast<int>(std::floor(c)), 0, grid.width - 1);
    return CellIndex{row, col};
  };

  struct Break {
    double t;
    double r, c;
  };
  std::vector<Break> breaks;
  breaks.push_back({t0, ra + t0 * (rb - ra), ca + t0 * (cb - ca)});
  breaks.push_back({t1, ra + t1 * (rb - ra), ca + t1 * (cb - ca)});
  auto add_crossings = [&](double from, double to, bool is_row) {
    if (from == to) return;
    const double lo = std::min(from + (to - from) * t0, from + (to - from) * t1);
    const double hi = std::max(from + (to - from) * t0, from + (to - from) * t1);
    for (double k = std::ceil(lo); k <= hi; k += 1.0) {
      const double t = (k - from) / (to - from);
      if (t < t0 || t > t1) continue;
      Break br{t, ra + t * (rb - ra), ca + t * (cb - ca)};
      // Pin the crossed coordinate to the exact boundary value.
      (is_row ? br.r : br.c) = k;
      breaks.push_back(br);
    }
  };
  add_crossings(ra, rb, true);
  add_crossings(ca, cb, false);
  std::sort(breaks.begin(), breaks.end(), [](const Break& x, const Break& y) { return x.t < y.t; });

  std::set<CellIndex> cells;
  for (std::size_t i = 0; i < breaks.size(); ++i) {
    cells.insert(cell_at(breaks[i].r, breaks[i].c));
    if (i + 1 < breaks.size() && breaks[i + 1].t > breaks[i].t) {
      const double tm = 0.5 * (breaks[i].t + breaks[i + 1].t);
      cells.insert(cell_at(ra + tm * (rb - ra), ca + tm * (cb - ca)));
    }
  }
  return {cells.begin(), cells.end()};
}

bool point_in_polygon(Point2 p, const std::vector<Point2>& poly) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point2& a = poly[i];
    const Point2& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

RasterMap rasterize_map(const VectorMap& vmap, const GridSpec& grid, int line_width) {
  grid.validate();
  if (line_width < 1) throw std::invalid_argument("rasterize_map: line_width must be >= 1");
  RasterMap raster(grid, kNumClasses);
  std::vector<unsigned char> mask(raster.plane());

  for (const auto& line : vmap.polylines) {
    line.validate();
    std::fill(mask.begin(), mask.end(), 0);
    const int ch = static_cast<int>(line.cls);
    if (line.closed && line.cls == MapClass::Ped) {
      for (int r = 0; r < grid.height; ++r)
        for (int c = 0; c < grid.width; ++c)
          if (point_in_polygon(grid.cell_center(r, c), line.points))
            raster.at(ch, r, c) = 1.0f;
      continue;
    }
    const std::size_t n = line.points.size();
    const std::size_t segs = line.closed ? n : n - 1;
    for (std::size_t i = 0; i < segs; ++i)
      for (const auto& cell : segment_cells(line.points[i], line.points[(i + 1) % n], grid))
        mask[static_cast<std::size_t>(cell.row) * grid.width + cell.col] = 1;

    const int lo = -(line_width - 1) / 2;
    const int hi = line_width / 2;
    for (int r = 0; r < grid.height; ++r)
      for (int c = 0; c < grid.width; ++c) {
        if (!mask[static_cast<std::size_t>(r) * grid.width + c]) continue;
        for (int dr = lo; dr <= hi; ++dr)
          for (int dc = lo; dc <= hi; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr >= 0 && rr < grid.height && cc >= 0 && cc < grid.width) raster.at(ch, rr, cc) = 1.0f;
          }
      }
  }
  return raster;
}

Polyline resample_polyline(const Polyline& p, int n) {
  if (n < 2) throw std::invalid_argument("resample_polyline: n must be >= 2");
  p.validate();
  std::vector<Point2> verts = p.points;
  if (p.closed) verts.push_back(p.points.front());

  std::vector<double> cum(verts.size(), 0.0);
  for (std::size_t i = 1; i < verts.size(); ++i) cum[i] = cum[i - 1] + dist(verts[i - 1], verts[i]);
  const double total = cum.back();
  if (!(total > 0.0)) throw std::invalid_argument("resample_polyline: zero-length polyline");

  Polyline out;
  out.cls = p.cls;
  out.closed = p.closed;
  out.points.reserve(static_cast<std::size_t>(n));
  const double step = p.closed ? total / n : total / (n - 1);
  std::size_t seg = 0;
  for (int k = 0; k < n; ++k) {
    if (!p.closed && k == 0) {
      out.points.push_back(verts.front());
      continue;
    }
    if (!p.closed && k == n - 1) {
      out.points.push_back(verts.back());
      continue;
    }
    const double s = step * k;
    while (seg + 2 < verts.size() && cum[seg + 1] < s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double t = len > 0.0 ? std::clamp((s - cum[seg]) / len, 0.0, 1.0) : 0.0;
    out.points.push_back(lerp(verts[seg], verts[seg + 1], t));
  }
  return out;
}

double chamfer_distance(const Polyline& a, const Polyline& b, int n_samples) {
  const Polyline ra = resample_polyline(a, n_samples);
  const Polyline rb = resample_polyline(b, n_samples);
  auto directed = [](const std::vector<Point2>& from, const std::vector<Point2>& to) {
    double sum = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, dist(p, q));
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  const double ab = directed(ra.points, rb.points);
  const double ba = directed(rb.points, ra.points);
  return 0.5 * (ab + ba);
}

VectorMap transform_map(const VectorMap& vmap, const EgoTransform& t) {
  VectorMap out = vmap;
  for (auto& line : out.polylines)
    for (auto& p : line.points) p = t.apply(p);
  return out;
}

double point_segment_distance(Point2 p, Point2 a, Point2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  if (len2 == 0.0) return dist(p, a);
  const double t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  return dist(p, lerp(a, b, t));
}

namespace {

std::vector<Point2> dedupe(const std::vector<Point2>& pts, bool closed) {
  std::vector<Point2> out;
  for (const auto& p : pts)
    if (out.empty() || dist(out.back(), p) > 1e-9) out.push_back(p);
  if (closed)
    while (out.size() > 1 && dist(out.front(), out.back()) <= 1e-9) out.pop_back();
  return out;
}

// Sutherland-Hodgman against one half-plane.
std::vector<Point2> clip_half(const std::vector<Point2>& poly, int axis, double bound, bool keep_greater) {
  std::vector<Point2> out;
  const std::size_t n = poly.size();
  auto coord = [axis](Point2 p) { return axis == 0 ? p.x : p.y; };
  auto inside = [&](Point2 p) { return keep_greater ? coord(p) >= bound : coord(p) <= bound; };
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 cur = poly[i];
    const Point2 prev = poly[(i + n - 1) % n];
    const bool ci = inside(cur), pi = inside(prev);
    if (ci != pi) {
      const double t = (bound - coord(prev)) / (coord(cur) - coord(prev));
      Point2 x = lerp(prev, cur, t);
      (axis == 0 ? x.x : x.y) = bound;
      out.push_back(x);
    }
    if (ci) out.push_back(cur);
  }
  return out;
}

}  // namespace

std::vector<Polyline> clip_to_grid(const Polyline& p, const GridSpec& grid, double min_length) {
  p.validate();
  std::vector<Polyline> pieces;
  if (p.closed) {
    std::vector<Point2> poly = p.points;
    poly = clip_half(poly, 0, grid.x_min, true);
    poly = clip_half(poly, 0, grid.x_max, false);
    poly = clip_half(poly, 1, grid.y_min, true);
    poly = clip_half(poly, 1, grid.y_max, false);
    poly = dedupe(poly, true);
    if (poly.size() >= 3) {
      Polyline out{p.cls, poly, true};
      if (out.length() >= min_length) pieces.push_back(std::move(out));
    }
    return pieces;
  }

  std::vector<Point2> cur;
  auto flush = [&]() {
    auto pts = dedupe(cur, false);
    if (pts.size() >= 2) {
      Polyline out{p.cls, std::move(pts), false};
      if (out.length() >= min_length) pieces.push_back(std::move(out));
    }
    cur.clear();
  };
  for (std::size_t i = 0; i + 1 < p.points.size(); ++i) {
    const Point2 a = p.points[i], b = p.points[i + 1];
    const auto range = clip_segment(a, b, grid.x_min, grid.x_max, grid.y_min, grid.y_max);
    if (!range) {
      flush();
      continue;
    }
    const Point2 s = range->first == 0.0 ? a : lerp(a, b, range->first);
    const Point2 e = range->second == 1.0 ? b : lerp(a, b, range->second);
    if (range->first > 0.0) flush();
    if (cur.empty()) cur.push_back(s);
    cur.push_back(e);
    if (range->second < 1.0) flush();
  }
  flush();
  return pieces;
}

}  // namespace augmap
