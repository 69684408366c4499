#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "augmap/harness.hpp"

namespace augmap {

namespace {

using Rgb = std::array<unsigned char, 3>;

struct Image {
  int w = 0, h = 0;
  std::vector<unsigned char> px;  // rgb
  Image(int w_, int h_, Rgb fill = {255, 255, 255}) : w(w_), h(h_), px(static_cast<std::size_t>(w_) * h_ * 3) {
    for (std::size_t i = 0; i < px.size(); i += 3) std::copy(fill.begin(), fill.end(), px.begin() + i);
  }
  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    std::copy(c.begin(), c.end(), px.begin() + (static_cast<std::size_t>(y) * w + x) * 3);
  }
  void line(double x0, double y0, double x1, double y1, Rgb c, int thick = 1) {
    const int n = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= n; ++i) {
      const double t = static_cast<double>(i) / n;
      const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
      const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
      for (int dy = -(thick / 2); dy <= thick / 2; ++dy)
        for (int dx = -(thick / 2); dx <= thick / 2; ++dx) set(x + dx, y + dy, c);
    }
  }
  void dot(double x, double y, Rgb c, int r = 2) {
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        if (dx * dx + dy * dy <= r * r) set(static_cast<int>(std::lround(x)) + dx, static_cast<int>(std::lround(y)) + dy, c);
  }
  void write_ppm(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "P6\n" << w << ' ' << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  }
};

void write_pgm(const std::filesystem::path& path, int w, int h, const std::vector<unsigned char>& gray) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

constexpr int kScale = 8;
constexpr std::array<Rgb, kNumClasses> kClassColor{{{220, 60, 60}, {60, 140, 220}, {40, 170, 80}}};

// Forward (+x) points up, left (+y) points left.
std::pair<double, double> to_pixel(const GridSpec& g, Point2 p) {
  return {(g.width - g.col_coord(p.y)) * kScale, (g.height - g.row_coord(p.x)) * kScale};
}

Image raster_image(const RasterMap& r) {
  const GridSpec& g = r.grid;
  Image img(g.width * kScale, g.height * kScale);
  for (int row = 0; row < g.height; ++row)
    for (int col = 0; col < g.width; ++col) {
      int acc[3] = {0, 0, 0}, n = 0;
      for (int c = 0; c < kNumClasses; ++c)
        if (r.at(c, row, col) > 0.5f) {
          for (int k = 0; k < 3; ++k) acc[k] += kClassColor[c][k];
          ++n;
        }
      if (!n) continue;
      const Rgb rgb{static_cast<unsigned char>(acc[0] / n), static_cast<unsigned char>(acc[1] / n),
                    static_cast<unsigned char>(acc[2] / n)};
      for (int y = 0; y < kScale; ++y)
        for (int x = 0; x < kScale; ++x)
          img.set((g.width - 1 - col) * kScale + x, (g.height - 1 - row) * kScale + y, rgb);
    }
  return img;
}

Image overlay_image(const RasterMap& gt, const MapPrediction& pred) {
  Image img = raster_image(gt);
  for (auto& v : img.px) v = static_cast<unsigned char>(255 - (255 - v) / 3);
  for (const auto& sp : score_predictions(pred, 0)) {
    const Rgb c = kClassColor[static_cast<int>(sp.cls)];
    const bool closed = sp.cls == MapClass::Ped;
    const std::size_t n = sp.points.size();
    for (std::size_t i = 0; i + 1 < n + (closed ? 1 : 0); ++i) {
      const auto [x0, y0] = to_pixel(gt.grid, sp.points[i]);
      const auto [x1, y1] = to_pixel(gt.grid, sp.points[(i + 1) % n]);
      img.line(x0, y0, x1, y1, c, 2);
    }
    for (const auto& p : sp.points) {
      const auto [x, y] = to_pixel(gt.grid, p);
      img.dot(x, y, {0, 0, 0}, 2);
    }
  }
  return img;
}

void write_component(const std::filesystem::path& path, const GridSpec& g, const PcaResult& pca, int comp) {
  const std::size_t cells = static_cast<std::size_t>(g.height) * g.width;
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < cells; ++i) {
    lo = std::min(lo, pca.projections[i * pca.k + comp]);
    hi = std::max(hi, pca.projections[i * pca.k + comp]);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  const int w = g.width * kScale, h = g.height * kScale;
  std::vector<unsigned char> gray(static_cast<std::size_t>(w) * h);
  for (int row = 0; row < g.height; ++row)
    for (int col = 0; col < g.width; ++col) {
      const double v = (pca.projections[(static_cast<std::size_t>(row) * g.width + col) * pca.k + comp] - lo) / span;
      const auto val = static_cast<unsigned char>(std::lround(255.0 * v));
      for (int y = 0; y < kScale; ++y)
        for (int x = 0; x < kScale; ++x)
          gray[static_cast<std::size_t>((g.height - 1 - row) * kScale + y) * w + (g.width - 1 - col) * kScale + x] = val;
    }
  write_pgm(path, w, h, gray);
}

void write_scatter(const std::filesystem::path& path, const std::vector<double>& xs, const std::vector<double>& ys,
                   const std::optional<Regression>& fit) {
  constexpr int W = 480, H = 360, M = 30;
  Image img(W, H);
  if (xs.empty()) {
    img.write_ppm(path);
    return;
  }
  const auto [xlo_it, xhi_it] = std::minmax_element(xs.begin(), xs.end());
  double xlo = *xlo_it, xhi = *xhi_it;
  if (xhi <= xlo) xhi = xlo + 1.0;
  const double pad = 0.05 * (xhi - xlo);
  xlo -= pad;
  xhi += pad;
  auto px = [&](double x) { return M + (x - xlo) / (xhi - xlo) * (W - 2 * M); };
  auto py = [&](double y) { return H - M - y * (H - 2 * M); };  // mAP in [0, 1]
  img.line(M, H - M, W - M, H - M, {0, 0, 0});
  img.line(M, M, M, H - M, {0, 0, 0});
  for (double t : {0.25, 0.5, 0.75, 1.0}) img.line(M - 4, py(t), M, py(t), {0, 0, 0});
  if (fit) img.line(px(xlo), py(fit->intercept + fit->slope * xlo), px(xhi), py(fit->intercept + fit->slope * xhi),
                    {220, 60, 60}, 1);
  for (std::size_t i = 0; i < xs.size(); ++i) img.dot(px(xs[i]), py(std::clamp(ys[i], 0.0, 1.0)), {40, 90, 200}, 3);
  img.write_ppm(path);
}

std::optional<Regression> try_correlate(const std::vector<double>& xs, const std::vector<double>& ys) {
  try {
    return correlate(xs, ys);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

json regression_json(const std::optional<Regression>& r) {
  if (!r) return nullptr;
  return {{"slope", r->slope}, {"intercept", r->intercept}, {"r2", r->r2}};
}

json summary(const std::vector<double>& v) {
  if (v.empty()) return nullptr;
  const MeanStd ms = mean_std(v);
  return {{"mean", ms.mean}, {"std", ms.std}, {"n", v.size()}};
}

json welch_json(const std::vector<double>& a, const std::vector<double>& b) {
  json j{{"n_a", a.size()}, {"n_b", b.size()}};
  j["mean_a"] = a.empty() ? json(nullptr) : json(mean_std(a).mean);
  j["mean_b"] = b.empty() ? json(nullptr) : json(mean_std(b).mean);
  try {
    const TTest t = welch_t_test(a, b);
    j["t"] = t.t;
    j["dof"] = t.dof;
    j["p"] = t.p;
  } catch (const std::exception& e) {
    j["error"] = e.what();
  }
  return j;
}

}  // namespace

AnalysisResult analyze_latents(Model<float>& model, const std::vector<PreparedScene>& scenes,
                               const std::vector<SceneScore>& scores, const RunConfig& cfg,
                               const std::filesystem::path& figures_dir) {
  if (scenes.empty()) throw std::invalid_argument("analyze: split is empty");
  const ModelConfig& mc = model.config();
  std::map<std::string, double> map_of;
  for (const auto& s : scores) map_of[s.id] = s.mAP;
  const AnalysisConfig& ac = cfg.analysis;
  const SilhouetteOptions sopt{ac.silhouette_max_cells, ac.silhouette_seed};
  if (!figures_dir.empty()) std::filesystem::create_directories(figures_dir);

  AnalysisResult res;
  std::vector<double> sil, mi, var, maps;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto it = map_of.find(scenes[s].id);
    if (it == map_of.end())
      throw std::invalid_argument("analyze: no per-scene mAP for " + scenes[s].id + " (run eval first)");
    const auto& frames = scenes[s].frames;
    std::vector<FrameInput> batch;
    for (const auto& f : frames) batch.push_back({f.observation, &f.gt_raster, f.prev_observation, f.transform});
    const auto out = model.forward(batch, false);
    SceneAnalysis sa;
    sa.id = scenes[s].id;
    sa.mAP = it->second;
    double sil_sum = 0.0;
    int sil_n = 0;
    for (std::size_t b = 0; b < frames.size(); ++b) {
      const LatentGrid latent = to_latent(out.b_vector, static_cast<int>(b), mc.grid);
      const std::vector<int> labels = cell_labels(frames[b].gt_raster);
      const PcaResult pca = pca_components(latent, ac.pca_k);
      if (const auto sv = silhouette(latent, labels, sopt)) {
        sil_sum += *sv;
        ++sil_n;
      }
      sa.mi += mutual_information(labels, pca.projections, ac.pca_k, ac.bins) / frames.size();
      sa.variance += spatial_variance(latent) / frames.size();

      const int idx = static_cast<int>(s);
      if (b + 1 == frames.size() && !figures_dir.empty() &&
          std::find(ac.figure_scenes.begin(), ac.figure_scenes.end(), idx) != ac.figure_scenes.end()) {
        const std::string stem = scenes[s].id;
        raster_image(frames[b].gt_raster).write_ppm(figures_dir / (stem + "_gt_raster.ppm"));
        overlay_image(frames[b].gt_raster, model.prediction(out, static_cast<int>(b)))
            .write_ppm(figures_dir / (stem + "_vector_overlay.ppm"));
        for (int c = 0; c < std::min(3, pca.k); ++c)
          write_component(figures_dir / (stem + "_pc" + std::to_string(c + 1) + ".pgm"), mc.grid, pca, c);
      }
    }
    if (sil_n) sa.silhouette = sil_sum / sil_n;
    if (sa.silhouette) sil.push_back(*sa.silhouette);
    mi.push_back(sa.mi);
    var.push_back(sa.variance);
    maps.push_back(sa.mAP);
    res.scenes.push_back(std::move(sa));
  }

  const auto mi_fit = try_correlate(mi, maps);
  const auto var_fit = try_correlate(var, maps);
  if (!figures_dir.empty()) {
    write_scatter(figures_dir / "scatter_map_vs_mi.ppm", mi, maps, mi_fit);
    write_scatter(figures_dir / "scatter_map_vs_variance.ppm", var, maps, var_fit);
  }
  json per_scene = json::array();
  for (const auto& sa : res.scenes)
    per_scene.push_back({{"id", sa.id},
                         {"silhouette", sa.silhouette ? json(*sa.silhouette) : json(nullptr)},
                         {"mi", sa.mi},
                         {"variance", sa.variance},
                         {"mAP", sa.mAP}});
  res.report = json{{"tap", "decoder input grid"},
                    {"frames", "mean over the usable frames of each scene"},
                    {"pca_k", ac.pca_k},
                    {"mi_bins", ac.bins},
                    {"mi_log", "natural"},
                    {"silhouette_max_cells", ac.silhouette_max_cells},
                    {"silhouette_subsampled", static_cast<std::size_t>(mc.grid.height) * mc.grid.width >
                                                  ac.silhouette_max_cells},
                    {"per_scene", per_scene},
                    {"aggregates",
                     {{"silhouette", summary(sil)},
                      {"mi", summary(mi)},
                      {"variance", summary(var)},
                      {"mAP", summary(maps)},
                      {"mi_vs_mAP", regression_json(mi_fit)},
                      {"variance_vs_mAP", regression_json(var_fit)}}}};
  return res;
}

json compare_analyses(const AnalysisResult& a, const AnalysisResult& b) {
  auto collect = [](const AnalysisResult& r, bool sil) {
    std::vector<double> v;
    for (const auto& s : r.scenes) {
      if (!sil)
        v.push_back(s.mi);
      else if (s.silhouette)
        v.push_back(*s.silhouette);
    }
    return v;
  };
  return {{"test", "one-sided Welch, H1: mean(a) > mean(b)"},
          {"mi", welch_json(collect(a, false), collect(b, false))},
          {"silhouette", welch_json(collect(a, true), collect(b, true))}};
}

std::string build_report(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::invalid_argument("report: no such directory " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::ostringstream os;
  os << "# augmap report\n\nSource: `" << dir.string() << "`\n";
  auto rel = [&](const std::filesystem::path& p) { return std::filesystem::relative(p, dir).string(); };
  auto num = [](const json& v) {
    if (v.is_null()) return std::string("-");
    std::ostringstream s;
    s.precision(4);
    s << std::fixed << v.get<double>();
    return s.str();
  };
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    if (name == "run_record.json") {
      const json r = json::parse(read_file(f));
      const json& m = r["metrics"]["final"];
      os << "\n## Training run `" << rel(f.parent_path()) << "`\n\n"
         << "- seed " << r["seed"] << ", config hash `" << r["config_hash"].get<std::string>() << "`, "
         << r["steps"] << " steps, " << num(r["wall_clock_s"]) << " s\n"
         << "- final val mAP " << num(m["mAP"]) << " (best " << num(r["metrics"]["best_val_mAP"]) << "), mIoU "
         << num(m["mIoU"]) << "\n";
    } else if (name == "eval.json") {
      const json r = json::parse(read_file(f));
      os << "\n## Evaluation `" << rel(f) << "`\n\n| metric | value |\n|---|---|\n";
      for (const auto& [k, v] : r["per_class"].items()) os << "| " << k << " | " << num(v) << " |\n";
      os << "| mAP | " << num(r["mAP"]) << " |\n| mIoU | " << num(r["mIoU"]) << " |\n| frames | " << r["n_frames"]
         << " |\n";
    } else if (name.rfind("ablation_", 0) == 0 && f.extension() == ".txt") {
      os << "\n## Ablation `" << rel(f) << "`\n\n```\n" << read_file(f) << "```\n";
    } else if (name == "analysis.json") {
      const json r = json::parse(read_file(f));
      const json& a = r["aggregates"];
      os << "\n## Latent analysis `" << rel(f) << "`\n\n";
      for (const char* k : {"silhouette", "mi", "variance", "mAP"})
        if (!a[k].is_null()) os << "- " << k << ": " << num(a[k]["mean"]) << " ± " << num(a[k]["std"]) << "\n";
      for (const char* k : {"mi_vs_mAP", "variance_vs_mAP"})
        if (!a[k].is_null()) os << "- " << k << ": slope " << num(a[k]["slope"]) << ", R² " << num(a[k]["r2"]) << "\n";
      if (r.contains("comparison"))
        for (const char* k : {"mi", "silhouette"}) {
          const json& c = r["comparison"][k];
          if (c.contains("p"))
            os << "- " << k << " vs comparison checkpoint: t " << num(c["t"]) << ", p " << num(c["p"]) << "\n";
        }
    }
  }
  std::vector<std::string> figures;
  for (const auto& f : files)
    if (f.extension() == ".ppm" || f.extension() == ".pgm") figures.push_back(rel(f));
  if (!figures.empty()) {
    os << "\n## Figures\n\n";
    for (const auto& f : figures) os << "- `" << f << "`\n";
  }
  return os.str();
}

void write_manifest(const std::filesystem::path& dir, const std::string& command, const json& extra) {
  json files = json::array();
  std::vector<std::filesystem::path> paths;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    const std::string data = read_file(p);
    files.push_back({{"path", std::filesystem::relative(p, dir).string()},
                     {"bytes", data.size()},
                     {"fnv1a64", hex64(fnv1a64(data))}});
  }
  json m{{"command", command}, {"version", AUGMAP_VERSION}, {"files", files}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_file(dir / "manifest.json", m.dump(2));
}

}  // namespace augmap
