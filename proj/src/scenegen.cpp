#include "augmap/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

namespace augmap {

namespace {

constexpr double kStationStep = 0.5;  // road sampling step, meters
constexpr double kCrossingDepth = 3.0;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

struct Road {
  std::vector<Point2> center;
  std::vector<double> heading;
  int origin = 0;  // index of station s = 0

  Point2 at(int i, double offset) const {
    return {center[i].x - offset * std::sin(heading[i]), center[i].y + offset * std::cos(heading[i])};
  }
};

Road build_road(double s_lo, double s_hi, double k0, double k1) {
  const int n_back = static_cast<int>(std::ceil(-s_lo / kStationStep));
  const int n_fwd = static_cast<int>(std::ceil(s_hi / kStationStep));
  Road road;
  road.origin = n_back;
  const int n = n_back + n_fwd + 1;
  road.center.resize(n);
  road.heading.resize(n);
  auto theta = [&](double s) { return k0 * s + 0.5 * k1 * s * s; };
  for (int i = 0; i < n; ++i) road.heading[i] = theta((i - n_back) * kStationStep);
  road.center[n_back] = {0.0, 0.0};
  for (int i = n_back; i + 1 < n; ++i) {
    const double th = theta((i - n_back + 0.5) * kStationStep);
    road.center[i + 1] = {road.center[i].x + kStationStep * std::cos(th),
                          road.center[i].y + kStationStep * std::sin(th)};
  }
  for (int i = n_back; i > 0; --i) {
    const double th = theta((i - n_back - 0.5) * kStationStep);
    road.center[i - 1] = {road.center[i].x - kStationStep * std::cos(th),
                          road.center[i].y - kStationStep * std::sin(th)};
  }
  return road;
}

EgoTransform pose(const Road& road, int station, double offset) {
  const Point2 p = road.at(station, offset);
  return EgoTransform::from_yaw_translation(road.heading[station], p.x, p.y);
}

}  // namespace

void SceneParams::validate() const {
  if (min_lanes < 1 || max_lanes < min_lanes) throw std::invalid_argument("scene: invalid lane count range");
  if (!(lane_width > 0.0)) throw std::invalid_argument("scene: lane_width must be positive");
  if (min_curvature > max_curvature) throw std::invalid_argument("scene: invalid curvature range");
  if (p_crossing < 0.0 || p_crossing > 1.0 || p_island < 0.0 || p_island > 1.0)
    throw std::invalid_argument("scene: probabilities must lie in [0, 1]");
  if (frames < 1) throw std::invalid_argument("scene: frames must be >= 1");
  if (min_speed < 0.0 || max_speed < min_speed) throw std::invalid_argument("scene: invalid speed range");
  if (!(dt > 0.0)) throw std::invalid_argument("scene: dt must be positive");
  grid.validate();
  if (max_lanes * lane_width > grid.y_max - grid.y_min)
    throw std::invalid_argument("scene: lane_width * n_lanes exceeds the lateral extent of the grid");
}

json to_json(const SceneParams& p) {
  return json{{"seed", p.seed},
              {"min_lanes", p.min_lanes},
              {"max_lanes", p.max_lanes},
              {"lane_width", p.lane_width},
              {"min_curvature", p.min_curvature},
              {"max_curvature", p.max_curvature},
              {"p_crossing", p.p_crossing},
              {"p_island", p.p_island},
              {"frames", p.frames},
              {"min_speed", p.min_speed},
              {"max_speed", p.max_speed},
              {"dt", p.dt},
              {"generation_margin", p.generation_margin},
              {"grid", to_json(p.grid)}};
}

SceneParams scene_params_from_json(const json& j) {
  SceneParams p;
  p.seed = j.value("seed", std::uint64_t{0});
  p.min_lanes = j.at("min_lanes");
  p.max_lanes = j.at("max_lanes");
  p.lane_width = j.at("lane_width");
  p.min_curvature = j.at("min_curvature");
  p.max_curvature = j.at("max_curvature");
  p.p_crossing = j.at("p_crossing");
  p.p_island = j.at("p_island");
  p.frames = j.at("frames");
  p.min_speed = j.at("min_speed");
  p.max_speed = j.at("max_speed");
  p.dt = j.at("dt");
  p.generation_margin = j.at("generation_margin");
  p.grid = grid_from_json(j.at("grid"));
  return p;
}

Scene generate_scene(const SceneParams& params) {
  params.validate();
  std::mt19937_64 rng(splitmix(params.seed));
  Scene scene;
  scene.params = params;

  const int n_lanes = std::uniform_int_distribution<int>(params.min_lanes, params.max_lanes)(rng);
  scene.n_lanes = n_lanes;
  const double k0 = uniform(rng, params.min_curvature, params.max_curvature);
  const double k_span = std::max(std::abs(params.min_curvature), std::abs(params.max_curvature));
  const double k1 = uniform(rng, -k_span / 40.0, k_span / 40.0);
  const int ego_lane = std::uniform_int_distribution<int>(0, n_lanes - 1)(rng);
  const double speed = uniform(rng, params.min_speed, params.max_speed);
  const int stride = std::max(0, static_cast<int>(std::lround(speed * params.dt / kStationStep)));

  const double half_range = std::max({std::abs(params.grid.x_min), std::abs(params.grid.x_max),
                                      std::abs(params.grid.y_min), std::abs(params.grid.y_max)});
  const double travel = stride * kStationStep * (params.frames - 1);
  const Road road = build_road(-(half_range + params.generation_margin),
                               travel + half_range + params.generation_margin, k0, k1);

  const double w = params.lane_width;
  auto lateral = [&](double k) { return (k - 0.5 * n_lanes) * w; };
  const double ego_offset = lateral(ego_lane + 0.5);

  std::vector<Polyline> world;
  const int n_st = static_cast<int>(road.center.size());
  for (int k = 0; k <= n_lanes; ++k) {
    Polyline line;
    line.cls = (k == 0 || k == n_lanes) ? MapClass::Bound : MapClass::Div;
    line.points.reserve(n_st);
    for (int i = 0; i < n_st; ++i) line.points.push_back(road.at(i, lateral(k)));
    world.push_back(std::move(line));
  }

  auto station_index = [&](double s) {
    return std::clamp(road.origin + static_cast<int>(std::lround(s / kStationStep)), 0, n_st - 1);
  };
  const double x_ahead = params.grid.x_max;
  if (std::bernoulli_distribution(params.p_crossing)(rng)) {
    const double s_c = uniform(rng, params.grid.x_min + 2.0, x_ahead - kCrossingDepth - 2.0);
    const int a = station_index(s_c);
    const int b = station_index(s_c + kCrossingDepth);
    Polyline cross;
    cross.cls = MapClass::Ped;
    cross.closed = true;
    cross.points = {road.at(a, lateral(0)), road.at(a, lateral(n_lanes)), road.at(b, lateral(n_lanes)),
                    road.at(b, lateral(0))};
    world.push_back(std::move(cross));
  }
  if (std::bernoulli_distribution(params.p_island)(rng)) {
    const double s_i = uniform(rng, params.grid.x_min, x_ahead - 8.0);
    const bool left = std::bernoulli_distribution(0.5)(rng);
    const double base = left ? lateral(n_lanes) : lateral(0);
    const double dir = left ? 1.0 : -1.0;
    const std::pair<double, double> shape[] = {{0.0, 2.0}, {2.0, 1.0}, {6.0, 1.0},
                                               {8.0, 2.0}, {6.0, 3.0}, {2.0, 3.0}};
    Polyline island;
    island.cls = MapClass::Bound;
    island.closed = true;
    for (const auto& [ds, off] : shape) island.points.push_back(road.at(station_index(s_i + ds), base + dir * off));
    world.push_back(std::move(island));
  }

  EgoTransform prev_world_to_ego;
  for (int t = 0; t < params.frames; ++t) {
    const EgoTransform ego_pose = pose(road, road.origin + t * stride, ego_offset);
    const EgoTransform world_to_ego = ego_pose.inverse();
    VectorMap frame;
    for (const auto& line : world) {
      Polyline local = line;
      for (auto& p : local.points) p = world_to_ego.apply(p);
      for (auto& piece : clip_to_grid(local, params.grid, kMinPieceLength)) frame.polylines.push_back(std::move(piece));
    }
    scene.maps.push_back(std::move(frame));
    scene.transforms.push_back(t == 0 ? EgoTransform::identity() : world_to_ego * prev_world_to_ego.inverse());
    prev_world_to_ego = world_to_ego;
  }
  return scene;
}

Degradation Degradation::none() {
  Degradation d;
  d.blur_kernel = 1;
  d.noise_sigma = 0.0;
  d.occlusion_rects = 0;
  d.full_occlusion = false;
  d.falloff = 0.0;
  d.distractors = 0;
  return d;
}

json to_json(const Degradation& d) {
  return json{{"blur_kernel", d.blur_kernel},         {"noise_sigma", d.noise_sigma},
              {"occlusion_rects", d.occlusion_rects}, {"occlusion_min", d.occlusion_min},
              {"occlusion_max", d.occlusion_max},     {"full_occlusion", d.full_occlusion},
              {"falloff", d.falloff},                 {"distractors", d.distractors},
              {"distractor_length", d.distractor_length}};
}

Degradation degradation_from_json(const json& j) {
  Degradation d;
  d.blur_kernel = j.at("blur_kernel");
  d.noise_sigma = j.at("noise_sigma");
  d.occlusion_rects = j.at("occlusion_rects");
  d.occlusion_min = j.at("occlusion_min");
  d.occlusion_max = j.at("occlusion_max");
  d.full_occlusion = j.at("full_occlusion");
  d.falloff = j.at("falloff");
  d.distractors = j.at("distractors");
  d.distractor_length = j.at("distractor_length");
  return d;
}

Observation degrade_raster(const RasterMap& gt, const Degradation& d, std::uint64_t seed) {
  if (d.blur_kernel < 1 || d.blur_kernel % 2 == 0) throw std::invalid_argument("degradation: blur kernel must be odd");
  const GridSpec& g = gt.grid;
  std::mt19937_64 rng(splitmix(seed));
  Observation obs = gt;

  for (int i = 0; i < d.distractors; ++i) {
    const Point2 c{uniform(rng, g.x_min, g.x_max), uniform(rng, g.y_min, g.y_max)};
    const double ang = uniform(rng, 0.0, 2.0 * M_PI);
    const double h = 0.5 * d.distractor_length;
    const int ch = std::uniform_int_distribution<int>(0, obs.channels - 1)(rng);
    const Point2 a{c.x - h * std::cos(ang), c.y - h * std::sin(ang)};
    const Point2 b{c.x + h * std::cos(ang), c.y + h * std::sin(ang)};
    for (const auto& cell : segment_cells(a, b, g)) obs.at(ch, cell.row, cell.col) = 1.0f;
  }

  if (d.blur_kernel > 1) {
    const int r = d.blur_kernel / 2;
    const float norm = 1.0f / static_cast<float>(d.blur_kernel * d.blur_kernel);
    Observation blurred = obs;
    for (int c = 0; c < obs.channels; ++c)
      for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
          float s = 0.0f;
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy >= 0 && yy < g.height && xx >= 0 && xx < g.width) s += obs.at(c, yy, xx);
            }
          blurred.at(c, y, x) = s * norm;
        }
    obs = std::move(blurred);
  }

  if (d.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, d.noise_sigma);
    for (auto& v : obs.data) v = static_cast<float>(v + noise(rng));
  }

  if (d.full_occlusion) {
    std::fill(obs.data.begin(), obs.data.end(), 0.0f);
  } else {
    for (int i = 0; i < d.occlusion_rects; ++i) {
      const Point2 c{uniform(rng, g.x_min, g.x_max), uniform(rng, g.y_min, g.y_max)};
      const double sx = uniform(rng, d.occlusion_min, d.occlusion_max);
      const double sy = uniform(rng, d.occlusion_min, d.occlusion_max);
      for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
          const Point2 p = g.cell_center(y, x);
          if (std::abs(p.x - c.x) <= 0.5 * sx && std::abs(p.y - c.y) <= 0.5 * sy)
            for (int ch = 0; ch < obs.channels; ++ch) obs.at(ch, y, x) = 0.0f;
        }
    }
  }

  if (d.falloff > 0.0) {
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) {
        const Point2 p = g.cell_center(y, x);
        const double a = std::max(0.0, 1.0 - d.falloff * std::hypot(p.x, p.y));
        for (int ch = 0; ch < obs.channels; ++ch) obs.at(ch, y, x) = static_cast<float>(obs.at(ch, y, x) * a);
      }
  }
  return obs;
}

Observation render_observation(const Scene& scene, int frame, const Degradation& d) {
  if (frame < 0 || frame >= static_cast<int>(scene.maps.size()))
    throw std::out_of_range("render_observation: frame index out of range");
  const RasterMap gt = rasterize_map(scene.maps[frame], scene.params.grid);
  return degrade_raster(gt, d, splitmix(scene.params.seed ^ splitmix(static_cast<std::uint64_t>(frame) + 17)));
}

json to_json(const DatasetConfig& c) {
  SceneParams templ = c.scene;
  templ.seed = 0;
  return json{{"n_train", c.n_train},
              {"n_val", c.n_val},
              {"base_seed", c.base_seed},
              {"scene", to_json(templ)},
              {"degradation", to_json(c.degradation)}};
}

std::vector<std::uint64_t> split_seeds(const DatasetConfig& c, const std::string& split) {
  // Validation seeds start far above any training seed.
  constexpr std::uint64_t kValOffset = 1ull << 40;
  std::vector<std::uint64_t> seeds;
  if (split == "train") {
    for (int i = 0; i < c.n_train; ++i) seeds.push_back(c.base_seed + static_cast<std::uint64_t>(i));
  } else if (split == "val") {
    for (int i = 0; i < c.n_val; ++i) seeds.push_back(c.base_seed + kValOffset + static_cast<std::uint64_t>(i));
  } else {
    throw std::invalid_argument("unknown split '" + split + "'");
  }
  return seeds;
}

namespace {

std::string scene_id(const std::string& split, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05d", split.c_str(), index);
  return buf;
}

json frame_line(const std::string& id, int frame, const Scene& scene) {
  json transform = json::array();
  for (double v : scene.transforms[frame].m) transform.push_back(v);
  return vector_map_to_json(id, scene.maps[frame], json{{"frame", frame}, {"transform", transform}});
}

template <class Sink>
void for_each_scene(const DatasetConfig& config, Sink&& sink) {
  for (const std::string split : {"train", "val"}) {
    const auto seeds = split_seeds(config, split);
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      SceneParams p = config.scene;
      p.seed = seeds[i];
      sink(split, scene_id(split, static_cast<int>(i)), seeds[i], generate_scene(p));
    }
  }
}

}  // namespace

DatasetManifest build_dataset(const DatasetConfig& config) {
  namespace fs = std::filesystem;
  config.scene.validate();
  std::error_code ec;
  fs::create_directories(config.out_dir / "scenes", ec);
  fs::create_directories(config.out_dir / "obs", ec);
  if (ec) throw std::runtime_error("cannot create dataset directory " + config.out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  json scenes = json::array();
  for_each_scene(config, [&](const std::string& split, const std::string& id, std::uint64_t seed, const Scene& scene) {
    ManifestEntry e{id, seed, split, "scenes/" + id + ".jsonl", {}};
    std::vector<json> lines;
    for (int f = 0; f < static_cast<int>(scene.maps.size()); ++f) {
      lines.push_back(frame_line(id, f, scene));
      const std::string obs_file = "obs/" + id + "_f" + std::to_string(f) + ".amap";
      write_array_file(config.out_dir / obs_file, raster_to_array(render_observation(scene, f, config.degradation)));
      e.obs_files.push_back(obs_file);
    }
    write_jsonl(config.out_dir / e.map_file, lines);
    scenes.push_back(json{{"id", id},
                          {"seed", seed},
                          {"split", split},
                          {"n_lanes", scene.n_lanes},
                          {"files", json{{"map", e.map_file}, {"obs", e.obs_files}}}});
    manifest.scenes.push_back(std::move(e));
  });

  manifest.document = json{{"version", 1},
                           {"grid", to_json(config.scene.grid)},
                           {"params", to_json(config)},
                           {"counts", json{{"train", config.n_train}, {"val", config.n_val}}},
                           {"scenes", std::move(scenes)}};
  const std::string text = manifest.document.dump(2) + "\n";
  manifest.hash = hex64(fnv1a64(text));
  write_file(config.out_dir / "manifest.json", text);
  return manifest;
}

const std::vector<SceneRecord>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  throw std::invalid_argument("unknown split '" + name + "'");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const json manifest = json::parse(read_file(dir / "manifest.json"));
  Dataset ds;
  ds.grid = grid_from_json(manifest.at("grid"));
  ds.params = manifest.at("params");
  SceneParams templ = scene_params_from_json(ds.params.at("scene"));
  for (const auto& entry : manifest.at("scenes")) {
    SceneRecord rec;
    rec.id = entry.at("id");
    rec.seed = entry.at("seed");
    rec.scene.params = templ;
    rec.scene.params.seed = rec.seed;
    rec.scene.n_lanes = entry.value("n_lanes", 0);
    for (const auto& line : read_jsonl(dir / entry.at("files").at("map").get<std::string>())) {
      rec.scene.maps.push_back(vector_map_from_json(line));
      EgoTransform t;
      const auto& m = line.at("transform");
      for (int i = 0; i < 16; ++i) t.m[i] = m.at(i).get<double>();
      t.validate();
      rec.scene.transforms.push_back(t);
    }
    for (const auto& f : entry.at("files").at("obs"))
      rec.observations.push_back(raster_from_array(read_array_file(dir / f.get<std::string>()), ds.grid));
    const std::string split = entry.at("split");
    (split == "train" ? ds.train : ds.val).push_back(std::move(rec));
  }
  return ds;
}

Dataset generate_dataset(const DatasetConfig& config) {
  config.scene.validate();
  Dataset ds;
  ds.grid = config.scene.grid;
  ds.params = to_json(config);
  for_each_scene(config, [&](const std::string& split, const std::string& id, std::uint64_t seed, Scene scene) {
    SceneRecord rec{id, seed, std::move(scene), {}};
    for (int f = 0; f < static_cast<int>(rec.scene.maps.size()); ++f)
      rec.observations.push_back(render_observation(rec.scene, f, config.degradation));
    (split == "train" ? ds.train : ds.val).push_back(std::move(rec));
  });
  return ds;
}

}  // namespace augmap
