#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "augmap/harness.hpp"

namespace augmap {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("config " + key + ": expected a number, got '" + v + "'");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw std::invalid_argument("config " + key + ": expected an integer, got '" + v + "'");
  return x;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw std::invalid_argument("config " + key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config " + key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double d) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}
std::string fmt(bool b) { return b ? "true" : "false"; }

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>)
      out += fmt(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define AUGMAP_DOUBLE(KEY, FIELD)                                                                               \
  Entry {                                                                                                        \
    KEY, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_double(k, v); },           \
        [](const RunConfig& c) { return fmt(static_cast<double>(c.FIELD)); }                                    \
  }
#define AUGMAP_INT(KEY, FIELD)                                                                                  \
  Entry {                                                                                                        \
    KEY, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = static_cast<decltype(c.FIELD)>(to_int(k, v)); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                              \
  }
#define AUGMAP_BOOL(KEY, FIELD)                                                                                 \
  Entry {                                                                                                        \
    KEY, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_bool(k, v); },             \
        [](const RunConfig& c) { return fmt(static_cast<bool>(c.FIELD)); }                                      \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{"seed",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v.empty())
                c.seed.reset();
              else
                c.seed = to_u64(k, v);
            },
            [](const RunConfig& c) { return c.seed ? std::to_string(*c.seed) : std::string(); }},
      Entry{"dataset.path", [](RunConfig& c, const std::string&, const std::string& v) { c.dataset_path = v; },
            [](const RunConfig& c) { return c.dataset_path.string(); }},
      AUGMAP_INT("dataset.n_train", data.n_train),
      AUGMAP_INT("dataset.n_val", data.n_val),
      Entry{"dataset.base_seed",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.data.base_seed = to_u64(k, v); },
            [](const RunConfig& c) { return std::to_string(c.data.base_seed); }},
      AUGMAP_DOUBLE("grid.x_min", model.grid.x_min),
      AUGMAP_DOUBLE("grid.x_max", model.grid.x_max),
      AUGMAP_DOUBLE("grid.y_min", model.grid.y_min),
      AUGMAP_DOUBLE("grid.y_max", model.grid.y_max),
      AUGMAP_INT("grid.height", model.grid.height),
      AUGMAP_INT("grid.width", model.grid.width),
      AUGMAP_INT("scene.min_lanes", data.scene.min_lanes),
      AUGMAP_INT("scene.max_lanes", data.scene.max_lanes),
      AUGMAP_DOUBLE("scene.lane_width", data.scene.lane_width),
      AUGMAP_DOUBLE("scene.min_curvature", data.scene.min_curvature),
      AUGMAP_DOUBLE("scene.max_curvature", data.scene.max_curvature),
      AUGMAP_DOUBLE("scene.p_crossing", data.scene.p_crossing),
      AUGMAP_DOUBLE("scene.p_island", data.scene.p_island),
      AUGMAP_INT("scene.frames", data.scene.frames),
      AUGMAP_DOUBLE("scene.min_speed", data.scene.min_speed),
      AUGMAP_DOUBLE("scene.max_speed", data.scene.max_speed),
      AUGMAP_DOUBLE("scene.dt", data.scene.dt),
      AUGMAP_DOUBLE("scene.generation_margin", data.scene.generation_margin),
      AUGMAP_INT("degradation.blur_kernel", data.degradation.blur_kernel),
      AUGMAP_DOUBLE("degradation.noise_sigma", data.degradation.noise_sigma),
      AUGMAP_INT("degradation.occlusion_rects", data.degradation.occlusion_rects),
      AUGMAP_DOUBLE("degradation.occlusion_min", data.degradation.occlusion_min),
      AUGMAP_DOUBLE("degradation.occlusion_max", data.degradation.occlusion_max),
      AUGMAP_BOOL("degradation.full_occlusion", data.degradation.full_occlusion),
      AUGMAP_DOUBLE("degradation.falloff", data.degradation.falloff),
      AUGMAP_INT("degradation.distractors", data.degradation.distractors),
      AUGMAP_DOUBLE("degradation.distractor_length", data.degradation.distractor_length),
      AUGMAP_INT("model.dim", model.dim),
      Entry{"model.ebev_channels",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.model.ebev_channels.clear();
              for (const auto& s : split_list(v)) c.model.ebev_channels.push_back(static_cast<int>(to_int(k, s)));
            },
            [](const RunConfig& c) { return join(c.model.ebev_channels); }},
      AUGMAP_INT("model.queries", model.queries),
      AUGMAP_INT("model.points", model.points),
      AUGMAP_INT("model.offsets", model.offsets),
      AUGMAP_INT("model.decoder_layers", model.decoder_layers),
      AUGMAP_INT("model.ffn_hidden", model.ffn_hidden),
      AUGMAP_BOOL("ablation.use_augmentation", model.ablation.use_augmentation),
      AUGMAP_BOOL("ablation.stop_grad_d", model.ablation.stop_grad_d),
      AUGMAP_BOOL("ablation.stop_grad_e", model.ablation.stop_grad_e),
      AUGMAP_BOOL("ablation.oracle", model.ablation.oracle),
      AUGMAP_INT("ablation.cnn1_layers", model.ablation.cnn1_layers),
      AUGMAP_INT("ablation.cnn2_layers", model.ablation.cnn2_layers),
      AUGMAP_INT("ablation.kernel", model.ablation.kernel),
      AUGMAP_BOOL("ablation.use_temporal", model.ablation.use_temporal),
      AUGMAP_INT("train.epochs", train.epochs),
      AUGMAP_INT("train.batch_size", train.batch_size),
      AUGMAP_DOUBLE("train.lr", train.optim.lr),
      AUGMAP_DOUBLE("train.beta1", train.optim.beta1),
      AUGMAP_DOUBLE("train.beta2", train.optim.beta2),
      AUGMAP_DOUBLE("train.eps", train.optim.eps),
      AUGMAP_DOUBLE("train.weight_decay", train.optim.weight_decay),
      AUGMAP_DOUBLE("train.grad_clip", train.optim.grad_clip),
      AUGMAP_DOUBLE("train.min_lr_ratio", train.min_lr_ratio),
      AUGMAP_INT("train.val_every", train.val_every),
      AUGMAP_INT("train.log_every", train.log_every),
      AUGMAP_DOUBLE("loss.line", loss.line),
      AUGMAP_DOUBLE("loss.cls", loss.cls),
      AUGMAP_DOUBLE("loss.trans", loss.trans),
      AUGMAP_DOUBLE("loss.focal_alpha", focal.alpha),
      AUGMAP_DOUBLE("loss.focal_gamma", focal.gamma),
      AUGMAP_DOUBLE("loss.raster", raster_weight),
      Entry{"eval.thresholds",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.eval.thresholds.clear();
              for (const auto& s : split_list(v)) c.eval.thresholds.push_back(to_double(k, s));
            },
            [](const RunConfig& c) { return join(c.eval.thresholds); }},
      AUGMAP_INT("eval.n_samples", eval.n_samples),
      AUGMAP_DOUBLE("eval.iou_binarize", eval.iou_binarize),
      AUGMAP_INT("analysis.pca_k", analysis.pca_k),
      AUGMAP_INT("analysis.bins", analysis.bins),
      AUGMAP_INT("analysis.silhouette_max_cells", analysis.silhouette_max_cells),
      Entry{"analysis.silhouette_seed",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.analysis.silhouette_seed = to_u64(k, v); },
            [](const RunConfig& c) { return std::to_string(c.analysis.silhouette_seed); }},
      Entry{"analysis.figure_scenes",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.analysis.figure_scenes.clear();
              for (const auto& s : split_list(v)) c.analysis.figure_scenes.push_back(static_cast<int>(to_int(k, s)));
            },
            [](const RunConfig& c) { return join(c.analysis.figure_scenes); }},
      Entry{"ablate.seeds",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.ablate.seeds.clear();
              for (const auto& s : split_list(v)) c.ablate.seeds.push_back(to_u64(k, s));
            },
            [](const RunConfig& c) { return join(c.ablate.seeds); }},
      Entry{"ablate.range_scales",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.ablate.range_scales.clear();
              for (const auto& s : split_list(v)) c.ablate.range_scales.push_back(to_double(k, s));
            },
            [](const RunConfig& c) { return join(c.ablate.range_scales); }},
  };
  return table;
}

#undef AUGMAP_DOUBLE
#undef AUGMAP_INT
#undef AUGMAP_BOOL

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  eval.validate();
  data.scene.validate();
  if (data.scene.grid != model.grid) throw std::invalid_argument("config: scene grid and model grid differ");
  if (data.n_train < 1 || data.n_val < 1) throw std::invalid_argument("config: dataset splits must be non-empty");
  if (train.epochs < 1 || train.batch_size < 1) throw std::invalid_argument("config: epochs and batch_size must be positive");
  if (train.optim.lr <= 0) throw std::invalid_argument("config: train.lr must be positive");
  if (train.val_every < 0 || train.log_every < 1) throw std::invalid_argument("config: bad val_every/log_every");
  if (raster_weight < 0) throw std::invalid_argument("config: loss.raster must be non-negative");
  if (focal.alpha < 0 || focal.alpha > 1 || focal.gamma < 0) throw std::invalid_argument("config: bad focal parameters");
  if (analysis.pca_k < 1 || analysis.pca_k > model.dim || analysis.bins < 1)
    throw std::invalid_argument("config: bad analysis settings");
  if (ablate.seeds.empty()) throw std::invalid_argument("config: ablate.seeds is empty");
  if (ablate.range_scales.size() < 2) throw std::invalid_argument("config: ablate.range_scales needs two extents");
  if (model.ablation.use_temporal && data.scene.frames < 2)
    throw std::invalid_argument("config: temporal mode needs at least two frames per scene");
}

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw std::invalid_argument("config: a seed is required (set `seed` or pass --seed)");
  return *seed;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& t = entries();
  const auto it = std::find_if(t.begin(), t.end(), [&](const Entry& e) { return e.key == key; });
  if (it == t.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  it->set(cfg, key, value);
  cfg.data.scene.grid = cfg.model.grid;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(n) + ": expected key = value");
    set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.data.scene.grid = base.model.grid;
  return base;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::invalid_argument("config file not found: " + path.string());
  return parse_config(read_file(path));
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : entries()) out.emplace_back(e.key, e.get(cfg));
  return out;
}

std::string config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

std::string config_hash(const RunConfig& cfg) { return hex64(fnv1a64(config_text(cfg))); }

}  // namespace augmap
