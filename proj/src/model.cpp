#include "augmap/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "augmap/latent_analysis.hpp"
#include "augmap/losses.hpp"

namespace augmap {

void AblationConfig::validate() const {
  if (oracle && !use_augmentation) throw std::invalid_argument("ablation: oracle requires use_augmentation");
  if ((stop_grad_d || stop_grad_e) && !use_augmentation)
    throw std::invalid_argument("ablation: gradient stops require use_augmentation");
  if (kernel != 1 && kernel != 3 && kernel != 5) throw std::invalid_argument("ablation: kernel must be 1, 3 or 5");
  if (cnn1_layers < 0 || cnn2_layers < 0) throw std::invalid_argument("ablation: negative layer count");
}

json to_json(const AblationConfig& a) {
  return json{{"use_augmentation", a.use_augmentation}, {"stop_grad_d", a.stop_grad_d},
              {"stop_grad_e", a.stop_grad_e},           {"oracle", a.oracle},
              {"cnn1_layers", a.cnn1_layers},           {"cnn2_layers", a.cnn2_layers},
              {"kernel", a.kernel},                     {"use_temporal", a.use_temporal}};
}

AblationConfig ablation_from_json(const json& j) {
  AblationConfig a;
  a.use_augmentation = j.at("use_augmentation").get<bool>();
  a.stop_grad_d = j.at("stop_grad_d").get<bool>();
  a.stop_grad_e = j.at("stop_grad_e").get<bool>();
  a.oracle = j.at("oracle").get<bool>();
  a.cnn1_layers = j.at("cnn1_layers").get<int>();
  a.cnn2_layers = j.at("cnn2_layers").get<int>();
  a.kernel = j.at("kernel").get<int>();
  a.use_temporal = j.at("use_temporal").get<bool>();
  a.validate();
  return a;
}

void ModelConfig::validate() const {
  grid.validate();
  ablation.validate();
  if (obs_channels < 1) throw std::invalid_argument("model: obs_channels must be positive");
  if (dim < 8 || dim % 8 != 0) throw std::invalid_argument("model: dim must be a positive multiple of 8");
  for (int c : ebev_channels)
    if (c < 1) throw std::invalid_argument("model: e_bev widths must be positive");
  if (queries < 1 || points < 2 || offsets < 1 || decoder_layers < 1 || ffn_hidden < 1)
    throw std::invalid_argument("model: decoder sizes must be positive (points >= 2)");
}

nn::DecoderConfig ModelConfig::decoder() const {
  nn::DecoderConfig d;
  d.dim = dim;
  d.queries = queries;
  d.points = points;
  d.offsets = offsets;
  d.layers = decoder_layers;
  d.hidden = ffn_hidden;
  d.grid = grid;
  return d;
}

json to_json(const ModelConfig& c) {
  return json{{"grid", to_json(c.grid)},
              {"obs_channels", c.obs_channels},
              {"dim", c.dim},
              {"ebev_channels", c.ebev_channels},
              {"queries", c.queries},
              {"points", c.points},
              {"offsets", c.offsets},
              {"decoder_layers", c.decoder_layers},
              {"ffn_hidden", c.ffn_hidden},
              {"ablation", to_json(c.ablation)}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.grid = grid_from_json(j.at("grid"));
  c.obs_channels = j.at("obs_channels").get<int>();
  c.dim = j.at("dim").get<int>();
  c.ebev_channels = j.at("ebev_channels").get<std::vector<int>>();
  c.queries = j.at("queries").get<int>();
  c.points = j.at("points").get<int>();
  c.offsets = j.at("offsets").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.ablation = ablation_from_json(j.at("ablation"));
  c.validate();
  return c;
}

WarpTaps warp_taps(const GridSpec& grid, const EgoTransform& prev_to_cur) {
  const EgoTransform inv = prev_to_cur.inverse();
  const int H = grid.height, W = grid.width;
  WarpTaps t;
  t.idx.resize(static_cast<std::size_t>(H) * W);
  t.w.resize(t.idx.size());
  for (int row = 0; row < H; ++row)
    for (int col = 0; col < W; ++col) {
      const Point2 p = inv.apply(grid.cell_center(row, col));
      const double r = grid.row_coord(p.x) - 0.5, c = grid.col_coord(p.y) - 0.5;
      const double r0 = std::floor(r), c0 = std::floor(c), fr = r - r0, fc = c - c0;
      const int ir = static_cast<int>(r0), ic = static_cast<int>(c0);
      const int rr[4] = {ir, ir + 1, ir, ir + 1};
      const int cc[4] = {ic, ic, ic + 1, ic + 1};
      const double w[4] = {(1 - fr) * (1 - fc), fr * (1 - fc), (1 - fr) * fc, fr * fc};
      const std::size_t p_idx = static_cast<std::size_t>(row) * W + col;
      for (int k = 0; k < 4; ++k) {
        const bool inside = rr[k] >= 0 && rr[k] < H && cc[k] >= 0 && cc[k] < W;
        t.idx[p_idx][k] = inside ? rr[k] * W + cc[k] : -1;
        t.w[p_idx][k] = inside ? w[k] : 0.0;
      }
    }
  return t;
}

template <class T>
double batch_dice(const nn::Tensor<T>& probs, const std::vector<const RasterMap*>& gts, nn::Tensor<T>* grad) {
  if (static_cast<int>(gts.size()) != probs.n) throw std::invalid_argument("batch_dice: batch size mismatch");
  const int C = probs.c, HW = probs.h * probs.w;
  if (grad) grad->zero_like(probs);
  double total = 0.0;
  std::vector<T> p(static_cast<std::size_t>(C) * HW), g(p.size()), dg(p.size());
  for (int b = 0; b < probs.n; ++b) {
    if (gts[b]->channels != C || static_cast<int>(gts[b]->plane()) != HW)
      throw std::invalid_argument("batch_dice: GT raster shape mismatch");
    for (int c = 0; c < C; ++c)
      for (int q = 0; q < HW; ++q) {
        p[static_cast<std::size_t>(c) * HW + q] = probs.m(c, b * HW + q);
        g[static_cast<std::size_t>(c) * HW + q] = static_cast<T>(gts[b]->data[static_cast<std::size_t>(c) * HW + q]);
      }
    std::fill(dg.begin(), dg.end(), T(0));
    total += dice_loss<T>(p, g, C, grad ? std::span<T>(dg) : std::span<T>());
    if (grad)
      for (int c = 0; c < C; ++c)
        for (int q = 0; q < HW; ++q) grad->m(c, b * HW + q) = dg[static_cast<std::size_t>(c) * HW + q] / probs.n;
  }
  return total / probs.n;
}

template double batch_dice<float>(const nn::Tensor<float>&, const std::vector<const RasterMap*>&, nn::Tensor<float>*);
template double batch_dice<double>(const nn::Tensor<double>&, const std::vector<const RasterMap*>&,
                                   nn::Tensor<double>*);

template <class T>
LatentGrid to_latent(const nn::Tensor<T>& t, int b, const GridSpec& grid) {
  if (t.h != grid.height || t.w != grid.width) throw std::invalid_argument("to_latent: grid mismatch");
  LatentGrid g(grid, t.c);
  g.data = sample_values(t, b);
  return g;
}

template LatentGrid to_latent<float>(const nn::Tensor<float>&, int, const GridSpec&);
template LatentGrid to_latent<double>(const nn::Tensor<double>&, int, const GridSpec&);

namespace {

constexpr char kCheckpointMagic[4] = {'A', 'M', 'C', 'K'};

struct NamedArray {
  std::string name;
  nn::Mat<float>* mat;
};

std::vector<NamedArray> checkpoint_arrays(Model<float>& model, std::vector<nn::Mat<float>>& stats_storage,
                                          std::vector<nn::BatchNorm<float>*>& norms) {
  std::vector<NamedArray> out;
  for (auto* p : model.params()) out.push_back({p->name, &p->value});
  norms = model.norms();
  stats_storage.clear();
  stats_storage.reserve(norms.size() * 2);
  for (auto* n : norms) {
    const std::string base = n->gamma.name.substr(0, n->gamma.name.size() - std::strlen(".gamma"));
    stats_storage.push_back(n->running_mean);
    out.push_back({base + ".running_mean", &stats_storage.back()});
    stats_storage.push_back(n->running_var);
    out.push_back({base + ".running_var", &stats_storage.back()});
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model<float>& model, const json& extra) {
  std::vector<nn::Mat<float>> stats;
  std::vector<nn::BatchNorm<float>*> norms;
  const auto arrays = checkpoint_arrays(model, stats, norms);
  json header{{"version", kCheckpointVersion}, {"config", to_json(model.config())}, {"extra", extra}};
  header["arrays"] = json::array();
  for (const auto& a : arrays) header["arrays"].push_back({{"name", a.name}, {"rows", a.mat->rows()}, {"cols", a.mat->cols()}});
  const std::string text = header.dump();
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, 4);
  const std::uint32_t len = static_cast<std::uint32_t>(text.size());
  os.write(reinterpret_cast<const char*>(&len), 4);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : arrays) {
    FloatArray fa;
    fa.height = static_cast<std::uint32_t>(a.mat->rows());
    fa.width = static_cast<std::uint32_t>(a.mat->cols());
    fa.channels = 1;
    fa.values.resize(fa.size());
    for (Eigen::Index r = 0; r < a.mat->rows(); ++r)
      for (Eigen::Index c = 0; c < a.mat->cols(); ++c) fa.values[r * a.mat->cols() + c] = (*a.mat)(r, c);
    write_array(os, fa);
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

namespace {

json read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[4];
  std::uint32_t len = 0;
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error(path.string() + " is not a checkpoint");
  if (!is.read(reinterpret_cast<char*>(&len), 4)) throw std::runtime_error("truncated checkpoint " + path.string());
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw std::runtime_error("truncated checkpoint " + path.string());
  json header = json::parse(text);
  if (header.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path.string());
  return header;
}

}  // namespace

json read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_header(is, path);
}

void load_checkpoint(const std::filesystem::path& path, Model<float>& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  const json header = read_header(is, path);
  if (header.at("config") != to_json(model.config()))
    throw std::runtime_error("checkpoint config does not match the model config: " + path.string());
  std::vector<nn::Mat<float>> stats;
  std::vector<nn::BatchNorm<float>*> norms;
  const auto arrays = checkpoint_arrays(model, stats, norms);
  const json& listed = header.at("arrays");
  if (listed.size() != arrays.size()) throw std::runtime_error("checkpoint array count mismatch");
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const FloatArray fa = read_array(is);
    if (listed[i].at("name").get<std::string>() != arrays[i].name || fa.height != arrays[i].mat->rows() ||
        fa.width != arrays[i].mat->cols() || fa.channels != 1)
      throw std::runtime_error("checkpoint array mismatch at " + arrays[i].name);
    for (Eigen::Index r = 0; r < arrays[i].mat->rows(); ++r)
      for (Eigen::Index c = 0; c < arrays[i].mat->cols(); ++c)
        (*arrays[i].mat)(r, c) = fa.values[r * arrays[i].mat->cols() + c];
  }
  for (std::size_t k = 0; k < norms.size(); ++k) {
    norms[k]->running_mean = stats[2 * k];
    norms[k]->running_var = stats[2 * k + 1];
  }
}

}  // namespace augmap
