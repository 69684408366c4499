#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "augmap/harness.hpp"

namespace augmap {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

RunConfig with_ablation(const RunConfig& base, bool aug, bool stop_d, bool stop_e, bool oracle) {
  RunConfig c = base;
  auto& a = c.model.ablation;
  a.use_augmentation = aug;
  a.stop_grad_d = stop_d;
  a.stop_grad_e = stop_e;
  a.oracle = oracle;
  a.cnn1_layers = 0;
  a.cnn2_layers = 0;
  return c;
}

std::string slug(const std::string& name) {
  std::string s;
  for (char ch : name) {
    if (std::isalnum(static_cast<unsigned char>(ch)))
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    else if (!s.empty() && s.back() != '_')
      s += '_';
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

std::string fmt(double v, int prec = 4) {
  if (std::isnan(v)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string mean_pm(const std::vector<double>& v) {
  std::vector<double> ok;
  for (double x : v)
    if (!std::isnan(x)) ok.push_back(x);
  if (ok.empty()) return "-";
  if (ok.size() == 1) return fmt(ok[0]);
  const MeanStd ms = mean_std(ok);
  return fmt(ms.mean) + " ± " + fmt(ms.std);
}

}  // namespace

std::vector<std::string> ablation_suites() { return {"gradstop", "cnn_depth", "kernel", "oracle", "range"}; }

std::vector<AblationRow> suite_rows(const std::string& suite, const RunConfig& base) {
  std::vector<AblationRow> rows;
  if (suite == "gradstop") {
    rows.push_back({"Baseline", with_ablation(base, false, false, false, false)});
    rows.push_back({"Oracle", with_ablation(base, true, false, false, true)});
    rows.push_back({"Full backprop", with_ablation(base, true, false, false, false)});
    rows.push_back({"d_raster grad stop", with_ablation(base, true, true, false, false)});
    rows.push_back({"e_raster grad stop", with_ablation(base, true, false, true, false)});
    rows.push_back({"Isolated", with_ablation(base, true, true, true, false)});
  } else if (suite == "oracle") {
    rows.push_back({"Baseline", with_ablation(base, false, false, false, false)});
    rows.push_back({"Oracle", with_ablation(base, true, false, false, true)});
  } else if (suite == "cnn_depth") {
    for (int l = 0; l <= 4; ++l) {
      RunConfig c = with_ablation(base, false, false, false, false);
      c.model.ablation.cnn1_layers = l;
      rows.push_back({"CNN layers " + std::to_string(l), c});
    }
  } else if (suite == "kernel") {
    for (int k : {1, 3, 5}) {
      RunConfig c = with_ablation(base, false, false, false, false);
      c.model.ablation.cnn1_layers = 1;
      c.model.ablation.kernel = k;
      rows.push_back({"Kernel " + std::to_string(k) + "x" + std::to_string(k), c});
    }
  } else if (suite == "range") {
    for (double s : base.ablate.range_scales) {
      RunConfig scaled = base;
      GridSpec& g = scaled.model.grid;
      g.x_min *= s;
      g.x_max *= s;
      g.y_min *= s;
      g.y_max *= s;
      scaled.data.scene.grid = g;
      scaled.data.scene.generation_margin *= s;
      scaled.data.degradation.falloff /= s;
      scaled.dataset_path.clear();
      if (s > 1.0) scaled.eval.thresholds = {1.0, 1.5, 2.0};
      std::ostringstream tag;
      tag << " @" << s << "x";
      rows.push_back({"Baseline" + tag.str(), with_ablation(scaled, false, false, false, false)});
      rows.push_back({"Isolated" + tag.str(), with_ablation(scaled, true, true, true, false)});
    }
  } else {
    throw std::invalid_argument("unknown suite '" + suite + "'");
  }
  return rows;
}

std::vector<RowResult> run_ablation(const std::string& suite, const RunConfig& base, const std::filesystem::path& out,
                                    const std::function<void(const std::string&)>& log) {
  const auto rows = suite_rows(suite, base);
  if (base.ablate.seeds.empty()) throw std::invalid_argument("ablate.seeds is empty");
  std::map<std::string, Dataset> datasets;
  std::vector<RowResult> results;
  for (const auto& row : rows) {
    RowResult r;
    r.name = row.name;
    for (std::uint64_t seed : base.ablate.seeds) {
      RunConfig cfg = row.cfg;
      cfg.seed = seed;
      r.seeds.push_back(seed);
      try {
        cfg.validate();
        const std::string key = cfg.dataset_path.string() + "|" + to_json(cfg.data).dump();
        auto it = datasets.find(key);
        if (it == datasets.end()) it = datasets.emplace(key, obtain_dataset(cfg)).first;
        const auto run_dir = out.empty() ? out : out / slug(row.name) / ("seed_" + std::to_string(seed));
        const TrainOutcome t = train(cfg, it->second, run_dir);
        const json& rep = t.record["metrics"]["final"];
        r.map.push_back(t.final_val_map);
        r.miou.push_back(rep["mIoU"].is_null() ? kNaN : rep["mIoU"].get<double>());
        std::array<double, kNumClasses> ap{};
        int c = 0;
        for (const char* k : {"AP_ped", "AP_div", "AP_bound"}) {
          const json& v = rep["per_class"][k];
          ap[c++] = v.is_null() ? kNaN : v.get<double>();
        }
        r.ap.push_back(ap);
        if (log) log(row.name + " seed " + std::to_string(seed) + ": mAP " + fmt(t.final_val_map));
      } catch (const std::exception& e) {
        r.map.push_back(kNaN);
        r.miou.push_back(kNaN);
        r.ap.push_back({kNaN, kNaN, kNaN});
        r.failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
        if (log) log(row.name + " seed " + std::to_string(seed) + " FAILED: " + e.what());
      }
    }
    results.push_back(std::move(r));
  }
  return results;
}

std::string ablation_csv(const std::vector<RowResult>& rows) {
  std::ostringstream os;
  os << "row,seed,mAP,AP_ped,AP_div,AP_bound,mIoU,status\n";
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      const bool bad = std::isnan(r.map[i]);
      os << '"' << r.name << "\"," << r.seeds[i] << ',' << (bad ? "" : fmt(r.map[i], 6));
      for (double a : r.ap[i]) os << ',' << (std::isnan(a) ? "" : fmt(a, 6));
      os << ',' << (std::isnan(r.miou[i]) ? "" : fmt(r.miou[i], 6)) << ',' << (bad ? "failed" : "ok") << '\n';
    }
  return os.str();
}

std::string ablation_text(const std::vector<RowResult>& rows) {
  std::vector<std::array<std::string, 6>> cells;
  cells.push_back({"Row", "AP_ped", "AP_div", "AP_bound", "mAP", "mIoU"});
  for (const auto& r : rows) {
    std::array<std::string, 6> line;
    line[0] = r.name + (r.failed() ? " [FAILED " + std::to_string(r.failures.size()) + "]" : "");
    for (int c = 0; c < kNumClasses; ++c) {
      std::vector<double> v;
      for (const auto& a : r.ap) v.push_back(a[c]);
      line[1 + c] = mean_pm(v);
    }
    line[4] = mean_pm(r.map);
    line[5] = mean_pm(r.miou);
    cells.push_back(line);
  }
  std::array<std::size_t, 6> width{};
  auto display = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
  };
  for (const auto& l : cells)
    for (int c = 0; c < 6; ++c) width[c] = std::max(width[c], display(l[c]));
  std::ostringstream os;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (int c = 0; c < 6; ++c) {
      const auto& s = cells[i][c];
      const std::string pad(width[c] - display(s), ' ');
      os << (c == 0 ? s + pad : pad + s) << (c == 5 ? "\n" : "  ");
    }
    if (i == 0) {
      std::size_t total = 10;
      for (auto w : width) total += w;
      os << std::string(total, '-') << '\n';
    }
  }
  for (const auto& r : rows)
    for (const auto& f : r.failures) os << r.name << " failed (" << f << ")\n";
  return os.str();
}

}  // namespace augmap
