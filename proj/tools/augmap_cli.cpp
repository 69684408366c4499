#include <chrono>
#include <iostream>

#include "CLI11.hpp"
#include "augmap/harness.hpp"

using namespace augmap;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "run seed");
  cmd->add_option("--set", c.sets, "override one setting, key=value (repeatable)");
  auto* o = cmd->add_option("--out", c.out, "output directory");
  if (out_required) o->required();
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void say(const std::string& s) { std::cout << s << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"augmap: latent BEV augmentation for vector map decoding"};
  app.require_subcommand(1);

  Common gen, tr, ev, ab, an, rep;
  std::string checkpoint, compare, suite = "gradstop", split = "val";

  auto* c_gen = app.add_subcommand("generate", "build the synthetic dataset");
  add_common(c_gen, gen, true);

  auto* c_train = app.add_subcommand("train", "train one model");
  add_common(c_train, tr, true);

  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(c_eval, ev, true);
  c_eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));

  auto* c_ablate = app.add_subcommand("ablate", "run an ablation suite over the configured seeds");
  add_common(c_ablate, ab, true);
  c_ablate->add_option("--suite", suite, "suite name")->check(CLI::IsMember(ablation_suites()));

  auto* c_an = app.add_subcommand("analyze", "latent grid analysis of a checkpoint");
  add_common(c_an, an, true);
  c_an->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  c_an->add_option("--compare", compare, "second checkpoint for the Welch comparison")->check(CLI::ExistingFile);

  auto* c_rep = app.add_subcommand("report", "summarize the artifacts under --out as Markdown");
  add_common(c_rep, rep, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_gen) {
      RunConfig cfg = resolve(gen);
      if (gen.seed) cfg.data.base_seed = *gen.seed;
      cfg.validate();
      cfg.data.out_dir = gen.out;
      const auto m = build_dataset(cfg.data);
      say("wrote " + std::to_string(m.scenes.size()) + " scenes to " + gen.out + " (manifest " + m.hash + ")");
    } else if (*c_train) {
      const RunConfig cfg = resolve(tr);
      cfg.require_seed();
      const Dataset data = obtain_dataset(cfg);
      const auto t = train(cfg, data, tr.out);
      write_manifest(tr.out, "train", {{"config_hash", config_hash(cfg)}});
      say("final val mAP " + std::to_string(t.final_val_map) + ", best " + std::to_string(*t.best_val_map) +
          ", checkpoint " + t.final_checkpoint.string());
    } else if (*c_eval) {
      RunConfig cfg = resolve(ev);
      auto model = load_model(checkpoint, cfg);
      const Dataset data = obtain_dataset(cfg);
      const auto scenes = prepare_split(data.split(split), cfg.model);
      const auto t0 = std::chrono::steady_clock::now();
      const EvalOutcome r = evaluate(*model, scenes, cfg);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      json rep = r.report;
      rep["split"] = split;
      rep["checkpoint"] = checkpoint;
      rep["wall_clock_s"] = secs;
      std::filesystem::create_directories(ev.out);
      write_file(std::filesystem::path(ev.out) / "eval.json", rep.dump(2));
      write_manifest(ev.out, "eval");
      say(split + " mAP " + std::to_string(r.score.mAP) +
          (r.has_raster ? ", mIoU " + std::to_string(r.iou.mIoU) : std::string()) + " over " +
          std::to_string(rep["n_frames"].get<int>()) + " frames (" + std::to_string(secs) + " s)");
    } else if (*c_ablate) {
      const RunConfig cfg = resolve(ab);
      const std::filesystem::path out = ab.out;
      std::filesystem::create_directories(out);
      const auto rows = run_ablation(suite, cfg, out, say);
      write_file(out / ("ablation_" + suite + ".csv"), ablation_csv(rows));
      const std::string text = ablation_text(rows);
      write_file(out / ("ablation_" + suite + ".txt"), text);
      write_manifest(out, "ablate", {{"suite", suite}, {"config_hash", config_hash(cfg)}});
      std::cout << text;
    } else if (*c_an) {
      RunConfig cfg = resolve(an);
      const std::filesystem::path out = an.out;
      std::filesystem::create_directories(out);
      auto run = [&](const std::string& ckpt, const std::filesystem::path& figures) {
        RunConfig c = cfg;
        auto model = load_model(ckpt, c);
        const Dataset data = obtain_dataset(c);
        const auto scenes = prepare_split(data.val, c.model);
        const EvalOutcome e = evaluate(*model, scenes, c);
        return analyze_latents(*model, scenes, e.per_scene, c, figures);
      };
      AnalysisResult a = run(checkpoint, out / "figures");
      a.report["checkpoint"] = checkpoint;
      if (!compare.empty()) {
        AnalysisResult b = run(compare, out / "figures_compare");
        a.report["comparison"] = compare_analyses(a, b);
        a.report["comparison"]["checkpoint_b"] = compare;
        b.report["checkpoint"] = compare;
        write_file(out / "analysis_compare.json", b.report.dump(2));
      }
      write_file(out / "analysis.json", a.report.dump(2));
      write_manifest(out, "analyze");
      std::cout << a.report["aggregates"].dump(2) << "\n";
      if (a.report.contains("comparison")) std::cout << a.report["comparison"].dump(2) << "\n";
    } else if (*c_rep) {
      const std::string md = build_report(rep.out);
      write_file(std::filesystem::path(rep.out) / "report.md", md);
      std::cout << md;
    }
  } catch (const TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
