#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "augmap/harness.hpp"

using namespace augmap;

namespace {

RunConfig tiny_run() {
  RunConfig c = parse_config(R"(
seed = 3
dataset.n_train = 8
dataset.n_val = 3
grid.height = 20
grid.width = 10
model.dim = 16
model.ebev_channels = 8
model.queries = 6
model.points = 4
model.ffn_hidden = 16
train.epochs = 2
train.val_every = 1
)");
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("augmap_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, ParsesCommentsListsAndOverrides) {
  const RunConfig c = parse_config("# comment\nseed = 9  # trailing\n\neval.thresholds = 1, 2\nablation.use_augmentation = true\n");
  EXPECT_EQ(*c.seed, 9u);
  EXPECT_EQ(c.eval.thresholds, (std::vector<double>{1.0, 2.0}));
  EXPECT_TRUE(c.model.ablation.use_augmentation);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config("nope = 1\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("train.epochs = two\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("ablation.oracle = maybe\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("train.epochs\n"), std::invalid_argument);
}

TEST(Config, ValidationCatchesInconsistentSettings) {
  RunConfig c = parse_config("ablation.stop_grad_d = true\n");
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = parse_config("ablate.range_scales = 1\n");
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(RunConfig{}.require_seed(), std::invalid_argument);
}

TEST(Config, TextRoundTripsAndHashTracksChanges) {
  RunConfig c = tiny_run();
  c.loss.trans = 0.3;
  const RunConfig back = parse_config(config_text(c));
  EXPECT_EQ(config_text(back), config_text(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  set_config_value(c, "train.lr", "0.001");
  EXPECT_NE(config_hash(c), config_hash(back));
}

TEST(Config, GridKeysReachGeneratorAndModel) {
  const RunConfig c = tiny_run();
  EXPECT_EQ(c.model.grid.height, 20);
  EXPECT_EQ(c.data.scene.grid, c.model.grid);
}

TEST(AuxTarget, AlignsPreviousGeometryWithGtOrder) {
  Polyline gt{MapClass::Div, {{-6, 0}, {-2, 0}, {2, 0}, {6, 0}}, false};
  VectorMap prev;
  // Previous frame: the same line stored in reverse, shifted 1 m back.
  prev.polylines.push_back({MapClass::Div, {{7, 0.2}, {-5, 0.2}}, false});
  prev.polylines.push_back({MapClass::Bound, {{-6, 0}, {6, 0}}, false});
  const auto t = EgoTransform::from_yaw_translation(0.0, -1.0, 0.0);
  const auto aux = aux_target(gt, prev, t, 4);
  ASSERT_EQ(aux.size(), 4u);
  EXPECT_NEAR(aux[0].x, -6.0, 1e-9);
  EXPECT_NEAR(aux[3].x, 6.0, 1e-9);
  EXPECT_NEAR(aux[1].y, 0.2, 1e-9);
}

TEST(AuxTarget, FallsBackToGtWhenClassIsMissing) {
  Polyline gt{MapClass::Ped, {{0, 0}, {2, 0}, {2, 2}, {0, 2}}, true};
  VectorMap prev;
  prev.polylines.push_back({MapClass::Div, {{-6, 0}, {6, 0}}, false});
  EXPECT_EQ(aux_target(gt, prev, EgoTransform::identity(), 4), gt.points);
}

TEST(Ablation, SuiteRowsAndFlags) {
  const RunConfig base;
  const auto g = suite_rows("gradstop", base);
  ASSERT_EQ(g.size(), 6u);
  EXPECT_EQ(g[0].name, "Baseline");
  EXPECT_FALSE(g[0].cfg.model.ablation.use_augmentation);
  EXPECT_TRUE(g[1].cfg.model.ablation.oracle);
  const auto& iso = g[5].cfg.model.ablation;
  EXPECT_TRUE(iso.use_augmentation && iso.stop_grad_d && iso.stop_grad_e && !iso.oracle);
  for (const auto& r : g) EXPECT_NO_THROW(r.cfg.model.ablation.validate());
  EXPECT_EQ(suite_rows("cnn_depth", base).size(), 5u);
  EXPECT_EQ(suite_rows("kernel", base)[2].cfg.model.ablation.kernel, 5);
  const auto range = suite_rows("range", base);
  ASSERT_EQ(range.size(), 4u);
  EXPECT_DOUBLE_EQ(range[2].cfg.model.grid.x_max, 30.0);
  EXPECT_EQ(range[2].cfg.model.grid.height, base.model.grid.height);
  EXPECT_DOUBLE_EQ(range[2].cfg.data.degradation.falloff, base.data.degradation.falloff / 2);
  EXPECT_THROW(suite_rows("nope", base), std::invalid_argument);
}

TEST(Ablation, TablesMarkFailedRows) {
  RowResult ok{"Baseline", {1, 2}, {0.5, 0.7}, {NAN, NAN}, {{0.4, 0.5, 0.6}, {0.6, 0.7, 0.8}}, {}};
  RowResult bad{"Oracle", {1, 2}, {0.9, NAN}, {1.0, NAN}, {{0.9, 0.9, 0.9}, {NAN, NAN, NAN}}, {"seed 2: boom"}};
  const std::string text = ablation_text({ok, bad});
  EXPECT_NE(text.find("0.6000 ± 0.1414"), std::string::npos);
  EXPECT_NE(text.find("Oracle [FAILED 1]"), std::string::npos);
  EXPECT_NE(text.find("seed 2: boom"), std::string::npos);
  const std::string csv = ablation_csv({ok, bad});
  EXPECT_NE(csv.find("\"Oracle\",2,,,,,,failed"), std::string::npos);
}

TEST(Ablation, FailingRowDoesNotStopTheSuite) {
  RunConfig base = tiny_run();
  base.ablate.seeds = {1};
  base.train.epochs = 1;
  base.dataset_path = "/nonexistent/augmap";
  const auto rows = run_ablation("oracle", base, {});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].failed());
  EXPECT_TRUE(rows[1].failed());
}

TEST(Training, DeterministicAndWritesArtifacts) {
  const RunConfig cfg = tiny_run();
  const Dataset data = obtain_dataset(cfg);
  const auto dir = temp_dir("train");
  const TrainOutcome a = train(cfg, data, dir);
  const TrainOutcome b = train(cfg, data, {});
  EXPECT_EQ(a.final_val_map, b.final_val_map);
  EXPECT_EQ(a.record["metrics"], b.record["metrics"]);
  for (const char* f : {"train_log.jsonl", "final.ckpt", "best.ckpt", "run_record.json", "config.txt"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const json rec = json::parse(read_file(dir / "run_record.json"));
  EXPECT_EQ(rec["loss_weights"]["lambda1"], 50.0);
  EXPECT_EQ(rec["loss_weights"]["lambda2"], 5.0);
  EXPECT_EQ(rec["loss_weights"]["lambda3"], 0.1);
  EXPECT_EQ(rec["metrics"]["history"].size(), 2u);
  const auto log = read_jsonl(dir / "train_log.jsonl");
  ASSERT_EQ(log.size(), 4u);  // 8 scenes, batch 4, 2 epochs
  for (const char* k : {"step", "total", "line", "class", "trans", "dice"}) EXPECT_TRUE(log[0].contains(k)) << k;

  RunConfig loaded_cfg = cfg;
  auto model = load_model(dir / "final.ckpt", loaded_cfg);
  const auto val = prepare_split(data.val, loaded_cfg.model);
  const EvalOutcome e1 = evaluate(*model, val, loaded_cfg);
  const EvalOutcome e2 = evaluate(*model, val, loaded_cfg);
  EXPECT_EQ(e1.report, e2.report);
  EXPECT_EQ(e1.score.mAP, a.final_val_map);
  EXPECT_EQ(e1.per_scene.size(), 3u);
  std::filesystem::remove_all(dir);
}

TEST(Training, OracleReportsPerfectRasterIou) {
  RunConfig cfg = tiny_run();
  cfg.train.epochs = 1;
  set_config_value(cfg, "ablation.use_augmentation", "true");
  set_config_value(cfg, "ablation.oracle", "true");
  const TrainOutcome t = train(cfg, obtain_dataset(cfg), {});
  EXPECT_EQ(t.record["metrics"]["final"]["mIoU"], 1.0);
}

TEST(Training, RejectsMissingSeedAndEmptySplit) {
  RunConfig cfg = tiny_run();
  cfg.seed.reset();
  const Dataset data = obtain_dataset(tiny_run());
  EXPECT_THROW(train(cfg, data, {}), std::invalid_argument);
  Model<float> m(tiny_run().model, 1);
  EXPECT_THROW(evaluate(m, {}, tiny_run()), std::invalid_argument);
}

TEST(Training, NonFiniteLossAbortsWithDump) {
  RunConfig cfg = tiny_run();
  cfg.train.epochs = 1;
  Dataset data = obtain_dataset(cfg);
  for (auto& s : data.train)
    for (auto& o : s.observations) o.data[0] = std::numeric_limits<float>::quiet_NaN();
  const auto dir = temp_dir("nan");
  try {
    train(cfg, data, dir);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos);
  }
  const json dump = json::parse(read_file(dir / "nan_dump.json"));
  EXPECT_EQ(dump["batch"], 0);
  EXPECT_EQ(dump["scenes"].size(), 4u);
  std::filesystem::remove_all(dir);
}

TEST(Analysis, SelfComparisonAndFigures) {
  const RunConfig cfg = tiny_run();
  const Dataset data = obtain_dataset(cfg);
  Model<float> m(cfg.model, 4);
  const auto val = prepare_split(data.val, cfg.model);
  const EvalOutcome e = evaluate(m, val, cfg);
  const auto dir = temp_dir("figs");
  const AnalysisResult a = analyze_latents(m, val, e.per_scene, cfg, dir);
  const AnalysisResult b = analyze_latents(m, val, e.per_scene, cfg, {});
  ASSERT_EQ(a.scenes.size(), 3u);
  for (std::size_t i = 0; i < a.scenes.size(); ++i) EXPECT_EQ(a.scenes[i].mi, b.scenes[i].mi);
  const json cmp = compare_analyses(a, b);
  EXPECT_EQ(cmp["mi"]["t"], 0.0);
  EXPECT_EQ(cmp["mi"]["p"], 0.5);
  for (int s : {0, 1, 2}) {
    const std::string id = val[s].id;
    for (const std::string suffix : {"_gt_raster.ppm", "_vector_overlay.ppm", "_pc1.pgm", "_pc2.pgm", "_pc3.pgm"})
      EXPECT_TRUE(std::filesystem::exists(dir / (id + suffix))) << id + suffix;
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "scatter_map_vs_mi.ppm"));
  EXPECT_THROW(analyze_latents(m, val, {}, cfg, {}), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST(Coverage, RasterDenseVectorSparse) {
  RunConfig cfg = tiny_run();
  set_config_value(cfg, "ablation.use_augmentation", "true");
  const Dataset data = obtain_dataset(cfg);
  Model<float> m(cfg.model, 4);
  const auto val = prepare_split(data.val, cfg.model);
  const Coverage c = gradient_coverage(m, val[0].frames[0], cfg);
  ASSERT_TRUE(c.raster.has_value());
  EXPECT_EQ(*c.raster, 1.0);
  EXPECT_LT(c.vector, *c.raster);
  Model<float> base(tiny_run().model, 4);
  EXPECT_FALSE(gradient_coverage(base, val[0].frames[0], tiny_run()).raster.has_value());
}

TEST(Report, SummarizesArtifactsAndManifest) {
  const auto dir = temp_dir("report");
  std::filesystem::create_directories(dir / "ab");
  write_file(dir / "ab" / "ablation_oracle.txt", "Row  mAP\nBaseline  0.5\n");
  write_manifest(dir, "ablate", {{"suite", "oracle"}});
  const json m = json::parse(read_file(dir / "manifest.json"));
  EXPECT_EQ(m["command"], "ablate");
  ASSERT_EQ(m["files"].size(), 1u);
  EXPECT_EQ(m["files"][0]["path"], "ab/ablation_oracle.txt");
  const std::string md = build_report(dir);
  EXPECT_NE(md.find("Baseline  0.5"), std::string::npos);
  EXPECT_THROW(build_report(dir / "missing"), std::invalid_argument);
  std::filesystem::remove_all(dir);
}
