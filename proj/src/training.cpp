#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "augmap/harness.hpp"

namespace augmap {

Dataset obtain_dataset(const RunConfig& cfg) {
  if (cfg.dataset_path.empty()) return generate_dataset(cfg.data);
  if (!std::filesystem::exists(cfg.dataset_path / "manifest.json"))
    throw std::invalid_argument("dataset not found at " + cfg.dataset_path.string() + " (run `generate` first)");
  Dataset d = load_dataset(cfg.dataset_path);
  if (d.grid != cfg.model.grid) throw std::invalid_argument("dataset grid does not match the configured grid");
  return d;
}

std::vector<Point2> aux_target(const Polyline& gt_resampled, const VectorMap& prev_map, const EgoTransform& prev_to_cur,
                               int n_points) {
  const Polyline* best = nullptr;
  Polyline best_line;
  double best_d = 0.0;
  for (const auto& p : prev_map.polylines) {
    if (p.cls != gt_resampled.cls || p.closed != gt_resampled.closed) continue;
    Polyline moved = p;
    for (auto& q : moved.points) q = prev_to_cur.apply(q);
    moved = resample_polyline(moved, n_points);
    const double d = chamfer_distance(moved, gt_resampled);
    if (!best || d < best_d) {
      best = &p;
      best_d = d;
      best_line = std::move(moved);
    }
  }
  if (!best) return gt_resampled.points;
  const LineLossResult ll = line_loss(best_line.points, gt_resampled.points, gt_resampled.closed);
  std::vector<Point2> aligned(n_points);
  for (int j = 0; j < n_points; ++j) aligned[ll.order.index(j, n_points)] = best_line.points[j];
  return aligned;
}

std::vector<PreparedScene> prepare_split(const std::vector<SceneRecord>& scenes, const ModelConfig& model) {
  const bool temporal = model.ablation.use_temporal;
  std::vector<PreparedScene> out;
  out.reserve(scenes.size());
  for (const auto& rec : scenes) {
    PreparedScene ps;
    ps.id = rec.id;
    const int F = static_cast<int>(rec.observations.size());
    for (int t = temporal ? 1 : 0; t < F; ++t) {
      PreparedFrame f;
      f.observation = &rec.observations[t];
      f.prev_observation = t > 0 ? &rec.observations[t - 1] : nullptr;
      f.transform = rec.scene.transforms[t];
      f.gt = &rec.scene.maps[t];
      f.gt_raster = rasterize_map(rec.scene.maps[t], model.grid);
      if (temporal)
        for (const auto& g : resample_targets(rec.scene.maps[t], model.points))
          f.aux_targets.push_back(aux_target(g, rec.scene.maps[t - 1], f.transform, model.points));
      ps.frames.push_back(std::move(f));
    }
    if (ps.frames.empty()) throw std::invalid_argument("scene " + rec.id + " has no usable frames");
    out.push_back(std::move(ps));
  }
  return out;
}

namespace {

FrameInput frame_input(const PreparedFrame& f) {
  return {f.observation, &f.gt_raster, f.prev_observation, f.transform};
}

}  // namespace

EvalOutcome evaluate(Model<float>& model, const std::vector<PreparedScene>& scenes, const RunConfig& cfg) {
  if (scenes.empty()) throw std::invalid_argument("evaluate: split is empty");
  const ModelConfig& mc = model.config();
  const bool raster = mc.ablation.use_augmentation;
  std::vector<const PreparedFrame*> frames;
  std::vector<int> scene_of;
  for (std::size_t s = 0; s < scenes.size(); ++s)
    for (const auto& f : scenes[s].frames) {
      frames.push_back(&f);
      scene_of.push_back(static_cast<int>(s));
    }
  std::vector<ScoredPolyline> all;
  std::vector<std::vector<ScoredPolyline>> per_scene(scenes.size());
  std::vector<std::vector<VectorMap>> scene_gts(scenes.size());
  std::vector<VectorMap> gts;
  IouAccumulator acc;
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, cfg.train.batch_size * 2));
  for (std::size_t start = 0; start < frames.size(); start += chunk) {
    const std::size_t end = std::min(frames.size(), start + chunk);
    std::vector<FrameInput> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(frame_input(*frames[i]));
    const auto out = model.forward(batch, false);
    for (std::size_t i = start; i < end; ++i) {
      const int b = static_cast<int>(i - start);
      const MapPrediction pred = model.prediction(out, b);
      const int s = scene_of[i];
      const int local = static_cast<int>(scene_gts[s].size());
      for (auto& sp : score_predictions(pred, static_cast<int>(i))) all.push_back(sp);
      for (auto& sp : score_predictions(pred, local)) per_scene[s].push_back(std::move(sp));
      gts.push_back(*frames[i]->gt);
      scene_gts[s].push_back(*frames[i]->gt);
      if (raster) acc.add(to_raster(out.raster_probs, b, mc.grid), frames[i]->gt_raster, cfg.eval.iou_binarize);
    }
  }
  EvalOutcome r;
  r.score = map_score(all, gts, cfg.eval);
  r.has_raster = raster;
  if (raster) r.iou = acc.result();
  r.report = eval_report(mc.grid, cfg.eval, r.score, r.iou, static_cast<int>(frames.size()));
  if (!raster) r.report["mIoU"] = nullptr;
  r.report["per_scene"] = json::array();
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const double m = map_score(per_scene[s], scene_gts[s], cfg.eval).mAP;
    r.per_scene.push_back({scenes[s].id, m});
    r.report["per_scene"].push_back({{"id", scenes[s].id}, {"mAP", m}});
  }
  return r;
}

std::unique_ptr<Model<float>> load_model(const std::filesystem::path& checkpoint, RunConfig& cfg) {
  const json header = read_checkpoint_header(checkpoint);
  cfg.model = model_config_from_json(header.at("config"));
  cfg.data.scene.grid = cfg.model.grid;
  auto model = std::make_unique<Model<float>>(cfg.model, 0);
  load_checkpoint(checkpoint, *model);
  return model;
}

TrainOutcome train(const RunConfig& cfg, const Dataset& data, const std::filesystem::path& out) {
  cfg.validate();
  const std::uint64_t seed = cfg.require_seed();
  if (data.grid != cfg.model.grid) throw std::invalid_argument("train: dataset grid does not match the model grid");
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig& mc = cfg.model;
  const AblationConfig& ab = mc.ablation;
  const auto train_scenes = prepare_split(data.train, mc);
  const auto val_scenes = prepare_split(data.val, mc);
  if (train_scenes.empty()) throw std::invalid_argument("train: training split is empty");

  TrainOutcome result;
  result.model = std::make_unique<Model<float>>(mc, seed);
  Model<float>& model = *result.model;
  const auto params = model.params();
  nn::AdamW<float> opt(cfg.train.optim);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);

  const bool write = !out.empty();
  std::ofstream log;
  if (write) {
    std::filesystem::create_directories(out);
    log.open(out / "train_log.jsonl");
    if (!log) throw std::runtime_error("cannot write " + (out / "train_log.jsonl").string());
  }

  const int B = cfg.train.batch_size;
  const int n = static_cast<int>(train_scenes.size());
  const long steps_per_epoch = (n + B - 1) / B;
  const long total_steps = steps_per_epoch * cfg.train.epochs;
  const bool dice_on = ab.use_augmentation && !ab.oracle && cfg.raster_weight > 0;
  long step = 0;
  json history = json::array();
  EvalOutcome last_eval;

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> frame_pick(n);
    for (int i = 0; i < n; ++i) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(train_scenes[order[i]].frames.size()) - 1);
      frame_pick[i] = pick(rng);
    }
    for (int start = 0; start < n; start += B, ++step) {
      const int end = std::min(n, start + B);
      const int nb = end - start;
      std::vector<FrameInput> batch;
      std::vector<const PreparedFrame*> frames;
      for (int i = start; i < end; ++i) {
        frames.push_back(&train_scenes[order[i]].frames[frame_pick[i]]);
        batch.push_back(frame_input(*frames.back()));
      }
      nn::zero_grads(params);
      const auto fwd = model.forward(batch, true);

      StepLog sl;
      sl.step = step;
      std::vector<std::vector<nn::DecoderLayerGrad<float>>> vgrads(nb);
      bool diverged = false;
      try {
        for (int b = 0; b < nb; ++b)
          for (int l = 0; l < mc.decoder_layers; ++l) {
            const MapPrediction pred = model.layer_prediction(fwd, b, l);
            const auto r = vector_loss(pred, *frames[b]->gt, cfg.loss, cfg.focal,
                                       ab.use_temporal ? &frames[b]->aux_targets : nullptr);
            sl.line += r.line / nb;
            sl.cls += r.cls / nb;
            sl.trans += r.trans / nb;
            auto g = to_layer_grad<float>(r.grad, mc.points, ab.use_temporal);
            const float scale = 1.0f / static_cast<float>(nb);
            g.points *= scale;
            g.classes *= scale;
            if (g.aux.size()) g.aux *= scale;
            vgrads[b].push_back(std::move(g));
          }
      } catch (const std::invalid_argument&) {
        diverged = true;
      }
      nn::Tensor<float> dprob;
      if (dice_on) {
        std::vector<const RasterMap*> gts;
        for (const auto* f : frames) gts.push_back(&f->gt_raster);
        sl.dice = cfg.raster_weight * batch_dice(fwd.raster_probs, gts, &dprob);
        dprob.m *= static_cast<float>(cfg.raster_weight);
      }
      sl.total = diverged ? std::numeric_limits<double>::quiet_NaN() : sl.line + sl.cls + sl.trans + sl.dice;
      if (!std::isfinite(sl.total)) {
        json dump{{"epoch", epoch}, {"step", step}, {"batch", start / B}, {"line", sl.line},
                  {"class", sl.cls}, {"trans", sl.trans},  {"dice", sl.dice}};
        dump["scenes"] = json::array();
        for (int i = start; i < end; ++i) dump["scenes"].push_back(train_scenes[order[i]].id);
        if (write) write_file(out / "nan_dump.json", dump.dump(2));
        throw TrainingError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(start / B) + "): " + dump.dump());
      }
      model.backward(&vgrads, dice_on ? &dprob : nullptr);
      opt.step(params, nn::cosine_lr(cfg.train.optim.lr, step, total_steps, cfg.train.min_lr_ratio));
      if (write && step % cfg.train.log_every == 0)
        log << json{{"step", sl.step}, {"total", sl.total}, {"line", sl.line}, {"class", sl.cls},
                    {"trans", sl.trans}, {"dice", sl.dice}}
                   .dump()
            << "\n";
    }

    const bool last = epoch + 1 == cfg.train.epochs;
    if (last || (cfg.train.val_every > 0 && (epoch + 1) % cfg.train.val_every == 0)) {
      last_eval = evaluate(model, val_scenes, cfg);
      const double m = last_eval.score.mAP;
      history.push_back({{"epoch", epoch + 1}, {"mAP", m}, {"mIoU", last_eval.report["mIoU"]}});
      if (!result.best_val_map || m > *result.best_val_map) {
        result.best_val_map = m;
        if (write) {
          result.best_checkpoint = out / "best.ckpt";
          save_checkpoint(result.best_checkpoint, model, json{{"epoch", epoch + 1}, {"val_mAP", m}});
        }
      }
    }
  }
  result.final_val_map = last_eval.score.mAP;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json cfg_obj = json::object();
  for (const auto& [k, v] : config_entries(cfg)) cfg_obj[k] = v;
  result.record = json{{"config_hash", config_hash(cfg)},
                       {"version", std::string("augmap ") + AUGMAP_VERSION + "+" + config_hash(cfg).substr(0, 8)},
                       {"seed", seed},
                       {"config", cfg_obj},
                       {"loss_weights", {{"lambda1", cfg.loss.line}, {"lambda2", cfg.loss.cls}, {"lambda3", cfg.loss.trans}}},
                       {"steps", step},
                       {"metrics",
                        {{"final", last_eval.report},
                         {"final_val_mAP", result.final_val_map},
                         {"best_val_mAP", *result.best_val_map},
                         {"history", history}}},
                       {"wall_clock_s", secs}};
  if (write) {
    result.final_checkpoint = out / "final.ckpt";
    save_checkpoint(result.final_checkpoint, model, json{{"epoch", cfg.train.epochs}, {"val_mAP", result.final_val_map}});
    write_file(out / "run_record.json", result.record.dump(2));
    write_file(out / "config.txt", config_text(cfg));
  }
  return result;
}

Coverage gradient_coverage(Model<float>& model, const PreparedFrame& frame, const RunConfig& cfg) {
  const ModelConfig& mc = model.config();
  const std::vector<FrameInput> batch{frame_input(frame)};
  Coverage c;
  if (mc.ablation.use_augmentation && !mc.ablation.oracle) {
    const auto out = model.forward(batch, false);
    nn::Tensor<float> dprob;
    batch_dice(out.raster_probs, {&frame.gt_raster}, &dprob);
    const auto taps = model.backward(nullptr, &dprob);
    c.raster = augmap::gradient_coverage(to_latent(taps.d_raster_input, 0, mc.grid));
  }
  const auto out = model.forward(batch, false);
  std::vector<std::vector<nn::DecoderLayerGrad<float>>> vg(1);
  for (int l = 0; l < mc.decoder_layers; ++l) {
    const auto r = vector_loss(model.layer_prediction(out, 0, l), *frame.gt, cfg.loss, cfg.focal,
                               mc.ablation.use_temporal ? &frame.aux_targets : nullptr);
    vg[0].push_back(to_layer_grad<float>(r.grad, mc.points, mc.ablation.use_temporal));
  }
  const auto taps = model.backward(&vg, nullptr);
  c.vector = augmap::gradient_coverage(to_latent(taps.d_vector_input, 0, mc.grid));
  nn::zero_grads(model.params());
  return c;
}

}  // namespace augmap
