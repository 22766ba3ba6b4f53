#include "travgrid/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

namespace travgrid::pipeline {

Grid<synth::Level> world_ground_truth(const synth::Scene& scene, const MapGeometry& geometry,
                                      const eval::LevelMapping& mapping, int sub) {
  return eval::build_ground_truth(
      eval::sample_semantics(scene, geometry, Eigen::Isometry3d::Identity(), sub), mapping);
}

World make_world(const config::RunConfig& cfg) {
  cfg.validate();
  synth::Scene scene(cfg.scene);
  const auto geometry = scene.world_geometry(cfg.resolution);
  auto levels = world_ground_truth(scene, geometry, cfg.mapping, cfg.gt_subsamples);
  auto poses = synth::plan_trajectory(scene, geometry, levels, cfg.trajectory, cfg.trajectory_seed);
  auto scans = synth::simulate_scans(scene, poses, cfg.scan);
  return World{std::move(scene), geometry, std::move(levels), std::move(poses), std::move(scans)};
}

std::vector<Keyframe> keyframes(const config::RunConfig& cfg,
                                const std::vector<labeling::VehiclePose>& poses) {
  std::vector<Keyframe> out;
  if (poses.empty()) return out;
  const double t0 = poses.front().stamp;
  const double t1 = poses.back().stamp;
  for (std::uint32_t i = 0;; ++i) {
    const double t = t0 + cfg.first_keyframe + i * cfg.keyframe_period;
    if (t > t1 + 1e-9) break;
    out.push_back({i, t, i % 2 == 0});
  }
  return out;
}

const labeling::VehiclePose& pose_at(const std::vector<labeling::VehiclePose>& poses, double t) {
  if (poses.empty()) throw std::invalid_argument("pose_at: empty pose list");
  const auto it = std::upper_bound(poses.begin(), poses.end(), t + 1e-9,
                                   [](double v, const labeling::VehiclePose& p) { return v < p.stamp; });
  return it == poses.begin() ? poses.front() : *std::prev(it);
}

terrain::FeatureMap build_frame_map(const config::RunConfig& cfg,
                                    const std::vector<synth::ScanFrame>& scans,
                                    const labeling::VehiclePose& current, config::InputForm form,
                                    int threads) {
  const auto geometry = MapGeometry::centered(cfg.map_extent, cfg.resolution);
  terrain::ElevationGrid grid(geometry);
  const Eigen::Isometry3d world_to_body = current.body_to_world.inverse();
  std::vector<const synth::ScanFrame*> used;
  for (const auto& s : scans) {
    if (s.stamp <= current.stamp + 1e-9) used.push_back(&s);
  }
  if (form == config::InputForm::kSingleScan && used.size() > 1) used.erase(used.begin(), used.end() - 1);
  std::vector<Eigen::Vector3d> local;
  for (const auto* s : used) {
    local.clear();
    local.reserve(s->points.size());
    for (const auto& p : s->points) local.push_back(world_to_body * p);
    terrain::fuse_points(grid, local);
  }
  if (form == config::InputForm::kFull) return terrain::build_feature_map(grid, cfg.inference, threads);
  return terrain::build_bev_map(grid);
}

Frame build_frame(const config::RunConfig& cfg, const World& world, const Keyframe& key,
                  config::InputForm form, int threads) {
  Frame f;
  f.key = key;
  const auto& current = pose_at(world.poses, key.stamp);
  f.map = build_frame_map(cfg, world.scans, current, form, threads);
  const auto footprint =
      labeling::Footprint::rectangle(cfg.trajectory.footprint_length, cfg.trajectory.footprint_track);
  f.labels = labeling::annotate_map(f.map, world.poses, current, footprint, cfg.annotate).labels;
  f.truth = eval::build_ground_truth(
      eval::sample_semantics(world.scene, f.map.geometry, current.body_to_world, cfg.gt_subsamples),
      cfg.mapping);
  f.tokens = labeling::extract_tokens(f.map, f.labels, cfg.layout, key.index);
  return f;
}

std::vector<labeling::PatchToken> Dataset::train_tokens() const {
  std::vector<labeling::PatchToken> out;
  for (const auto& f : train) out.insert(out.end(), f.tokens.begin(), f.tokens.end());
  return out;
}

Dataset build_dataset(const config::RunConfig& cfg, const World& world, config::InputForm form,
                      int threads) {
  Dataset d;
  for (const auto& key : keyframes(cfg, world.poses)) {
    auto frame = build_frame(cfg, world, key, form, threads);
    (key.train ? d.train : d.test).push_back(std::move(frame));
  }
  return d;
}

Evaluation score_painted(const config::RunConfig& cfg, const Dataset& data,
                         const std::vector<Grid<std::uint8_t>>& painted, int classes) {
  if (painted.size() != data.test.size()) {
    throw std::invalid_argument("score_painted: " + std::to_string(painted.size()) +
                                " prediction grids for " + std::to_string(data.test.size()) +
                                " test frames");
  }
  Evaluation out;
  eval::ScoreAccumulator model_acc(classes);
  eval::ScoreAccumulator rule_acc(eval::kLevels);

  std::vector<terrain::FeatureMap> maps;
  std::vector<Grid<labeling::CellLabel>> labels;
  for (const auto& f : data.train) {
    maps.push_back(f.map);
    labels.push_back(f.labels);
  }
  const auto thresholds = eval::calibrate_thresholds(maps, labels, cfg.rules);

  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const auto& f = data.test[i];
    model_acc.add(painted[i], f.truth);
    // The baseline is scored on the same cells the model covers.
    auto rule = eval::rule_baseline(f.map, thresholds);
    for (std::size_t c = 0; c < rule.size(); ++c) {
      if (painted[i][c] == 0) rule[c] = 0;
    }
    rule_acc.add(rule, f.truth);
  }
  out.model = model_acc.score();
  out.baseline = eval::score_with_mapping(
      rule_acc.counts(), {eval::Level::kTraversable, eval::Level::kRisky, eval::Level::kNonTraversable});
  return out;
}

Evaluation evaluate(const config::RunConfig& cfg, const disamb::Model& model,
                    const Dataset& data) {
  std::vector<Grid<std::uint8_t>> painted;
  std::vector<std::vector<int>> predicted;
  std::vector<float> embeddings;
  std::vector<int> embedding_labels;
  for (const auto& f : data.test) {
    auto pred = model.predict(f.tokens);
    painted.push_back(eval::paint_patches(f.map, f.tokens, pred.classes, cfg.layout.patch_size));
    embeddings.insert(embeddings.end(), pred.embeddings.begin(), pred.embeddings.end());
    embedding_labels.insert(embedding_labels.end(), pred.classes.begin(), pred.classes.end());
    predicted.push_back(std::move(pred.classes));
  }
  auto out = score_painted(cfg, data, painted, model.classes);
  out.predicted = std::move(predicted);
  out.embeddings = std::move(embeddings);
  out.embedding_labels = std::move(embedding_labels);
  return out;
}

RunResult train_and_evaluate(const config::RunConfig& cfg, const Dataset& data,
                             const std::function<void(const disamb::EpochMetrics&)>& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  RunResult r;
  auto tokens = data.train_tokens();
  r.train_tokens = tokens.size();
  r.positive_tokens = static_cast<std::size_t>(
      std::count_if(tokens.begin(), tokens.end(), [](const auto& t) { return t.positive; }));
  disamb::Trainer trainer(cfg.trainer, std::move(tokens));
  r.history = trainer.fit(on_epoch);
  r.evaluation = evaluate(cfg, trainer.model(), data);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::string metrics_csv(const std::vector<disamb::EpochMetrics>& history) {
  std::ostringstream os;
  disamb::write_metrics_header(os);
  for (const auto& m : history) disamb::write_metrics_row(os, m);
  return os.str();
}

std::string scores_csv(const Evaluation& evaluation) {
  std::ostringstream os;
  eval::write_score_header(os);
  eval::write_score_row(os, "model", evaluation.model);
  eval::write_score_row(os, "rule_baseline", evaluation.baseline);
  return os.str();
}

}  // namespace travgrid::pipeline
