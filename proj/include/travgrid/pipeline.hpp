#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "travgrid/config.hpp"
#include "travgrid/eval.hpp"
#include "travgrid/labeling.hpp"
#include "travgrid/synthworld.hpp"
#include "travgrid/terrain.hpp"
#include "travgrid/trainer.hpp"

namespace travgrid::pipeline {

// Scene, world ground truth, driven trajectory, and simulated scans.
struct World {
  synth::Scene scene;
  MapGeometry world_geometry;
  Grid<synth::Level> world_levels;
  std::vector<labeling::VehiclePose> poses;
  std::vector<synth::ScanFrame> scans;
};

World make_world(const config::RunConfig& cfg);

// World-frame level grid of the scene at the given resolution.
Grid<synth::Level> world_ground_truth(const synth::Scene& scene, const MapGeometry& geometry,
                                      const eval::LevelMapping& mapping, int sub);

struct Keyframe {
  std::uint32_t index = 0;
  double stamp = 0.0;
  bool train = false;  // even keyframes train, odd keyframes test
};

// Keyframes every `keyframe_period` s from `first_keyframe` while poses last.
std::vector<Keyframe> keyframes(const config::RunConfig& cfg,
                                const std::vector<labeling::VehiclePose>& poses);

// Pose at time t (nearest sample at or before t).
const labeling::VehiclePose& pose_at(const std::vector<labeling::VehiclePose>& poses, double t);

// Vehicle-centric map at pose `current` built from the scans stamped <= its
// time: all of them, or only the latest for the single-scan form.
terrain::FeatureMap build_frame_map(const config::RunConfig& cfg,
                                    const std::vector<synth::ScanFrame>& scans,
                                    const labeling::VehiclePose& current, config::InputForm form,
                                    int threads);

struct Frame {
  Keyframe key;
  terrain::FeatureMap map;
  Grid<labeling::CellLabel> labels;
  Grid<synth::Level> truth;
  std::vector<labeling::PatchToken> tokens;
};

Frame build_frame(const config::RunConfig& cfg, const World& world, const Keyframe& key,
                  config::InputForm form, int threads);

struct Dataset {
  std::vector<Frame> train;
  std::vector<Frame> test;

  std::vector<labeling::PatchToken> train_tokens() const;
};

Dataset build_dataset(const config::RunConfig& cfg, const World& world, config::InputForm form,
                      int threads);

struct Evaluation {
  eval::Score model;
  eval::Score baseline;
  std::vector<std::vector<int>> predicted;  // per test frame, 0-based per token
  std::vector<float> embeddings;            // all test tokens, N x D
  std::vector<int> embedding_labels;
};

// Scores painted class grids (one per test frame) and the rule baseline.
Evaluation score_painted(const config::RunConfig& cfg, const Dataset& data,
                         const std::vector<Grid<std::uint8_t>>& painted, int classes);

// Scores the model on the test frames and the rule baseline (thresholds
// calibrated on the training frames' positive cells) on the same frames.
Evaluation evaluate(const config::RunConfig& cfg, const disamb::Model& model,
                    const Dataset& data);

struct RunResult {
  std::vector<disamb::EpochMetrics> history;
  Evaluation evaluation;
  double seconds = 0.0;
  std::size_t train_tokens = 0;
  std::size_t positive_tokens = 0;
};

// Trains on the dataset and evaluates; `on_epoch` sees every epoch row.
RunResult train_and_evaluate(const config::RunConfig& cfg, const Dataset& data,
                             const std::function<void(const disamb::EpochMetrics&)>& on_epoch = {});

// Per-epoch metrics CSV bytes.
std::string metrics_csv(const std::vector<disamb::EpochMetrics>& history);
// Score CSV bytes: one row for the model, one for the rule baseline.
std::string scores_csv(const Evaluation& evaluation);

}  // namespace travgrid::pipeline
