#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "travgrid/eval.hpp"
#include "travgrid/labeling.hpp"
#include "travgrid/synthworld.hpp"
#include "travgrid/terrain.hpp"
#include "travgrid/trainer.hpp"

namespace travgrid::config {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key-value text with [sections]. `key = value` lines, '#' comments,
// repeated keys kept in order. Keys are addressed as "section.key".
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueFile load(const std::filesystem::path& path);

  // "section.key=value" override; appends after file entries (last one wins).
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

enum class InputForm { kFull, kSingleScan, kMultiScan };
InputForm parse_input_form(const std::string& name);  // "full" | "sbev" | "mbev"
const char* input_form_name(InputForm form);

struct RunConfig {
  // [map]
  double map_extent = 40.0;
  double resolution = 0.2;
  // [scene] / [scan] / [trajectory] / [vehicle]
  synth::SceneSpec scene;
  synth::ScanParams scan;
  synth::TrajectoryParams trajectory;
  std::uint64_t trajectory_seed = 42;
  // [frames]
  double keyframe_period = 0.5;
  double first_keyframe = 2.0;
  // [labeling]
  labeling::AnnotateParams annotate;
  labeling::PatchLayout layout;
  // [inference]
  terrain::InferenceParams inference;
  // [model] / [train]
  disamb::TrainerConfig trainer;
  InputForm input = InputForm::kFull;
  // [eval]
  int gt_subsamples = 3;
  eval::LevelMapping mapping = eval::LevelMapping::defaults();
  eval::RuleThresholds rules;

  // Unknown keys and unparsable values raise ConfigError naming the key.
  void apply(const KeyValueFile& file);
  // Cross-field checks: M odd, extent / r integral, encoder input matches M*M*C.
  void validate() const;
  // Canonical text form; parsing it back reproduces this config.
  std::string to_text() const;

  static RunConfig from_file(const std::filesystem::path& path);
};

}  // namespace travgrid::config
