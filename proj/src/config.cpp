#include "travgrid/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace travgrid::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

synth::Level parse_level(const std::string& key, const std::string& v) {
  if (v == "traversable") return synth::Level::kTraversable;
  if (v == "risky") return synth::Level::kRisky;
  if (v == "non-traversable") return synth::Level::kNonTraversable;
  throw ConfigError(key + ": unknown level '" + v + "'");
}

struct Binding {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::vector<std::string>()> get;  // one entry per emitted line
};

Binding real(std::string key, double& field) {
  return {key, [&field, key](const std::string& v) { field = to_double(key, v); },
          [&field] { return std::vector<std::string>{fmt(field)}; }};
}

template <typename Int>
Binding integer(std::string key, Int& field) {
  return {key, [&field, key](const std::string& v) { field = to_int<Int>(key, v); },
          [&field] { return std::vector<std::string>{std::to_string(field)}; }};
}

Binding boolean(std::string key, bool& field) {
  return {key, [&field, key](const std::string& v) { field = to_bool(key, v); },
          [&field] { return std::vector<std::string>{field ? "true" : "false"}; }};
}

std::vector<Binding> bindings(RunConfig& c) {
  auto& s = c.scene;
  auto& t = c.trajectory;
  auto& tr = c.trainer;
  auto& sc = tr.schedules;
  auto& enc = tr.encoder;
  std::vector<Binding> b{
      real("map.extent", c.map_extent),
      real("map.resolution", c.resolution),
      integer("scene.seed", s.seed),
      real("scene.extent_x", s.extent_x),
      real("scene.extent_y", s.extent_y),
      integer("scene.random_regions", s.random_regions),
      real("scene.region_min", s.region_min),
      real("scene.region_max", s.region_max),
      real("scene.region_gap", s.region_gap),
      real("scene.corridor_half_width", s.corridor_half_width),
      real("scene.ground_amplitude", s.ground_amplitude),
      real("scene.ground_wavelength", s.ground_wavelength),
      real("scene.bush_height", s.bush_height),
      real("scene.bush_roughness", s.bush_roughness),
      real("scene.bush_wavelength", s.bush_wavelength),
      real("scene.obstacle_height", s.obstacle_height),
      real("scene.obstacle_roughness", s.obstacle_roughness),
      real("scene.ditch_depth", s.ditch_depth),
      real("scene.ditch_width_min", s.ditch_width_min),
      real("scene.ditch_width_max", s.ditch_width_max),
      real("scene.noise_sigma", s.noise_sigma),
      real("scene.scan_density", s.scan_density),
      real("scene.density_range", s.density_range),
      real("scene.sensor_range", s.sensor_range),
      real("scene.sensor_height", s.sensor_height),
      {"scene.region",
       [&s](const std::string& v) {
         if (v == "none") {
           s.regions.clear();
           return;
         }
         std::istringstream in(v);
         std::string cls;
         synth::Region r;
         if (!(in >> cls >> r.x0 >> r.y0 >> r.x1 >> r.y1)) {
           throw ConfigError("scene.region: expected '<class> x0 y0 x1 y1', got '" + v + "'");
         }
         r.terrain = synth::parse_terrain_class(cls);
         s.regions.push_back(r);
       },
       [&s] {
         std::vector<std::string> out;
         for (const auto& r : s.regions) {
           out.push_back(std::string(synth::terrain_class_name(r.terrain)) + " " + fmt(r.x0) +
                         " " + fmt(r.y0) + " " + fmt(r.x1) + " " + fmt(r.y1));
         }
         return out;
       }},
      real("scan.period", c.scan.period),
      integer("trajectory.seed", c.trajectory_seed),
      real("trajectory.speed", t.speed),
      real("trajectory.rate", t.rate),
      real("trajectory.x_start", t.x_start),
      real("trajectory.x_end", t.x_end),
      integer("trajectory.margin_cells", t.margin_cells),
      real("vehicle.footprint_length", t.footprint_length),
      real("vehicle.footprint_track", t.footprint_track),
      real("frames.keyframe_period", c.keyframe_period),
      real("frames.first_keyframe", c.first_keyframe),
      real("labeling.interval_past", c.annotate.interval_past),
      real("labeling.interval_future", c.annotate.interval_future),
      real("labeling.sample_period", c.annotate.sample_period),
      integer("labeling.patch_size", c.layout.patch_size),
      integer("labeling.window", c.layout.window),
      integer("labeling.stride", c.layout.stride),
      real("inference.kernel_length", c.inference.kernel_length),
      real("inference.range_sigma", c.inference.range_sigma),
      real("inference.prior_variance", c.inference.prior_variance),
      integer("model.dim", enc.dim),
      integer("model.blocks", enc.blocks),
      integer("model.heads", enc.heads),
      integer("model.mlp_ratio", enc.mlp_ratio),
      real("model.init_sigma", enc.init_sigma),
      integer("model.classes", tr.classes),
      integer("train.seed", tr.seed),
      integer("train.epochs", sc.epochs),
      integer("train.queue_capacity", tr.queue_capacity),
      integer("train.queue_warmup", tr.queue_warmup),
      integer("train.contrastive_start_epoch", tr.contrastive_start_epoch),
      integer("train.assignment_warmup_epochs", tr.assignment_warmup_epochs),
      real("train.key_momentum", sc.key_momentum),
      real("train.prototype_momentum", sc.prototype_momentum),
      real("train.label_momentum", sc.label_momentum),
      real("train.label_momentum_final", sc.label_momentum_final),
      integer("train.label_hold_epochs", sc.label_hold_epochs),
      real("train.temperature", sc.temperature),
      real("train.loss_weight", sc.loss_weight),
      real("train.lr_initial", sc.lr_initial),
      real("train.lr_final", sc.lr_final),
      {"train.loss", [&tr](const std::string& v) { tr.loss = disamb::parse_loss_mode(v); },
       [&tr] { return std::vector<std::string>{disamb::loss_mode_name(tr.loss)}; }},
      boolean("train.reanchor_first_prototype", tr.reanchor_first_prototype),
      {"train.prototype_init",
       [&tr](const std::string& v) { tr.prototype_init = disamb::parse_prototype_init(v); },
       [&tr] { return std::vector<std::string>{disamb::prototype_init_name(tr.prototype_init)}; }},
      {"train.input", [&c](const std::string& v) { c.input = parse_input_form(v); },
       [&c] { return std::vector<std::string>{input_form_name(c.input)}; }},
      integer("eval.gt_subsamples", c.gt_subsamples),
      {"eval.mapping",
       [&c](const std::string& v) {
         std::istringstream in(v);
         std::string label, level;
         if (!(in >> label >> level)) {
           throw ConfigError("eval.mapping: expected '<label> <level>', got '" + v + "'");
         }
         c.mapping.table[label] = parse_level("eval.mapping", level);
       },
       [&c] {
         std::vector<std::string> out;
         for (const auto& [label, level] : c.mapping.table) {
           out.push_back(label + " " + eval::level_name(level));
         }
         return out;
       }},
      real("eval.rule_elevation_range_hard", c.rules.elevation_range_hard),
      real("eval.rule_normal_angle_hard", c.rules.normal_angle_hard),
      real("eval.rule_concavity_hard", c.rules.concavity_hard),
  };
  return b;
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
  KeyValueFile out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(origin + ":" + std::to_string(number) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (section.empty()) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": key '" + key +
                        "' outside any [section]");
    }
    out.entries_.emplace_back(section + "." + key, trim(line.substr(eq + 1)));
  }
  return out;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValueFile::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || assignment.find('.') > eq) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
  entries_.emplace_back(key, value);
}

InputForm parse_input_form(const std::string& name) {
  if (name == "full" || name == "F") return InputForm::kFull;
  if (name == "sbev" || name == "S-BEV") return InputForm::kSingleScan;
  if (name == "mbev" || name == "M-BEV") return InputForm::kMultiScan;
  throw ConfigError("unknown input form '" + name + "' (expected full, sbev or mbev)");
}

const char* input_form_name(InputForm form) {
  switch (form) {
    case InputForm::kFull: return "full";
    case InputForm::kSingleScan: return "sbev";
    case InputForm::kMultiScan: return "mbev";
  }
  return "full";
}

void RunConfig::apply(const KeyValueFile& file) {
  auto table = bindings(*this);
  std::map<std::string, Binding*> by_key;
  for (auto& b : table) by_key[b.key] = &b;
  for (const auto& [key, value] : file.entries()) {
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second->set(value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  trainer.encoder.input_dim = layout.patch_size * layout.patch_size * labeling::kTokenChannels;
  layout.classes = trainer.classes;
}

void RunConfig::validate() const {
  layout.validate();
  MapGeometry::centered(map_extent, resolution);
  scene.validate();
  trainer.encoder.validate();
  trainer.schedules.validate();
  if (trainer.encoder.input_dim != layout.patch_size * layout.patch_size * labeling::kTokenChannels) {
    throw ConfigError("model input dim does not match M*M*C");
  }
  if (trainer.classes < 1) throw ConfigError("model.classes must be >= 1");
  if (layout.classes != trainer.classes) throw ConfigError("layout K differs from model K");
  if (!(keyframe_period > 0.0)) throw ConfigError("frames.keyframe_period must be > 0");
  if (!(scan.period > 0.0)) throw ConfigError("scan.period must be > 0");
  if (gt_subsamples < 1) throw ConfigError("eval.gt_subsamples must be >= 1");
  if (trainer.queue_capacity == 0) throw ConfigError("train.queue_capacity must be > 0");
}

std::string RunConfig::to_text() const {
  RunConfig copy = *this;
  std::string out;
  std::string section;
  for (const auto& b : bindings(copy)) {
    const auto dot = b.key.find('.');
    const std::string sec = b.key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    const auto values = b.get();
    if (b.key == "scene.region" && values.empty()) out += "region = none\n";
    for (const auto& v : values) out += b.key.substr(dot + 1) + " = " + v + "\n";
  }
  return out;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  RunConfig c;
  c.apply(KeyValueFile::load(path));
  return c;
}

}  // namespace travgrid::config
