// travgrid: command-line driver for the synthetic traversability pipeline.
//
// Every subcommand works inside one run directory (--out). Artifacts:
//   config.ini                      effective configuration (written by synth-gen)
//   poses.csv, scans.tpts           trajectory and simulated scans
//   world_levels.tcls               world-frame ground truth levels
//   frames.csv, maps/frame_NNN.tgrd keyframes and their feature maps
//   labels/, gt/ (*.tcls)           self-supervised cell labels, GT levels
//   tokens_train.ttok, tokens_test.ttok
//   model.tgck, metrics.csv         checkpoint and per-epoch metrics
//   pred/, pred_levels/ (*.tcls)    painted classes and their matched levels
//   scores.csv, mapping.txt
//   render/*.ppm
//   ablation.csv

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "travgrid/config.hpp"
#include "travgrid/map_io.hpp"
#include "travgrid/pipeline.hpp"
#include "travgrid/threads.hpp"

namespace fs = std::filesystem;
using namespace travgrid;

namespace {

struct CommonOptions {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out = "run";
  std::vector<std::string> overrides;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void add_common(CLI::App* app, CommonOptions& opt) {
  app->add_option("--config", opt.config, "config file (default: <out>/config.ini if present)");
  app->add_option_function<std::uint64_t>(
      "--seed",
      [&opt](std::uint64_t s) {
        opt.seed = s;
        opt.seed_given = true;
      },
      "seed for scene, trajectory and training");
  app->add_option("--out", opt.out, "run directory")->capture_default_str();
  app->add_option("--set", opt.overrides, "override, e.g. --set train.epochs=10 (repeatable)");
}

config::RunConfig load_config(const CommonOptions& opt) {
  config::KeyValueFile kv;
  if (!opt.config.empty()) {
    kv = config::KeyValueFile::load(opt.config);
  } else if (fs::exists(fs::path(opt.out) / "config.ini")) {
    kv = config::KeyValueFile::load(fs::path(opt.out) / "config.ini");
  }
  if (opt.seed_given) {
    const auto s = std::to_string(opt.seed);
    kv.set("scene.seed", s);
    kv.set("trajectory.seed", s);
    kv.set("train.seed", s);
  }
  for (const auto& o : opt.overrides) kv.set(o);
  config::RunConfig cfg;
  cfg.apply(kv);
  cfg.validate();
  return cfg;
}

fs::path require(const fs::path& path, const char* producer) {
  if (!fs::exists(path)) {
    throw UsageError("missing " + path.string() + "; run `travgrid " + producer + "` first");
  }
  return path;
}

std::string frame_name(std::uint32_t index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03u%s", index, ext);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

// frames.csv: index,stamp,split
void write_frames(const fs::path& path, const std::vector<pipeline::Keyframe>& keys) {
  std::ostringstream os;
  os << "index,stamp,split\n";
  for (const auto& k : keys) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%u,%.17g,%s\n", k.index, k.stamp, k.train ? "train" : "test");
    os << buf;
  }
  write_text(path, os.str());
}

std::vector<pipeline::Keyframe> read_frames(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::vector<pipeline::Keyframe> out;
  std::string line;
  std::getline(is, line);
  if (line != "index,stamp,split") throw std::runtime_error(path.string() + ": bad header");
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string idx, stamp, split;
    if (!std::getline(ls, idx, ',') || !std::getline(ls, stamp, ',') || !std::getline(ls, split) ||
        (split != "train" && split != "test")) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    out.push_back({static_cast<std::uint32_t>(std::stoul(idx)), std::stod(stamp), split == "train"});
  }
  return out;
}

template <typename E>
io::ClassGrid to_class_grid(const MapGeometry& geometry, const Grid<E>& grid) {
  io::ClassGrid g{geometry, Grid<std::uint8_t>(grid.width(), grid.height())};
  for (std::size_t i = 0; i < grid.size(); ++i) g.cells[i] = static_cast<std::uint8_t>(grid[i]);
  return g;
}

template <typename E>
Grid<E> from_class_grid(const io::ClassGrid& g, int max_code, const fs::path& path) {
  Grid<E> out(g.cells.width(), g.cells.height());
  for (std::size_t i = 0; i < g.cells.size(); ++i) {
    if (g.cells[i] > max_code) {
      throw std::runtime_error(path.string() + ": cell code " + std::to_string(g.cells[i]) +
                               " out of range");
    }
    out[i] = static_cast<E>(g.cells[i]);
  }
  return out;
}

void check_same_geometry(const MapGeometry& a, const MapGeometry& b, const fs::path& path) {
  if (a.width != b.width || a.height != b.height) {
    throw std::runtime_error(path.string() + ": grid is " + std::to_string(b.width) + "x" +
                             std::to_string(b.height) + ", map is " + std::to_string(a.width) +
                             "x" + std::to_string(a.height));
  }
}

// --- subcommands ---------------------------------------------------------

void synth_gen(const CommonOptions& opt) {
  const auto cfg = load_config(opt);
  const fs::path out(opt.out);
  fs::create_directories(out);
  const auto world = pipeline::make_world(cfg);
  write_text(out / "config.ini", cfg.to_text());
  labeling::write_poses_csv(out / "poses.csv", world.poses);
  synth::write_scans(out / "scans.tpts", world.scans);
  io::write_class_grid(out / "world_levels.tcls",
                       to_class_grid(world.world_geometry, world.world_levels));
  std::size_t points = 0;
  for (const auto& s : world.scans) points += s.points.size();
  std::printf("scene: %zu regions, %zu poses, %zu scans, %zu points -> %s\n",
              world.scene.regions().size(), world.poses.size(), world.scans.size(), points,
              out.string().c_str());
}

void build_map(const CommonOptions& opt) {
  const auto cfg = load_config(opt);
  const fs::path out(opt.out);
  const auto poses = labeling::read_poses_csv(require(out / "poses.csv", "synth-gen"));
  const auto scans = synth::read_scans(require(out / "scans.tpts", "synth-gen"));
  const int threads = thread_limit();
  fs::create_directories(out / "maps");
  const auto keys = pipeline::keyframes(cfg, poses);
  std::size_t points = 0;
  for (const auto& s : scans) points += s.points.size();
  if (points == 0) std::fprintf(stderr, "warning: no scan points; writing empty maps\n");
  if (keys.empty()) {
    std::fprintf(stderr, "warning: no keyframes in the pose range; writing one empty map\n");
    io::write_feature_map(out / "maps" / frame_name(0, ".tgrd"),
                          terrain::FeatureMap::empty(MapGeometry::centered(cfg.map_extent, cfg.resolution)));
  }
  for (const auto& k : keys) {
    const auto map =
        pipeline::build_frame_map(cfg, scans, pipeline::pose_at(poses, k.stamp), cfg.input, threads);
    io::write_feature_map(out / "maps" / frame_name(k.index, ".tgrd"), map);
  }
  write_frames(out / "frames.csv", keys);
  std::printf("built %zu %s maps\n", keys.size(), config::input_form_name(cfg.input));
}

void auto_label(const CommonOptions& opt) {
  const auto cfg = load_config(opt);
  const fs::path out(opt.out);
  const auto poses = labeling::read_poses_csv(require(out / "poses.csv", "synth-gen"));
  const auto keys = read_frames(require(out / "frames.csv", "build-map"));
  const synth::Scene scene(cfg.scene);
  const auto footprint =
      labeling::Footprint::rectangle(cfg.trajectory.footprint_length, cfg.trajectory.footprint_track);
  fs::create_directories(out / "labels");
  fs::create_directories(out / "gt");
  labeling::TokenDataset train{cfg.layout, {}};
  labeling::TokenDataset test{cfg.layout, {}};
  std::size_t positives = 0;
  for (const auto& k : keys) {
    const auto map =
        io::read_feature_map(require(out / "maps" / frame_name(k.index, ".tgrd"), "build-map"));
    const auto& current = pipeline::pose_at(poses, k.stamp);
    const auto ann = labeling::annotate_map(map, poses, current, footprint, cfg.annotate);
    if (ann.warned_no_poses) {
      std::fprintf(stderr, "warning: frame %u has no poses in the labeling interval\n", k.index);
    }
    io::write_class_grid(out / "labels" / frame_name(k.index, ".tcls"),
                         to_class_grid(map.geometry, ann.labels));
    const auto truth = eval::build_ground_truth(
        eval::sample_semantics(scene, map.geometry, current.body_to_world, cfg.gt_subsamples),
        cfg.mapping);
    io::write_class_grid(out / "gt" / frame_name(k.index, ".tcls"), to_class_grid(map.geometry, truth));
    auto tokens = labeling::extract_tokens(map, ann.labels, cfg.layout, k.index);
    for (const auto& t : tokens) positives += t.positive ? 1 : 0;
    auto& dst = k.train ? train.tokens : test.tokens;
    dst.insert(dst.end(), std::make_move_iterator(tokens.begin()),
               std::make_move_iterator(tokens.end()));
  }
  labeling::write_tokens(out / "tokens_train.ttok", train);
  labeling::write_tokens(out / "tokens_test.ttok", test);
  std::printf("tokens: %zu train (%zu positive), %zu test\n", train.tokens.size(), positives,
              test.tokens.size());
}

void check_layout(const labeling::PatchLayout& file, const labeling::PatchLayout& cfg,
                  const fs::path& path) {
  if (file.patch_size != cfg.patch_size || file.window != cfg.window || file.stride != cfg.stride ||
      file.classes != cfg.classes) {
    throw UsageError(path.string() + ": token layout (M=" + std::to_string(file.patch_size) +
                     ", K=" + std::to_string(file.classes) + ") does not match the config (M=" +
                     std::to_string(cfg.patch_size) + ", K=" + std::to_string(cfg.classes) +
                     "); rerun auto-label");
  }
}

void train(const CommonOptions& opt) {
  const auto cfg = load_config(opt);
  const fs::path out(opt.out);
  const auto path = require(out / "tokens_train.ttok", "auto-label");
  auto data = labeling::read_tokens(path);
  check_layout(data.layout, cfg.layout, path);
  if (data.tokens.empty()) throw UsageError(path.string() + " holds no tokens");
  const auto start = std::chrono::steady_clock::now();
  disamb::Trainer trainer(cfg.trainer, std::move(data.tokens));
  const auto history = trainer.fit([](const disamb::EpochMetrics& m) {
    std::printf("epoch %3d  L_cls %.4f  L_cont %.4f  L_sum %.4f  H(y_n) %.4f  lr %.5f\n", m.epoch,
                m.loss_cls, m.loss_cont, m.loss_sum, m.mean_entropy, m.lr);
    std::fflush(stdout);
  });
  trainer.model().save(out / "model.tgck");
  write_text(out / "metrics.csv", pipeline::metrics_csv(history));
  std::printf("trained %d epochs in %.1f s -> %s\n", trainer.epochs_done(),
              std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(),
              (out / "model.tgck").string().c_str());
}

void infer(const CommonOptions& opt) {
  const auto cfg = load_config(opt);
  const fs::path out(opt.out);
  const auto model = disamb::Model::load(require(out / "model.tgck", "train"), cfg.trainer.encoder,
                                         cfg.trainer.classes);
  const auto path = require(out / "tokens_test.ttok", "auto-label");
  const auto data = labeling::read_tokens(path);
  check_layout(data.layout, cfg.layout, path);
  std::map<std::uint32_t, std::vector<labeling::PatchToken>> by_frame;
  for (const auto& t : data.tokens) by_frame[t.id.frame].push_back(t);
  fs::create_directories(out / "pred");
  for (const auto& [frame, tokens] : by_frame) {
    const auto map = io::read_feature_map(require(out / "maps" / frame_name(frame, ".tgrd"), "build-map"));
    const auto pred = model.predict(tokens);
    const auto painted = eval::paint_patches(map, tokens, pred.classes, cfg.layout.patch_size);
    io::write_class_grid(out / "pred" / frame_name(frame, ".tcls"), {map.geometry, painted});
  }
  std::printf("predicted %zu test frames\n", by_frame.size());
}

void evaluate(const CommonOptions& opt) {
  const auto cfg = load_config(opt);
  const fs::path out(opt.out);
  const auto keys = read_frames(require(out / "frames.csv", "build-map"));
  pipeline::Dataset data;
  std::vector<Grid<std::uint8_t>> painted;
  for (const auto& k : keys) {
    pipeline::Frame f;
    f.key = k;
    f.map = io::read_feature_map(require(out / "maps" / frame_name(k.index, ".tgrd"), "build-map"));
    if (k.train) {
      const auto p = require(out / "labels" / frame_name(k.index, ".tcls"), "auto-label");
      const auto g = io::read_class_grid(p);
      check_same_geometry(f.map.geometry, g.geometry, p);
      f.labels = from_class_grid<labeling::CellLabel>(g, 2, p);
      data.train.push_back(std::move(f));
    } else {
      const auto gp = require(out / "gt" / frame_name(k.index, ".tcls"), "auto-label");
      const auto g = io::read_class_grid(gp);
      check_same_geometry(f.map.geometry, g.geometry, gp);
      f.truth = from_class_grid<synth::Level>(g, eval::kLevels, gp);
      const auto pp = require(out / "pred" / frame_name(k.index, ".tcls"), "infer");
      auto pg = io::read_class_grid(pp);
      check_same_geometry(f.map.geometry, pg.geometry, pp);
      painted.push_back(std::move(pg.cells));
      data.test.push_back(std::move(f));
    }
  }
  const auto ev = pipeline::score_painted(cfg, data, painted, cfg.trainer.classes);
  write_text(out / "scores.csv", pipeline::scores_csv(ev));
  std::ostringstream report;
  eval::write_mapping_report(report, ev.model);
  write_text(out / "mapping.txt", report.str());
  fs::create_directories(out / "pred_levels");
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    Grid<std::uint8_t> levels(painted[i].width(), painted[i].height());
    for (std::size_t c = 0; c < levels.size(); ++c) {
      const int k = painted[i][c];
      levels[c] = k == 0 ? 0 : static_cast<std::uint8_t>(ev.model.mapping[static_cast<std::size_t>(k - 1)]);
    }
    io::write_class_grid(out / "pred_levels" / frame_name(data.test[i].key.index, ".tcls"),
                         {data.test[i].map.geometry, levels});
  }
  std::printf("model          PA %.4f  mIoU %.4f\nrule baseline  PA %.4f  mIoU %.4f\n", ev.model.pa,
              ev.model.miou, ev.baseline.pa, ev.baseline.miou);
  std::fputs(report.str().c_str(), stdout);
}

void render(const CommonOptions& opt) {
  const fs::path out(opt.out);
  const auto keys = read_frames(require(out / "frames.csv", "build-map"));
  fs::create_directories(out / "render");
  if (fs::exists(out / "world_levels.tcls")) {
    io::render_levels_ppm(out / "render" / "world_levels.ppm",
                          io::read_class_grid(out / "world_levels.tcls"));
  }
  std::size_t images = 0;
  for (const auto& k : keys) {
    const auto map_path = out / "maps" / frame_name(k.index, ".tgrd");
    if (!fs::exists(map_path)) continue;
    const auto map = io::read_feature_map(map_path);
    const std::string stem = frame_name(k.index, "");
    for (int c : {terrain::kPredictedMean, terrain::kElevationRange, terrain::kNormalAngle}) {
      io::render_channel_ppm(out / "render" / (stem + "_" + terrain::channel_name(c) + ".ppm"), map, c);
      ++images;
    }
    const auto gt = out / "gt" / frame_name(k.index, ".tcls");
    if (fs::exists(gt)) {
      io::render_levels_ppm(out / "render" / (stem + "_gt.ppm"), io::read_class_grid(gt));
      ++images;
    }
    const auto pred = out / "pred" / frame_name(k.index, ".tcls");
    if (fs::exists(pred)) {
      io::render_classes_ppm(out / "render" / (stem + "_classes.ppm"), io::read_class_grid(pred));
      ++images;
    }
    const auto levels = out / "pred_levels" / frame_name(k.index, ".tcls");
    if (fs::exists(levels)) {
      io::render_levels_ppm(out / "render" / (stem + "_pred.ppm"), io::read_class_grid(levels));
      ++images;
    }
  }
  std::printf("wrote %zu images to %s\n", images, (out / "render").string().c_str());
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw UsageError("empty list '" + s + "'");
  return out;
}

struct AblateOptions {
  std::string losses = "sum";
  std::string inputs = "full";
  std::string classes;
  std::string seeds;
};

void ablate(const CommonOptions& opt, const AblateOptions& ab) {
  const auto base = load_config(opt);
  const fs::path out(opt.out);
  fs::create_directories(out);
  const auto losses = split_list(ab.losses);
  const auto inputs = split_list(ab.inputs);
  const auto classes = split_list(ab.classes.empty() ? std::to_string(base.trainer.classes) : ab.classes);
  const auto seeds = split_list(ab.seeds.empty() ? std::to_string(base.trainer.seed) : ab.seeds);
  for (const auto& l : losses) disamb::parse_loss_mode(l);
  for (const auto& i : inputs) config::parse_input_form(i);

  const int threads = thread_limit();
  const auto world = pipeline::make_world(base);
  std::map<std::string, pipeline::Dataset> datasets;

  std::ostringstream csv;
  csv << "loss,input,classes,seed,pa,miou,iou_traversable,iou_risky,iou_non_traversable,"
         "final_entropy,seconds\n";
  for (const auto& input : inputs) {
    for (const auto& k : classes) {
      for (const auto& loss : losses) {
        for (const auto& seed : seeds) {
          config::KeyValueFile kv;
          kv.set("train.input", input);
          kv.set("model.classes", k);
          kv.set("train.loss", loss);
          kv.set("train.seed", seed);
          config::RunConfig cfg = base;
          cfg.apply(kv);
          cfg.validate();
          const std::string key = input + "/" + k;
          if (!datasets.count(key)) {
            datasets.emplace(key, pipeline::build_dataset(cfg, world, cfg.input, threads));
          }
          const auto r = pipeline::train_and_evaluate(cfg, datasets.at(key));
          const auto& s = r.evaluation.model;
          char row[256];
          std::snprintf(row, sizeof row, "%s,%s,%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.1f\n",
                        loss.c_str(), input.c_str(), k.c_str(), seed.c_str(), s.pa, s.miou, s.iou[0],
                        s.iou[1], s.iou[2], r.history.empty() ? 0.0 : r.history.back().mean_entropy,
                        r.seconds);
          csv << row;
          std::fputs(row, stdout);
          std::fflush(stdout);
        }
      }
    }
  }
  write_text(out / "ablation.csv", csv.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised traversability mapping on synthetic terrain"};
  app.require_subcommand(1);
  CommonOptions opt;
  AblateOptions ab;

  struct Sub {
    const char* name;
    const char* help;
    std::function<void()> run;
  };
  const std::vector<Sub> subs = {
      {"synth-gen", "generate the scene, trajectory and scans", [&] { synth_gen(opt); }},
      {"build-map", "fuse scans into per-keyframe feature maps", [&] { build_map(opt); }},
      {"auto-label", "label traversed cells and extract patch tokens", [&] { auto_label(opt); }},
      {"train", "train the encoder with label disambiguation", [&] { train(opt); }},
      {"infer", "predict classes for the test frames", [&] { infer(opt); }},
      {"eval", "score predictions against ground truth", [&] { evaluate(opt); }},
      {"render", "write PPM images of maps, ground truth and predictions", [&] { render(opt); }},
      {"ablate", "train and score a grid of configurations", [&] { ablate(opt, ab); }},
  };
  std::vector<std::pair<CLI::App*, const Sub*>> commands;
  for (const auto& s : subs) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, opt);
    if (std::string(s.name) == "ablate") {
      cmd->add_option("--loss", ab.losses, "comma list of sum|cls|cont")->capture_default_str();
      cmd->add_option("--input", ab.inputs, "comma list of full|sbev|mbev")->capture_default_str();
      cmd->add_option("--classes", ab.classes, "comma list of K values (default: config)");
      cmd->add_option("--seeds", ab.seeds, "comma list of training seeds (default: config)");
    }
    commands.emplace_back(cmd, &s);
  }

  CLI11_PARSE(app, argc, argv);
  try {
    for (const auto& [cmd, sub] : commands) {
      if (cmd->parsed()) sub->run();
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const config::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
