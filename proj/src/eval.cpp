#include "travgrid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <Eigen/Eigenvalues>

namespace travgrid::eval {

const char* level_name(Level level) {
  switch (level) {
    case Level::kTraversable: return "traversable";
    case Level::kRisky: return "risky";
    case Level::kNonTraversable: return "non-traversable";
    case Level::kUnknown: break;
  }
  return "unknown";
}

LevelMapping LevelMapping::defaults() {
  LevelMapping m;
  for (const char* l : {"grass", "puddle", "asphalt", "concrete", "dirt", "mud"}) {
    m.table[l] = Level::kTraversable;
  }
  for (const char* l : {"bush", "fence"}) m.table[l] = Level::kRisky;
  for (const char* l : {"tree", "rock", "ditch", "pole", "building", "water", "vehicle", "person",
                        "barrier", "log", "rubble", "sky"}) {
    m.table[l] = Level::kNonTraversable;
  }
  return m;
}

Level LevelMapping::level(const std::string& label) const {
  const auto it = table.find(label);
  if (it == table.end()) throw UnmappedLabel("semantic label '" + label + "' has no level mapping");
  return it->second;
}

SemanticGrid sample_semantics(const synth::Scene& scene, const MapGeometry& geometry,
                              const Eigen::Isometry3d& map_to_world, int sub) {
  if (sub < 1) throw std::invalid_argument("sub-sample count must be >= 1");
  SemanticGrid out;
  out.geometry = geometry;
  out.samples.resize(geometry.cell_count());
  std::map<std::string, std::uint16_t> ids;
  const auto id_of = [&](const std::string& label) {
    const auto [it, inserted] = ids.emplace(label, static_cast<std::uint16_t>(ids.size()));
    if (inserted) out.vocabulary.push_back(label);
    return it->second;
  };
  const double r = geometry.resolution;
  for (int row = 0; row < geometry.height; ++row) {
    for (int col = 0; col < geometry.width; ++col) {
      auto& cell = out.samples[geometry.linear(row, col)];
      for (int a = 0; a < sub; ++a) {
        for (int b = 0; b < sub; ++b) {
          const double x = geometry.origin.x() + (col + (b + 0.5) / sub) * r;
          const double y = geometry.origin.y() + (row + (a + 0.5) / sub) * r;
          const Eigen::Vector3d w = map_to_world * Eigen::Vector3d(x, y, 0.0);
          if (!scene.in_bounds(w.x(), w.y())) continue;
          cell.push_back(id_of(synth::semantic_label(scene.terrain_at(w.x(), w.y()))));
        }
      }
    }
  }
  return out;
}

Grid<Level> build_ground_truth(const SemanticGrid& semantics, const LevelMapping& mapping) {
  std::vector<Level> vocab_level;
  vocab_level.reserve(semantics.vocabulary.size());
  for (const auto& label : semantics.vocabulary) vocab_level.push_back(mapping.level(label));
  const auto& g = semantics.geometry;
  Grid<Level> out(g.width, g.height, Level::kUnknown);
  for (std::size_t i = 0; i < semantics.samples.size(); ++i) {
    const auto& cell = semantics.samples[i];
    if (cell.empty()) continue;
    const Level first = vocab_level.at(cell.front());
    const bool uniform = std::all_of(cell.begin(), cell.end(),
                                     [&](std::uint16_t id) { return vocab_level.at(id) == first; });
    out[i] = uniform && first != Level::kNonTraversable ? first : Level::kNonTraversable;
  }
  return out;
}

Score score_from_counts(const ClassLevelCounts& counts) {
  std::vector<Level> mapping(static_cast<std::size_t>(counts.classes), Level::kTraversable);
  for (int k = 1; k < counts.classes; ++k) {
    const auto& row = counts.counts[static_cast<std::size_t>(k)];
    int best = 0;
    for (int l = 1; l < kLevels; ++l) {
      if (row[static_cast<std::size_t>(l)] > row[static_cast<std::size_t>(best)]) best = l;
    }
    mapping[static_cast<std::size_t>(k)] = static_cast<Level>(best + 1);
  }
  return score_with_mapping(counts, std::move(mapping));
}

Score score_with_mapping(const ClassLevelCounts& counts, std::vector<Level> mapping) {
  if (mapping.size() != static_cast<std::size_t>(counts.classes)) {
    throw std::invalid_argument("mapping needs one level per predicted class");
  }
  Score s;
  s.overlap = counts;
  s.mapping = std::move(mapping);
  for (int k = 0; k < counts.classes; ++k) {
    const int p = static_cast<int>(s.mapping[static_cast<std::size_t>(k)]) - 1;
    for (int l = 0; l < kLevels; ++l) {
      const auto c = counts.counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)];
      s.confusion[static_cast<std::size_t>(p)][static_cast<std::size_t>(l)] += c;
      s.cells += c;
    }
  }
  if (s.cells == 0) return s;
  std::uint64_t correct = 0;
  double iou_sum = 0.0;
  int present = 0;
  for (std::size_t l = 0; l < kLevels; ++l) {
    correct += s.confusion[l][l];
    std::uint64_t pred = 0, gt = 0;
    for (std::size_t j = 0; j < kLevels; ++j) {
      pred += s.confusion[l][j];
      gt += s.confusion[j][l];
    }
    const std::uint64_t uni = pred + gt - s.confusion[l][l];
    if (uni == 0) continue;
    s.level_present[l] = true;
    s.iou[l] = static_cast<double>(s.confusion[l][l]) / static_cast<double>(uni);
    iou_sum += s.iou[l];
    ++present;
  }
  s.pa = static_cast<double>(correct) / static_cast<double>(s.cells);
  s.miou = present > 0 ? iou_sum / present : 0.0;
  return s;
}

ScoreAccumulator::ScoreAccumulator(int classes) : classes_(classes) {
  if (classes < 1) throw std::invalid_argument("class count must be >= 1");
  counts_.classes = classes;
  counts_.counts.assign(static_cast<std::size_t>(classes), {});
}

void ScoreAccumulator::add(const Grid<std::uint8_t>& predicted, const Grid<Level>& truth) {
  if (predicted.width() != truth.width() || predicted.height() != truth.height()) {
    throw std::invalid_argument("prediction grid " + std::to_string(predicted.width()) + "x" +
                                std::to_string(predicted.height()) +
                                " is not aligned with ground truth " +
                                std::to_string(truth.width()) + "x" +
                                std::to_string(truth.height()));
  }
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int k = predicted[i];
    const Level l = truth[i];
    if (k == 0 || l == Level::kUnknown) continue;
    if (k > classes_) {
      throw std::invalid_argument("predicted class " + std::to_string(k) + " exceeds K = " +
                                  std::to_string(classes_));
    }
    ++counts_.counts[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(l) - 1];
  }
}

Score ScoreAccumulator::score() const { return score_from_counts(counts_); }

Score match_and_score(const Grid<std::uint8_t>& predicted, const Grid<Level>& truth, int classes) {
  ScoreAccumulator acc(classes);
  acc.add(predicted, truth);
  return acc.score();
}

Grid<std::uint8_t> paint_patches(const terrain::FeatureMap& map,
                                 const std::vector<labeling::PatchToken>& tokens,
                                 const std::vector<int>& classes, int patch_size) {
  if (classes.size() != tokens.size()) {
    throw std::invalid_argument("paint_patches: one class per token required");
  }
  const auto& g = map.geometry;
  Grid<std::uint8_t> out(g.width, g.height, 0);
  const int half = patch_size / 2;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto c = tokens[t].center;
    for (int r = c.row - half; r <= c.row + half; ++r) {
      for (int q = c.col - half; q <= c.col + half; ++q) {
        if (!g.contains(r, q) || !map.known(r, q)) continue;
        out(r, q) = static_cast<std::uint8_t>(classes[t] + 1);
      }
    }
  }
  return out;
}

namespace {

double percentile95(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double pos = 0.95 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

RuleThresholds calibrate_thresholds(const std::vector<terrain::FeatureMap>& maps,
                                    const std::vector<Grid<labeling::CellLabel>>& labels,
                                    RuleThresholds base) {
  if (maps.size() != labels.size()) throw std::invalid_argument("one label grid per map required");
  std::vector<double> dz, tn, tc;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const auto& map = maps[m];
    for (std::size_t i = 0; i < map.known.size(); ++i) {
      if (!map.known[i] || labels[m][i] != labeling::CellLabel::kPositive) continue;
      dz.push_back(map.channels[terrain::kElevationRange][i]);
      tn.push_back(map.channels[terrain::kNormalAngle][i]);
      tc.push_back(std::abs(map.channels[terrain::kConcavityAngle][i]));
    }
  }
  if (dz.empty()) return base;
  base.elevation_range = percentile95(std::move(dz));
  base.normal_angle = percentile95(std::move(tn));
  base.concavity = percentile95(std::move(tc));
  return base;
}

Grid<std::uint8_t> rule_baseline(const terrain::FeatureMap& map, const RuleThresholds& t) {
  const auto& g = map.geometry;
  Grid<std::uint8_t> out(g.width, g.height, 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!map.known[i]) continue;
    const double dz = map.channels[terrain::kElevationRange][i];
    const double tn = map.channels[terrain::kNormalAngle][i];
    const double tc = std::abs(map.channels[terrain::kConcavityAngle][i]);
    Level l = Level::kRisky;
    if (dz > t.elevation_range_hard || tn > t.normal_angle_hard || tc > t.concavity_hard) {
      l = Level::kNonTraversable;
    } else if (dz <= t.elevation_range && tn <= t.normal_angle && tc <= t.concavity) {
      l = Level::kTraversable;
    }
    out[i] = static_cast<std::uint8_t>(l);
  }
  return out;
}

std::optional<double> silhouette(const std::vector<Eigen::Vector2d>& points,
                                 const std::vector<int>& labels) {
  if (points.size() != labels.size()) throw std::invalid_argument("silhouette: size mismatch");
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) return std::nullopt;
  bool spread = false;
  for (const auto& p : points) spread = spread || (p - points.front()).squaredNorm() > 0.0;
  if (!spread) return std::nullopt;

  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::map<int, double> sum;
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j != i) sum[labels[j]] += (points[i] - points[j]).norm();
    }
    const std::size_t own = sizes[labels[i]];
    if (own < 2) continue;  // singleton clusters score 0
    const double a = sum[labels[i]] / static_cast<double>(own - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, n] : sizes) {
      if (label != labels[i]) b = std::min(b, sum[label] / static_cast<double>(n));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(points.size());
}

Projection project_embeddings(const std::vector<float>& embeddings, int dim,
                              const std::vector<int>& labels, int classes,
                              std::size_t max_silhouette_points) {
  if (dim <= 0 || embeddings.size() % static_cast<std::size_t>(dim) != 0) {
    throw std::invalid_argument("embedding buffer is not a multiple of the dimension");
  }
  const std::size_t n = embeddings.size() / static_cast<std::size_t>(dim);
  if (n < static_cast<std::size_t>(classes) + 1) {
    throw std::invalid_argument("projection needs at least K + 1 embeddings");
  }
  if (labels.size() != n) throw std::invalid_argument("one label per embedding required");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) {
      x(static_cast<Eigen::Index>(i), d) = embeddings[i * static_cast<std::size_t>(dim) + d];
    }
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  // Eigenvalues ascend; the last two columns are the top components.
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(dim, 2);
  Projection out;
  for (int c = 0; c < 2 && c < dim; ++c) {
    const int idx = dim - 1 - c;
    const double ev = solver.eigenvalues()(idx);
    if (ev > 1e-12) {
      basis.col(c) = solver.eigenvectors().col(idx);
      out.explained_variance(c) = ev;
    }
  }
  const Eigen::MatrixXd proj = x * basis;
  out.coords.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.coords.emplace_back(proj(static_cast<Eigen::Index>(i), 0),
                            proj(static_cast<Eigen::Index>(i), 1));
  }
  if (out.explained_variance.sum() <= 0.0) return out;

  const std::size_t step = std::max<std::size_t>(1, (n + max_silhouette_points - 1) /
                                                        std::max<std::size_t>(1, max_silhouette_points));
  std::vector<Eigen::Vector2d> pts;
  std::vector<int> lab;
  for (std::size_t i = 0; i < n; i += step) {
    pts.push_back(out.coords[i]);
    lab.push_back(labels[i]);
  }
  out.silhouette = silhouette(pts, lab);
  return out;
}

void write_score_header(std::ostream& os) {
  os << "name,pa,miou,iou_traversable,iou_risky,iou_non_traversable,cells\n";
}

void write_score_row(std::ostream& os, const std::string& name, const Score& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f,%.6f,%.6f,%llu\n", s.pa, s.miou, s.iou[0],
                s.iou[1], s.iou[2], static_cast<unsigned long long>(s.cells));
  os << name << buf;
}

void write_mapping_report(std::ostream& os, const Score& s) {
  os << "class -> level (overlap traversable/risky/non-traversable)\n";
  for (int k = 0; k < s.overlap.classes; ++k) {
    const auto& row = s.overlap.counts[static_cast<std::size_t>(k)];
    os << "  " << k + 1 << " -> " << level_name(s.mapping[static_cast<std::size_t>(k)]) << " ("
       << row[0] << "/" << row[1] << "/" << row[2] << ")" << (k == 0 ? " pinned" : "") << "\n";
  }
}

}  // namespace travgrid::eval
