#include "travgrid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>

namespace travgrid::disamb {

LossMode parse_loss_mode(const std::string& name) {
  if (name == "sum") return LossMode::kSum;
  if (name == "cls") return LossMode::kClassification;
  if (name == "cont") return LossMode::kContrastive;
  throw std::invalid_argument("unknown loss mode '" + name + "' (expected sum, cls or cont)");
}

const char* loss_mode_name(LossMode mode) {
  switch (mode) {
    case LossMode::kSum: return "sum";
    case LossMode::kClassification: return "cls";
    case LossMode::kContrastive: return "cont";
  }
  return "sum";
}

PrototypeInit parse_prototype_init(const std::string& name) {
  if (name == "random") return PrototypeInit::kRandom;
  if (name == "data") return PrototypeInit::kData;
  throw std::invalid_argument("unknown prototype init '" + name + "' (expected random or data)");
}

const char* prototype_init_name(PrototypeInit init) {
  return init == PrototypeInit::kRandom ? "random" : "data";
}

void InputNormalizer::fit(const std::vector<labeling::PatchToken>& tokens) {
  const int feature_channels = channels - 1;
  std::vector<double> sum(static_cast<std::size_t>(feature_channels), 0.0);
  std::vector<double> sq(static_cast<std::size_t>(feature_channels), 0.0);
  std::size_t count = 0;
  for (const auto& t : tokens) {
    for (std::size_t off = 0; off < t.features.size(); off += static_cast<std::size_t>(channels)) {
      if (t.features[off + static_cast<std::size_t>(feature_channels)] == 0.0f) continue;
      for (int c = 0; c < feature_channels; ++c) {
        const double v = t.features[off + static_cast<std::size_t>(c)];
        sum[static_cast<std::size_t>(c)] += v;
        sq[static_cast<std::size_t>(c)] += v * v;
      }
      ++count;
    }
  }
  mean.assign(static_cast<std::size_t>(feature_channels), 0.0f);
  stddev.assign(static_cast<std::size_t>(feature_channels), 1.0f);
  if (count == 0) return;
  for (int c = 0; c < feature_channels; ++c) {
    const auto i = static_cast<std::size_t>(c);
    const double m = sum[i] / count;
    const double var = std::max(0.0, sq[i] / count - m * m);
    mean[i] = static_cast<float>(m);
    stddev[i] = var > 1e-12 ? static_cast<float>(std::sqrt(var)) : 1.0f;
  }
}

void InputNormalizer::apply(std::span<float> features) const {
  const auto feature_channels = static_cast<std::size_t>(channels - 1);
  if (mean.size() != feature_channels || stddev.size() != feature_channels) {
    throw std::logic_error("input normalizer used before fit");
  }
  for (std::size_t off = 0; off < features.size(); off += static_cast<std::size_t>(channels)) {
    const bool known = features[off + feature_channels] != 0.0f;
    for (std::size_t c = 0; c < feature_channels; ++c) {
      features[off + c] = known ? (features[off + c] - mean[c]) / stddev[c] : 0.0f;
    }
  }
}

template <typename T>
WindowLoss<T> window_loss(const nn::Var<T>& tokens, const nn::ParamSet<T>& trainable,
                          const encoder::EncoderConfig& config, std::span<const T> candidates,
                          std::span<const T> soft_labels, std::span<const T> queue,
                          std::span<const std::int32_t> queue_labels, bool contrastive_active,
                          const LossWeights& weights, T temperature,
                          std::span<const std::int32_t> anchor_override) {
  WindowLoss<T> out;
  out.embeddings = encoder::forward(tokens, trainable, config);
  out.probs = classify(out.embeddings, trainable);
  const int n = out.probs.rows();
  const auto k = static_cast<std::size_t>(out.probs.cols());
  if (candidates.size() != n * k || soft_labels.size() != n * k) {
    throw nn::ShapeError("window_loss: label arrays do not match [tokens x K]");
  }
  if (!anchor_override.empty() && anchor_override.size() != static_cast<std::size_t>(n)) {
    throw nn::ShapeError("window_loss: anchor labels do not match token count");
  }
  std::vector<std::int32_t> anchors(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto off = static_cast<std::size_t>(i) * k;
    const std::span<const T> p(out.probs.value().data() + off, k);
    out.predicted.push_back(masked_predict<T>(p, candidates.subspan(off, k)));
    anchors[static_cast<std::size_t>(i)] = out.predicted.back().label;
  }
  out.cls = nn::cross_entropy_rows(out.probs, soft_labels);
  if (contrastive_active) {
    out.cont = nn::contrastive_rows(
        out.embeddings, queue, queue_labels,
        anchor_override.empty() ? std::span<const std::int32_t>(anchors) : anchor_override,
        temperature);
  } else {
    out.cont = nn::Var<T>::constant(1, 1, T(0));
  }
  out.total = nn::add(nn::scale(out.cls, static_cast<T>(weights.cls)),
                      nn::scale(out.cont, static_cast<T>(weights.cont)));
  return out;
}

template WindowLoss<float> window_loss<float>(const nn::Var<float>&, const nn::ParamSet<float>&,
                                              const encoder::EncoderConfig&,
                                              std::span<const float>, std::span<const float>,
                                              std::span<const float>,
                                              std::span<const std::int32_t>, bool,
                                              const LossWeights&, float,
                                              std::span<const std::int32_t>);
template WindowLoss<double> window_loss<double>(const nn::Var<double>&,
                                                const nn::ParamSet<double>&,
                                                const encoder::EncoderConfig&,
                                                std::span<const double>, std::span<const double>,
                                                std::span<const double>,
                                                std::span<const std::int32_t>, bool,
                                                const LossWeights&, double,
                                                std::span<const std::int32_t>);

void write_metrics_header(std::ostream& os) {
  os << "epoch,l_cls,l_cont,l_sum,mean_entropy,lr,m_l\n";
}

void write_metrics_row(std::ostream& os, const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", m.epoch, m.loss_cls,
                m.loss_cont, m.loss_sum, m.mean_entropy, m.lr, m.label_momentum);
  os << buf;
}

std::vector<std::vector<std::size_t>> group_windows(
    const std::vector<labeling::PatchToken>& tokens) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    groups[{tokens[i].id.frame, tokens[i].id.window}].push_back(i);
  }
  std::vector<std::vector<std::size_t>> out;
  out.reserve(groups.size());
  for (auto& [key, members] : groups) {
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return tokens[a].id.patch < tokens[b].id.patch;
    });
    out.push_back(std::move(members));
  }
  return out;
}

namespace {

std::vector<float> normalized_input(const std::vector<labeling::PatchToken>& tokens,
                                    const std::vector<std::size_t>& members,
                                    const InputNormalizer& normalizer, int input_dim) {
  std::vector<float> input;
  input.reserve(members.size() * static_cast<std::size_t>(input_dim));
  for (std::size_t idx : members) {
    const auto& f = tokens[idx].features;
    if (f.size() != static_cast<std::size_t>(input_dim)) {
      throw nn::ShapeError("token feature length " + std::to_string(f.size()) +
                           " does not match encoder input " + std::to_string(input_dim));
    }
    const auto start = input.size();
    input.insert(input.end(), f.begin(), f.end());
    normalizer.apply(std::span<float>(input.data() + start, f.size()));
  }
  return input;
}

nn::ParamSet<float> encoder_subset(const nn::ParamSet<float>& params, bool trainable) {
  nn::ParamSet<float> out;
  for (const auto& e : params.entries()) {
    if (e.name.rfind("cls.", 0) == 0) continue;
    std::vector<float> v = e.var.value();
    out.add(e.name, trainable ? nn::Var<float>::parameter(e.var.rows(), e.var.cols(), std::move(v))
                              : nn::Var<float>::constant(e.var.rows(), e.var.cols(), std::move(v)));
  }
  return out;
}

}  // namespace

Trainer::Trainer(TrainerConfig config, std::vector<labeling::PatchToken> tokens)
    : config_(std::move(config)),
      tokens_(std::move(tokens)),
      queue_(config_.queue_capacity, config_.encoder.dim),
      rng_(config_.seed) {
  config_.encoder.validate();
  config_.schedules.validate();
  if (config_.classes < 1) throw std::invalid_argument("class count K must be >= 1");
  for (const auto& t : tokens_) {
    if (t.soft_label.size() != static_cast<std::size_t>(config_.classes)) {
      throw nn::ShapeError("token soft label has " + std::to_string(t.soft_label.size()) +
                           " entries, K = " + std::to_string(config_.classes));
    }
  }
  normalizer_.fit(tokens_);
  for (auto& members : group_windows(tokens_)) {
    Window w;
    w.first = tokens_[members.front()].id;
    w.input = normalized_input(tokens_, members, normalizer_, config_.encoder.input_dim);
    w.members = std::move(members);
    windows_.push_back(std::move(w));
  }
  trainable_ = encoder::init_encoder<float>(config_.encoder, rng_);
  init_classifier<float>(trainable_, config_.encoder.dim, config_.classes,
                         config_.encoder.init_sigma, rng_);
  key_ = encoder_subset(trainable_, false);
  bank_ = PrototypeBank::random(config_.classes, config_.encoder.dim, rng_);
  positive_sum_.assign(static_cast<std::size_t>(config_.encoder.dim), 0.0f);
  if (config_.prototype_init == PrototypeInit::kData && !tokens_.empty()) seed_prototypes_from_data();
}

void Trainer::seed_prototypes_from_data() {
  const auto d = static_cast<std::size_t>(config_.encoder.dim);
  std::vector<float> z(tokens_.size() * d);
  for (const auto& w : windows_) {
    const auto input = nn::Var<float>::constant(static_cast<int>(w.members.size()),
                                                config_.encoder.input_dim, w.input);
    const auto out = encoder::forward(input, trainable_, config_.encoder);
    for (std::size_t i = 0; i < w.members.size(); ++i) {
      std::copy_n(out.value().data() + i * d, d, z.data() + w.members[i] * d);
    }
  }
  const auto row = [&](std::size_t i) { return std::span<const float>(z.data() + i * d, d); };

  std::vector<float> mean(d, 0.0f);
  std::size_t positives = 0;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!tokens_[i].positive) continue;
    for (std::size_t j = 0; j < d; ++j) mean[j] += z[i * d + j];
    ++positives;
  }
  std::uniform_int_distribution<std::size_t> pick(0, tokens_.size() - 1);
  if (positives == 0 || !bank_.assign(0, mean)) bank_.assign(0, row(pick(rng_)));

  // D^2 sampling against the prototypes chosen so far.
  std::vector<double> dist(tokens_.size(), std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < config_.classes; ++c) {
    double total = 0.0;
    const auto prev = bank_.row(c - 1);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      double dd = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(z[i * d + j]) - prev[j];
        dd += diff * diff;
      }
      dist[i] = std::min(dist[i], dd);
      total += dist[i];
    }
    if (!(total > 0.0)) break;  // keep the random vectors for the rest
    double target = unit(rng_) * total;
    std::size_t chosen = tokens_.size() - 1;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      target -= dist[i];
      if (target <= 0.0) {
        chosen = i;
        break;
      }
    }
    bank_.assign(c, row(chosen));
  }
}

LossWeights Trainer::loss_weights() const {
  switch (config_.loss) {
    case LossMode::kSum: return {1.0, config_.schedules.loss_weight};
    case LossMode::kClassification: return {1.0, 0.0};
    case LossMode::kContrastive: return {0.0, 1.0};
  }
  return {};
}

StepResult Trainer::train_step(const Window& window, double lr, double label_momentum) {
  const int n = static_cast<int>(window.members.size());
  const auto k = static_cast<std::size_t>(config_.classes);
  const auto d = static_cast<std::size_t>(config_.encoder.dim);
  const auto input = nn::Var<float>::constant(n, config_.encoder.input_dim, window.input);

  std::vector<float> candidates;
  std::vector<float> soft;
  candidates.reserve(static_cast<std::size_t>(n) * k);
  soft.reserve(static_cast<std::size_t>(n) * k);
  for (std::size_t idx : window.members) {
    const auto y = tokens_[idx].pseudo_label(config_.classes);
    candidates.insert(candidates.end(), y.begin(), y.end());
    soft.insert(soft.end(), tokens_[idx].soft_label.begin(), tokens_[idx].soft_label.end());
  }

  // (1) key embeddings from the momentum encoder; no graph is recorded.
  const auto z_key = encoder::forward(input, key_, config_.encoder);
  const auto& zk = z_key.value();
  const bool warm = epoch_ <= config_.assignment_warmup_epochs;
  std::vector<std::int32_t> warm_labels;
  if (warm) {
    for (int i = 0; i < n; ++i) {
      const auto& tok = tokens_[window.members[static_cast<std::size_t>(i)]];
      const std::span<const float> z(zk.data() + static_cast<std::size_t>(i) * d, d);
      warm_labels.push_back(tok.positive ? 0 : bank_.nearest(z));
    }
  }

  // (2)-(6) query forward, masked prediction, losses, SGD on query + classifier.
  StepResult result;
  result.tokens = window.members.size();
  result.contrastive_active =
      config_.loss != LossMode::kClassification && queue_.size() >= config_.queue_warmup &&
      epoch_ >= config_.contrastive_start_epoch;
  trainable_.zero_grad();
  const auto loss = window_loss<float>(input, trainable_, config_.encoder, candidates, soft,
                                       queue_.embeddings(), queue_.labels(),
                                       result.contrastive_active, loss_weights(),
                                       static_cast<float>(config_.schedules.temperature),
                                       warm_labels);
  result.loss_cls = loss.cls.item();
  result.loss_cont = loss.cont.item();
  result.loss_sum = loss.total.item();
  if (!std::isfinite(result.loss_sum)) {
    throw nn::NonFiniteError("non-finite loss in batch frame " + std::to_string(window.first.frame) +
                             " window " + std::to_string(window.first.window));
  }
  if (loss.total.requires_grad()) {
    nn::backward(loss.total);
    try {
      nn::sgd_step(trainable_, sgd_, lr);
    } catch (const nn::NonFiniteError& e) {
      throw nn::NonFiniteError(std::string(e.what()) + " (batch frame " +
                               std::to_string(window.first.frame) + " window " +
                               std::to_string(window.first.window) + ")");
    }
  }

  // (7) momentum update of the key encoder.
  momentum_update(key_, trainable_, config_.schedules.key_momentum);

  const auto& zq = loss.embeddings.value();
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& pred = loss.predicted[static_cast<std::size_t>(i)];
    if (pred.fell_back) ++fallbacks_;
    const std::span<const float> z(zq.data() + static_cast<std::size_t>(i) * d, d);
    auto& tok = tokens_[window.members[static_cast<std::size_t>(i)]];
    int label = pred.label;
    if (warm) label = warm_labels[static_cast<std::size_t>(i)];
    labels[static_cast<std::size_t>(i)] = label;
    // (8) prototype of the predicted class
    if (!bank_.update(label, z, config_.schedules.prototype_momentum)) ++degenerate_prototypes_;
    if (tok.positive && epoch_ == 1) {
      for (std::size_t j = 0; j < d; ++j) positive_sum_[j] += z[j];
      ++positive_seen_;
    }
  }
  for (int i = 0; i < n; ++i) {
    auto& tok = tokens_[window.members[static_cast<std::size_t>(i)]];
    const std::span<const float> z(zq.data() + static_cast<std::size_t>(i) * d, d);
    // (9) pseudo-label refinement; traversed tokens stay anchored
    if (!tok.positive) refine_label(tok.soft_label, z, bank_, label_momentum);
  }
  for (int i = 0; i < n; ++i) {
    // (10) enqueue key embedding with its masked prediction
    queue_.push(std::span<const float>(zk.data() + static_cast<std::size_t>(i) * d, d),
                labels[static_cast<std::size_t>(i)]);
  }
  return result;
}

double Trainer::mean_unlabeled_entropy() const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& t : tokens_) {
    if (t.positive) continue;
    sum += entropy(t.soft_label);
    ++count;
  }
  return count > 0 ? sum / count : 0.0;
}

EpochMetrics Trainer::run_epoch() {
  ++epoch_;
  EpochMetrics m;
  m.epoch = epoch_;
  m.lr = config_.schedules.lr(epoch_ - 1);
  m.label_momentum = config_.schedules.label_momentum_at(epoch_);

  std::vector<std::size_t> order(windows_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng_);

  std::size_t tokens = 0;
  for (std::size_t w : order) {
    const auto r = train_step(windows_[w], m.lr, m.label_momentum);
    m.loss_cls += r.loss_cls * static_cast<double>(r.tokens);
    m.loss_cont += r.loss_cont * static_cast<double>(r.tokens);
    m.loss_sum += r.loss_sum * static_cast<double>(r.tokens);
    tokens += r.tokens;
  }
  if (tokens > 0) {
    m.loss_cls /= static_cast<double>(tokens);
    m.loss_cont /= static_cast<double>(tokens);
    m.loss_sum /= static_cast<double>(tokens);
  }
  if (epoch_ == 1 && config_.reanchor_first_prototype && positive_seen_ > 0) {
    bank_.assign(0, positive_sum_);
  }
  m.mean_entropy = mean_unlabeled_entropy();
  return m;
}

std::vector<EpochMetrics> Trainer::fit(const std::function<void(const EpochMetrics&)>& on_epoch) {
  std::vector<EpochMetrics> history;
  while (epoch_ < config_.schedules.epochs) {
    history.push_back(run_epoch());
    if (on_epoch) on_epoch(history.back());
  }
  return history;
}

Model Trainer::model() const {
  Model m;
  m.encoder = config_.encoder;
  m.classes = config_.classes;
  m.query = trainable_.clone(false);
  m.key = key_.clone(false);
  m.prototypes = bank_;
  m.normalizer = normalizer_;
  return m;
}

Model::Prediction Model::predict(const std::vector<labeling::PatchToken>& tokens) const {
  Prediction out;
  out.classes.assign(tokens.size(), 0);
  const auto d = static_cast<std::size_t>(encoder.dim);
  out.embeddings.assign(tokens.size() * d, 0.0f);
  for (const auto& members : group_windows(tokens)) {
    const auto input = nn::Var<float>::constant(
        static_cast<int>(members.size()), encoder.input_dim,
        normalized_input(tokens, members, normalizer, encoder.input_dim));
    const auto z = encoder::forward(input, query, encoder);
    const auto probs = classify(z, query);
    for (std::size_t i = 0; i < members.size(); ++i) {
      const float* p = probs.value().data() + i * static_cast<std::size_t>(classes);
      out.classes[members[i]] = static_cast<int>(std::max_element(p, p + classes) - p);
      std::copy_n(z.value().data() + i * d, d, out.embeddings.data() + members[i] * d);
    }
  }
  return out;
}

void Model::save(const std::filesystem::path& path) const {
  nn::ParamSet<float> ckpt;
  for (const auto& e : query.entries()) ckpt.add("query." + e.name, e.var);
  for (const auto& e : key.entries()) ckpt.add("key." + e.name, e.var);
  ckpt.add("prototypes", nn::Var<float>::constant(prototypes.classes(), prototypes.dim(),
                                                   prototypes.values()));
  const int c = static_cast<int>(normalizer.mean.size());
  ckpt.add("input.mean", nn::Var<float>::constant(1, c, normalizer.mean));
  ckpt.add("input.std", nn::Var<float>::constant(1, c, normalizer.stddev));
  nn::write_checkpoint(path, ckpt);
}

Model Model::load(const std::filesystem::path& path, const encoder::EncoderConfig& encoder,
                  int classes) {
  const auto ckpt = nn::read_checkpoint(path);
  Model m;
  m.encoder = encoder;
  m.classes = classes;
  for (const auto& e : ckpt.entries()) {
    std::vector<float> v = e.var.value();
    auto var = nn::Var<float>::constant(e.var.rows(), e.var.cols(), std::move(v));
    if (e.name.rfind("query.", 0) == 0) {
      m.query.add(e.name.substr(6), var);
    } else if (e.name.rfind("key.", 0) == 0) {
      m.key.add(e.name.substr(4), var);
    }
  }
  encoder::check_encoder_params(encoder, m.query);
  encoder::check_encoder_params(encoder, m.key);
  if (!m.query.contains("cls.w2") || m.query.get("cls.w2").cols() != classes ||
      m.query.get("cls.w1").rows() != encoder.dim) {
    throw nn::ShapeError("checkpoint classifier does not match D=" + std::to_string(encoder.dim) +
                         ", K=" + std::to_string(classes));
  }
  const auto& protos = ckpt.get("prototypes");
  if (protos.rows() != classes || protos.cols() != encoder.dim) {
    throw nn::ShapeError("checkpoint prototypes have shape " + protos.shape_string());
  }
  m.prototypes = PrototypeBank(classes, encoder.dim);
  m.prototypes.values() = protos.value();
  m.normalizer.mean = ckpt.get("input.mean").value();
  m.normalizer.stddev = ckpt.get("input.std").value();
  if (static_cast<int>(m.normalizer.mean.size()) != m.normalizer.channels - 1) {
    throw nn::ShapeError("checkpoint input normalizer has wrong channel count");
  }
  return m;
}

}  // namespace travgrid::disamb
