#include "travgrid/disambiguation.hpp"

#include <algorithm>
#include <cmath>

namespace travgrid::disamb {

void Schedules::validate() const {
  for (double m : {key_momentum, prototype_momentum, label_momentum, label_momentum_final}) {
    if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("momentum outside [0, 1]");
  }
  if (!(lr_initial > 0.0) || !(lr_final > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (epochs <= 0) throw std::invalid_argument("epochs must be > 0");
}

double Schedules::lr(int epoch_index) const {
  const double gamma = std::pow(lr_final / lr_initial, 1.0 / epochs);
  return lr_initial * std::pow(gamma, epoch_index);
}

double Schedules::label_momentum_at(int epoch) const {
  if (epoch <= label_hold_epochs || epochs <= label_hold_epochs) return label_momentum;
  const double u = static_cast<double>(epoch - label_hold_epochs) / (epochs - label_hold_epochs);
  return label_momentum - (label_momentum - label_momentum_final) * u * u;
}

template <typename T>
void momentum_update(nn::ParamSet<T>& key, const nn::ParamSet<T>& query, double momentum) {
  const T m = static_cast<T>(momentum);
  const T one_minus = static_cast<T>(1.0 - momentum);
  for (auto& e : key.entries()) {
    const auto& q = query.get(e.name);
    if (q.size() != e.var.size()) {
      throw nn::ShapeError("momentum_update: shape mismatch for " + e.name);
    }
    auto& kv = e.var.value();
    const auto& qv = q.value();
    for (std::size_t i = 0; i < kv.size(); ++i) kv[i] = m * kv[i] + one_minus * qv[i];
  }
}

template <typename T>
MaskedPrediction masked_predict(std::span<const T> probs, std::span<const T> candidates) {
  if (probs.size() != candidates.size() || probs.empty()) {
    throw std::invalid_argument("masked_predict: probability and label sizes differ");
  }
  MaskedPrediction out;
  T best = T(0);
  bool any = false;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const T v = probs[j] * candidates[j];
    if (v > best) {
      best = v;
      out.label = static_cast<int>(j);
      any = true;
    }
  }
  if (!any) {
    out.fell_back = true;
    const auto it = std::find_if(candidates.begin(), candidates.end(), [](T v) { return v > T(0); });
    out.label = it == candidates.end() ? 0 : static_cast<int>(it - candidates.begin());
  }
  return out;
}

QueuePair::QueuePair(std::size_t capacity, int dim)
    : capacity_(capacity),
      dim_(dim),
      embeddings_(capacity * static_cast<std::size_t>(dim), 0.0f),
      labels_(capacity, 0) {
  if (capacity == 0 || dim <= 0) throw std::invalid_argument("queue capacity and dim must be > 0");
}

void QueuePair::push(std::span<const float> embedding, std::int32_t label) {
  if (embedding.size() != static_cast<std::size_t>(dim_)) {
    throw std::invalid_argument("queue embedding has wrong dimension");
  }
  std::copy(embedding.begin(), embedding.end(),
            embeddings_.begin() + static_cast<std::ptrdiff_t>(cursor_ * dim_));
  labels_[cursor_] = label;
  cursor_ = (cursor_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

void QueuePair::clear() {
  cursor_ = 0;
  size_ = 0;
}

void QueuePair::restore(std::vector<float> embeddings, std::vector<std::int32_t> labels,
                        std::size_t cursor) {
  if (labels.size() > capacity_ || embeddings.size() != labels.size() * dim_ ||
      cursor >= capacity_) {
    throw std::invalid_argument("queue restore: inconsistent sizes");
  }
  size_ = labels.size();
  std::copy(embeddings.begin(), embeddings.end(), embeddings_.begin());
  std::copy(labels.begin(), labels.end(), labels_.begin());
  cursor_ = cursor;
}

double contrastive_loss(std::span<const float> z, std::int32_t label, const QueuePair& queue,
                        double temperature) {
  std::vector<double> zd(z.begin(), z.end());
  std::vector<double> qd(queue.embeddings().begin(), queue.embeddings().end());
  return nn::contrastive_value<double>(zd, qd, queue.labels(), label, temperature);
}

PrototypeBank PrototypeBank::random(int classes, int dim, std::mt19937_64& rng) {
  PrototypeBank bank(classes, dim);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int c = 0; c < classes; ++c) {
    std::vector<float> v(static_cast<std::size_t>(dim));
    for (auto& x : v) x = static_cast<float>(dist(rng));
    bank.assign(c, v);
  }
  return bank;
}

bool PrototypeBank::assign(int c, std::span<const float> direction) {
  double ss = 0.0;
  for (float v : direction) ss += static_cast<double>(v) * v;
  if (!(ss > 0.0)) return false;
  const double inv = 1.0 / std::sqrt(ss);
  auto dst = row(c);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(direction[i] * inv);
  return true;
}

bool PrototypeBank::update(int c, std::span<const float> z, double momentum) {
  auto psi = row(c);
  std::vector<double> blend(psi.size());
  double ss = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    blend[i] = momentum * psi[i] + (1.0 - momentum) * z[i];
    ss += blend[i] * blend[i];
  }
  if (!(ss > 1e-24)) return false;
  const double inv = 1.0 / std::sqrt(ss);
  for (std::size_t i = 0; i < psi.size(); ++i) psi[i] = static_cast<float>(blend[i] * inv);
  return true;
}

int PrototypeBank::nearest(std::span<const float> z) const {
  int best = 0;
  double best_dot = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < classes_; ++c) {
    const auto psi = row(c);
    double dot = 0.0;
    for (std::size_t i = 0; i < psi.size(); ++i) dot += static_cast<double>(z[i]) * psi[i];
    if (dot > best_dot) {
      best_dot = dot;
      best = c;
    }
  }
  return best;
}

void refine_label(std::span<float> soft_label, std::span<const float> z,
                  const PrototypeBank& bank, double momentum) {
  const int hit = bank.nearest(z);
  for (std::size_t j = 0; j < soft_label.size(); ++j) {
    const double xi = static_cast<int>(j) == hit ? 1.0 : 0.0;
    soft_label[j] = static_cast<float>(momentum * soft_label[j] + (1.0 - momentum) * xi);
  }
}

double cross_entropy_loss(std::span<const float> probs, std::span<const float> soft_label) {
  if (probs.size() != soft_label.size()) {
    throw std::invalid_argument("cross_entropy_loss: size mismatch");
  }
  double loss = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (soft_label[j] == 0.0f) continue;
    loss -= soft_label[j] * std::log(std::max(static_cast<double>(probs[j]), 1e-12));
  }
  return loss;
}

double entropy(std::span<const float> distribution) {
  double h = 0.0;
  for (float p : distribution) {
    if (p > 0.0f) h -= p * std::log(static_cast<double>(p));
  }
  return h;
}

template <typename T>
void init_classifier(nn::ParamSet<T>& params, int dim, int classes, double sigma,
                     std::mt19937_64& rng) {
  params.add("cls.w1", nn::Var<T>::parameter(dim, dim, nn::truncated_normal<T>(
                                                           static_cast<std::size_t>(dim) * dim, sigma, rng)));
  params.add("cls.b1", nn::Var<T>::parameter(1, dim, std::vector<T>(static_cast<std::size_t>(dim))));
  params.add("cls.w2", nn::Var<T>::parameter(dim, classes, nn::truncated_normal<T>(
                                                               static_cast<std::size_t>(dim) * classes, sigma, rng)));
  params.add("cls.b2",
             nn::Var<T>::parameter(1, classes, std::vector<T>(static_cast<std::size_t>(classes))));
}

template <typename T>
nn::Var<T> classify(const nn::Var<T>& z, const nn::ParamSet<T>& params) {
  const auto hidden = nn::gelu(nn::add(nn::matmul(z, params.get("cls.w1")), params.get("cls.b1")));
  return nn::softmax_rows(nn::add(nn::matmul(hidden, params.get("cls.w2")), params.get("cls.b2")));
}

template void momentum_update<float>(nn::ParamSet<float>&, const nn::ParamSet<float>&, double);
template void momentum_update<double>(nn::ParamSet<double>&, const nn::ParamSet<double>&, double);
template MaskedPrediction masked_predict<float>(std::span<const float>, std::span<const float>);
template MaskedPrediction masked_predict<double>(std::span<const double>, std::span<const double>);
template void init_classifier<float>(nn::ParamSet<float>&, int, int, double, std::mt19937_64&);
template void init_classifier<double>(nn::ParamSet<double>&, int, int, double, std::mt19937_64&);
template nn::Var<float> classify<float>(const nn::Var<float>&, const nn::ParamSet<float>&);
template nn::Var<double> classify<double>(const nn::Var<double>&, const nn::ParamSet<double>&);

}  // namespace travgrid::disamb
