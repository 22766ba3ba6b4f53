#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "travgrid/nn/ops.hpp"
#include "travgrid/nn/params.hpp"

namespace travgrid::disamb {

// Training schedules. Epochs are 1-based in m_l(); lr() takes the 0-based
// epoch index so the first epoch trains at lr_initial.
struct Schedules {
  double key_momentum = 0.999;       // m_theta
  double prototype_momentum = 0.99;  // m_p
  double label_momentum = 0.99;      // initial m_l
  double label_momentum_final = 0.5;
  int label_hold_epochs = 10;
  double temperature = 0.07;  // tau
  double loss_weight = 0.5;   // lambda
  double lr_initial = 0.02;
  double lr_final = 0.001;
  int epochs = 50;

  void validate() const;
  double lr(int epoch_index) const;
  double label_momentum_at(int epoch) const;
};

// theta_k <- m * theta_k + (1 - m) * theta_q for every entry of `key`;
// `query` may hold additional entries.
template <typename T>
void momentum_update(nn::ParamSet<T>& key, const nn::ParamSet<T>& query, double momentum);

struct MaskedPrediction {
  int label = 0;  // 0-based class index
  bool fell_back = false;
};

// argmax_j probs_j * y_j, ties to the smallest index. When every masked value
// is zero, falls back to the first index in y's support.
template <typename T>
MaskedPrediction masked_predict(std::span<const T> probs, std::span<const T> candidates);

// Fixed-capacity FIFO of (key embedding, predicted label) pairs.
class QueuePair {
 public:
  QueuePair(std::size_t capacity, int dim);

  void push(std::span<const float> embedding, std::int32_t label);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  int dim() const { return dim_; }

  // Stored pairs in slot order; embeddings()[i*dim..] belongs to labels()[i].
  std::span<const float> embeddings() const {
    return {embeddings_.data(), size_ * static_cast<std::size_t>(dim_)};
  }
  std::span<const std::int32_t> labels() const { return {labels_.data(), size_}; }

  void clear();
  void restore(std::vector<float> embeddings, std::vector<std::int32_t> labels,
               std::size_t cursor);
  std::size_t cursor() const { return cursor_; }

 private:
  std::size_t capacity_;
  int dim_;
  std::vector<float> embeddings_;
  std::vector<std::int32_t> labels_;
  std::size_t cursor_ = 0;
  std::size_t size_ = 0;
};

// Per-token contrastive loss of a unit embedding against the queue; 0 when no
// queue entry carries `label`.
double contrastive_loss(std::span<const float> z, std::int32_t label, const QueuePair& queue,
                        double temperature);

class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(int classes, int dim) : classes_(classes), dim_(dim), values_(
      static_cast<std::size_t>(classes) * dim, 0.0f) {}

  static PrototypeBank random(int classes, int dim, std::mt19937_64& rng);

  int classes() const { return classes_; }
  int dim() const { return dim_; }
  std::span<float> row(int c) {
    return {values_.data() + static_cast<std::size_t>(c) * dim_, static_cast<std::size_t>(dim_)};
  }
  std::span<const float> row(int c) const {
    return {values_.data() + static_cast<std::size_t>(c) * dim_, static_cast<std::size_t>(dim_)};
  }
  std::vector<float>& values() { return values_; }
  const std::vector<float>& values() const { return values_; }

  // psi_c <- normalize(m * psi_c + (1 - m) * z). Returns false (and leaves
  // psi_c unchanged) when the blend has zero norm.
  bool update(int c, std::span<const float> z, double momentum);
  // Sets psi_c to normalize(direction); false when direction is zero.
  bool assign(int c, std::span<const float> direction);
  // argmax_j z . psi_j, ties to the smallest index.
  int nearest(std::span<const float> z) const;

 private:
  int classes_ = 0;
  int dim_ = 0;
  std::vector<float> values_;
};

// y_n <- m * y_n + (1 - m) * onehot(nearest prototype of z).
void refine_label(std::span<float> soft_label, std::span<const float> z,
                  const PrototypeBank& bank, double momentum);

// -sum_j y_j log(max(p_j, 1e-12)).
double cross_entropy_loss(std::span<const float> probs, std::span<const float> soft_label);

double entropy(std::span<const float> distribution);

// MLP classifier D -> D -> K with softmax output. Names cls.{w1,b1,w2,b2}.
template <typename T>
void init_classifier(nn::ParamSet<T>& params, int dim, int classes, double sigma,
                     std::mt19937_64& rng);

template <typename T>
nn::Var<T> classify(const nn::Var<T>& z, const nn::ParamSet<T>& params);

}  // namespace travgrid::disamb
