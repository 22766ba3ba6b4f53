#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "travgrid/disambiguation.hpp"
#include "travgrid/encoder.hpp"
#include "travgrid/labeling.hpp"

namespace travgrid::disamb {

enum class LossMode { kSum, kClassification, kContrastive };

LossMode parse_loss_mode(const std::string& name);  // "sum" | "cls" | "cont"
const char* loss_mode_name(LossMode mode);

// How prototypes start: K random unit vectors, or seeded k-means++ picks over
// the initial query embeddings with psi_1 at the mean positive embedding.
enum class PrototypeInit { kRandom, kData };
PrototypeInit parse_prototype_init(const std::string& name);  // "random" | "data"
const char* prototype_init_name(PrototypeInit init);

struct TrainerConfig {
  encoder::EncoderConfig encoder;
  Schedules schedules;
  int classes = 4;
  std::size_t queue_capacity = 8192;
  std::size_t queue_warmup = 1024;
  int contrastive_start_epoch = 1;  // L_cont also waits for this (1-based) epoch
  // Through this epoch, prototype updates and queue labels use the nearest
  // prototype (class 1 for traversed tokens) instead of the classifier argmax.
  int assignment_warmup_epochs = 50;
  std::uint64_t seed = 42;
  LossMode loss = LossMode::kSum;
  bool reanchor_first_prototype = true;
  PrototypeInit prototype_init = PrototypeInit::kData;
};

// Per-channel standardization of token features over known cells; the mask
// channel passes through and unknown cells stay zero.
struct InputNormalizer {
  int channels = labeling::kTokenChannels;
  std::vector<float> mean;
  std::vector<float> stddev;

  void fit(const std::vector<labeling::PatchToken>& tokens);
  void apply(std::span<float> features) const;
};

template <typename T>
struct WindowLoss {
  nn::Var<T> cls;
  nn::Var<T> cont;
  nn::Var<T> total;
  nn::Var<T> embeddings;  // z_q
  nn::Var<T> probs;
  std::vector<MaskedPrediction> predicted;
};

struct LossWeights {
  double cls = 1.0;
  double cont = 0.5;
};

// Builds L_sum = w_cls * L_cls + w_cont * L_cont for one window. `candidates`
// and `soft_labels` are [tokens x K]; the contrastive term is skipped when
// `contrastive_active` is false. Non-empty `anchors` replace the masked
// predictions as the queries' contrastive labels.
template <typename T>
WindowLoss<T> window_loss(const nn::Var<T>& tokens, const nn::ParamSet<T>& trainable,
                          const encoder::EncoderConfig& config, std::span<const T> candidates,
                          std::span<const T> soft_labels, std::span<const T> queue,
                          std::span<const std::int32_t> queue_labels, bool contrastive_active,
                          const LossWeights& weights, T temperature,
                          std::span<const std::int32_t> anchors = {});

struct EpochMetrics {
  int epoch = 0;
  double loss_cls = 0.0;
  double loss_cont = 0.0;
  double loss_sum = 0.0;
  double mean_entropy = 0.0;  // over unlabeled tokens, nats
  double lr = 0.0;
  double label_momentum = 0.0;
};

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const EpochMetrics& m);

struct StepResult {
  double loss_cls = 0.0;
  double loss_cont = 0.0;
  double loss_sum = 0.0;
  std::size_t tokens = 0;
  bool contrastive_active = false;
};

// Trained artifact: everything inference needs.
struct Model {
  encoder::EncoderConfig encoder;
  int classes = 4;
  nn::ParamSet<float> query;  // encoder + cls.* parameters
  nn::ParamSet<float> key;
  PrototypeBank prototypes;
  InputNormalizer normalizer;

  struct Prediction {
    std::vector<int> classes;       // 0-based, one per token
    std::vector<float> embeddings;  // tokens x D
  };
  // Tokens are grouped by (frame, window) and each window is encoded jointly.
  Prediction predict(const std::vector<labeling::PatchToken>& tokens) const;

  void save(const std::filesystem::path& path) const;
  // Throws nn::ShapeError when the checkpoint disagrees with the given dims.
  static Model load(const std::filesystem::path& path, const encoder::EncoderConfig& encoder,
                    int classes);
};

class Trainer {
 public:
  struct Window {
    labeling::TokenId first;
    std::vector<std::size_t> members;  // indices into tokens()
    std::vector<float> input;          // normalized, members x input_dim
  };

  Trainer(TrainerConfig config, std::vector<labeling::PatchToken> tokens);

  StepResult train_step(const Window& window, double lr, double label_momentum);
  EpochMetrics run_epoch();
  std::vector<EpochMetrics> fit(const std::function<void(const EpochMetrics&)>& on_epoch = {});

  const TrainerConfig& config() const { return config_; }
  const std::vector<labeling::PatchToken>& tokens() const { return tokens_; }
  const std::vector<Window>& windows() const { return windows_; }
  const QueuePair& queue() const { return queue_; }
  const PrototypeBank& prototypes() const { return bank_; }
  const nn::ParamSet<float>& query_params() const { return trainable_; }
  const nn::ParamSet<float>& key_params() const { return key_; }
  nn::ParamSet<float>& query_params() { return trainable_; }
  nn::ParamSet<float>& key_params() { return key_; }
  int epochs_done() const { return epoch_; }
  std::size_t fallback_count() const { return fallbacks_; }
  std::size_t degenerate_prototype_count() const { return degenerate_prototypes_; }

  double mean_unlabeled_entropy() const;
  Model model() const;

 private:
  LossWeights loss_weights() const;
  void seed_prototypes_from_data();

  TrainerConfig config_;
  std::vector<labeling::PatchToken> tokens_;
  std::vector<Window> windows_;
  InputNormalizer normalizer_;
  nn::ParamSet<float> trainable_;
  nn::ParamSet<float> key_;
  nn::SgdState<float> sgd_;
  PrototypeBank bank_;
  QueuePair queue_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
  std::size_t fallbacks_ = 0;
  std::size_t degenerate_prototypes_ = 0;
  std::vector<float> positive_sum_;
  std::size_t positive_seen_ = 0;
};

// Groups tokens into windows keyed by (frame, window), ordered by key; each
// group lists token indices in patch order.
std::vector<std::vector<std::size_t>> group_windows(const std::vector<labeling::PatchToken>& tokens);

}  // namespace travgrid::disamb
