#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "travgrid/nn/var.hpp"

namespace travgrid::nn {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

// Ordered collection of trainable arrays. Order is insertion order and fixes
// the iteration (and therefore reduction) order everywhere.
template <typename T>
class ParamSet {
 public:
  Var<T>& add(std::string name, Var<T> var);
  Var<T>& get(const std::string& name);
  const Var<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<NamedParam<T>>& entries() { return entries_; }
  const std::vector<NamedParam<T>>& entries() const { return entries_; }
  std::size_t scalar_count() const;

  void zero_grad();
  // Deep copy with independent value buffers; `trainable` selects leaf kind.
  ParamSet clone(bool trainable) const;

  template <typename U>
  ParamSet<U> cast(bool trainable) const {
    ParamSet<U> out;
    for (const auto& e : entries_) {
      std::vector<U> v(e.var.value().begin(), e.var.value().end());
      out.add(e.name, trainable ? Var<U>::parameter(e.var.rows(), e.var.cols(), std::move(v))
                                : Var<U>::constant(e.var.rows(), e.var.cols(), std::move(v)));
    }
    return out;
  }

 private:
  std::vector<NamedParam<T>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Truncated normal (|x| <= 2 sigma) values from the given engine.
template <typename T>
std::vector<T> truncated_normal(std::size_t count, double sigma, std::mt19937_64& rng);

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-5;
};

template <typename T>
struct SgdState {
  SgdConfig config;
  std::vector<std::vector<T>> velocity;  // aligned with ParamSet entries
};

// v <- momentum * v + g + weight_decay * theta; theta <- theta - lr * v.
// Throws NonFiniteError (leaving params and state untouched) if any gradient
// entry is not finite.
template <typename T>
void sgd_step(ParamSet<T>& params, SgdState<T>& state, double lr);

// Checkpoint file "TGCK" v1, little-endian: char[4] magic, u32 version,
// u32 entry count, then per entry: u32 name length, name bytes, u32 rows,
// u32 cols, f32[rows*cols] row-major payload.
void write_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params);
ParamSet<float> read_checkpoint(const std::filesystem::path& path);

}  // namespace travgrid::nn
