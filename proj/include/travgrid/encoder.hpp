#pragma once

#include <random>
#include <string>

#include "travgrid/nn/ops.hpp"
#include "travgrid/nn/params.hpp"

namespace travgrid::encoder {

struct EncoderConfig {
  int input_dim = 11 * 11 * 8;  // M*M*C flattened patch
  int dim = 32;                 // D
  int blocks = 8;
  int heads = 4;
  int mlp_ratio = 4;
  double init_sigma = 0.02;

  int head_dim() const { return dim / heads; }
  void validate() const;
};

// Parameter names: embed.{weight,bias};
// block<l>.{ln1,ln2}.{gamma,beta}; block<l>.attn.{wq,bq,wk,bk,wv,bv,wo,bo};
// block<l>.mlp.{w1,b1,w2,b2}.
template <typename T>
nn::ParamSet<T> init_encoder(const EncoderConfig& config, std::mt19937_64& rng);

// Throws nn::ShapeError unless params carry exactly the tensors `config` implies.
template <typename T>
void check_encoder_params(const EncoderConfig& config, const nn::ParamSet<T>& params,
                          const std::string& prefix = "");

// E = X W_e + b_e for a window X of shape [tokens x input_dim].
template <typename T>
nn::Var<T> embed(const nn::Var<T>& tokens, const nn::ParamSet<T>& params,
                 const EncoderConfig& config, const std::string& prefix = "");

// Multi-head self-attention over every token of the window, output-projected.
template <typename T>
nn::Var<T> lw_msa(const nn::Var<T>& z, const nn::ParamSet<T>& params, const EncoderConfig& config,
                  int block, const std::string& prefix = "");

// Z^L after all pre-norm blocks (no final normalization).
template <typename T>
nn::Var<T> forward_blocks(const nn::Var<T>& tokens, const nn::ParamSet<T>& params,
                          const EncoderConfig& config, const std::string& prefix = "");

// Unit-norm per-token embeddings [tokens x D].
template <typename T>
nn::Var<T> forward(const nn::Var<T>& tokens, const nn::ParamSet<T>& params,
                   const EncoderConfig& config, const std::string& prefix = "");

}  // namespace travgrid::encoder
