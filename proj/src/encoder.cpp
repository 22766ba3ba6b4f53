#include "travgrid/encoder.hpp"

#include <cmath>

namespace travgrid::encoder {

void EncoderConfig::validate() const {
  if (input_dim <= 0 || dim <= 0 || blocks < 0 || heads <= 0 || mlp_ratio <= 0) {
    throw std::invalid_argument("encoder dimensions must be positive");
  }
  if (dim % heads != 0) {
    throw std::invalid_argument("embedding dim " + std::to_string(dim) +
                                " is not divisible by head count " + std::to_string(heads));
  }
}

namespace {

std::string block_name(const std::string& prefix, int block, const char* leaf) {
  return prefix + "block" + std::to_string(block) + "." + leaf;
}

struct ParamShape {
  std::string name;
  int rows;
  int cols;
  enum Kind { kWeight, kZero, kOne } kind;
};

std::vector<ParamShape> encoder_shapes(const EncoderConfig& c, const std::string& prefix) {
  const int d = c.dim;
  const int hidden = c.mlp_ratio * d;
  std::vector<ParamShape> shapes{{prefix + "embed.weight", c.input_dim, d, ParamShape::kWeight},
                                 {prefix + "embed.bias", 1, d, ParamShape::kZero}};
  for (int l = 0; l < c.blocks; ++l) {
    const auto n = [&](const char* leaf) { return block_name(prefix, l, leaf); };
    shapes.push_back({n("ln1.gamma"), 1, d, ParamShape::kOne});
    shapes.push_back({n("ln1.beta"), 1, d, ParamShape::kZero});
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      shapes.push_back({n(w), d, d, ParamShape::kWeight});
      std::string b = w;
      b[b.size() - 2] = 'b';
      shapes.push_back({n(b.c_str()), 1, d, ParamShape::kZero});
    }
    shapes.push_back({n("ln2.gamma"), 1, d, ParamShape::kOne});
    shapes.push_back({n("ln2.beta"), 1, d, ParamShape::kZero});
    shapes.push_back({n("mlp.w1"), d, hidden, ParamShape::kWeight});
    shapes.push_back({n("mlp.b1"), 1, hidden, ParamShape::kZero});
    shapes.push_back({n("mlp.w2"), hidden, d, ParamShape::kWeight});
    shapes.push_back({n("mlp.b2"), 1, d, ParamShape::kZero});
  }
  return shapes;
}

template <typename T>
nn::Var<T> linear(const nn::Var<T>& x, const nn::ParamSet<T>& p, const std::string& w,
                  const std::string& b) {
  return nn::add(nn::matmul(x, p.get(w)), p.get(b));
}

}  // namespace

template <typename T>
nn::ParamSet<T> init_encoder(const EncoderConfig& config, std::mt19937_64& rng) {
  config.validate();
  nn::ParamSet<T> params;
  for (const auto& s : encoder_shapes(config, "")) {
    const std::size_t count = static_cast<std::size_t>(s.rows) * s.cols;
    std::vector<T> values;
    switch (s.kind) {
      case ParamShape::kWeight: values = nn::truncated_normal<T>(count, config.init_sigma, rng); break;
      case ParamShape::kZero: values.assign(count, T(0)); break;
      case ParamShape::kOne: values.assign(count, T(1)); break;
    }
    params.add(s.name, nn::Var<T>::parameter(s.rows, s.cols, std::move(values)));
  }
  return params;
}

template <typename T>
void check_encoder_params(const EncoderConfig& config, const nn::ParamSet<T>& params,
                          const std::string& prefix) {
  for (const auto& s : encoder_shapes(config, prefix)) {
    if (!params.contains(s.name)) throw nn::ShapeError("missing encoder parameter " + s.name);
    const auto& v = params.get(s.name);
    if (v.rows() != s.rows || v.cols() != s.cols) {
      throw nn::ShapeError("encoder parameter " + s.name + " has shape " + v.shape_string() +
                           ", config expects [" + std::to_string(s.rows) + "x" +
                           std::to_string(s.cols) + "]");
    }
  }
}

template <typename T>
nn::Var<T> embed(const nn::Var<T>& tokens, const nn::ParamSet<T>& params,
                 const EncoderConfig& config, const std::string& prefix) {
  if (tokens.cols() != config.input_dim) {
    throw nn::ShapeError("embed: token length " + std::to_string(tokens.cols()) +
                         " does not match M*M*C = " + std::to_string(config.input_dim));
  }
  return linear(tokens, params, prefix + "embed.weight", prefix + "embed.bias");
}

template <typename T>
nn::Var<T> lw_msa(const nn::Var<T>& z, const nn::ParamSet<T>& params, const EncoderConfig& config,
                  int block, const std::string& prefix) {
  const auto n = [&](const char* leaf) { return block_name(prefix, block, leaf); };
  const auto q = linear(z, params, n("attn.wq"), n("attn.bq"));
  const auto k = linear(z, params, n("attn.wk"), n("attn.bk"));
  const auto v = linear(z, params, n("attn.wv"), n("attn.bv"));
  const int hd = config.head_dim();
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<nn::Var<T>> heads;
  heads.reserve(static_cast<std::size_t>(config.heads));
  for (int h = 0; h < config.heads; ++h) {
    const auto qh = nn::slice_cols(q, h * hd, hd);
    const auto kh = nn::slice_cols(k, h * hd, hd);
    const auto vh = nn::slice_cols(v, h * hd, hd);
    const auto logits = nn::scale(nn::matmul(qh, nn::transpose(kh)), inv_sqrt);
    for (T x : logits.value()) {
      if (!std::isfinite(static_cast<double>(x))) {
        throw nn::NonFiniteError("non-finite attention logits in block " +
                                 std::to_string(block) + ", head " + std::to_string(h));
      }
    }
    heads.push_back(nn::matmul(nn::softmax_rows(logits), vh));
  }
  return linear(nn::concat_cols(heads), params, n("attn.wo"), n("attn.bo"));
}

template <typename T>
nn::Var<T> forward_blocks(const nn::Var<T>& tokens, const nn::ParamSet<T>& params,
                          const EncoderConfig& config, const std::string& prefix) {
  auto z = embed(tokens, params, config, prefix);
  for (int l = 0; l < config.blocks; ++l) {
    const auto n = [&](const char* leaf) { return block_name(prefix, l, leaf); };
    const auto attn_in = nn::layer_norm(z, params.get(n("ln1.gamma")), params.get(n("ln1.beta")));
    const auto z_hat = nn::add(lw_msa(attn_in, params, config, l, prefix), z);
    const auto mlp_in =
        nn::layer_norm(z_hat, params.get(n("ln2.gamma")), params.get(n("ln2.beta")));
    const auto hidden = nn::gelu(linear(mlp_in, params, n("mlp.w1"), n("mlp.b1")));
    z = nn::add(linear(hidden, params, n("mlp.w2"), n("mlp.b2")), z_hat);
  }
  return z;
}

template <typename T>
nn::Var<T> forward(const nn::Var<T>& tokens, const nn::ParamSet<T>& params,
                   const EncoderConfig& config, const std::string& prefix) {
  return nn::l2_normalize_rows(forward_blocks(tokens, params, config, prefix));
}

#define TRAVGRID_INSTANTIATE_ENCODER(T)                                                       \
  template nn::ParamSet<T> init_encoder<T>(const EncoderConfig&, std::mt19937_64&);           \
  template void check_encoder_params<T>(const EncoderConfig&, const nn::ParamSet<T>&,         \
                                        const std::string&);                                  \
  template nn::Var<T> embed<T>(const nn::Var<T>&, const nn::ParamSet<T>&,                     \
                               const EncoderConfig&, const std::string&);                     \
  template nn::Var<T> lw_msa<T>(const nn::Var<T>&, const nn::ParamSet<T>&,                    \
                                const EncoderConfig&, int, const std::string&);               \
  template nn::Var<T> forward_blocks<T>(const nn::Var<T>&, const nn::ParamSet<T>&,            \
                                        const EncoderConfig&, const std::string&);            \
  template nn::Var<T> forward<T>(const nn::Var<T>&, const nn::ParamSet<T>&,                   \
                                 const EncoderConfig&, const std::string&);

TRAVGRID_INSTANTIATE_ENCODER(float)
TRAVGRID_INSTANTIATE_ENCODER(double)

#undef TRAVGRID_INSTANTIATE_ENCODER

}  // namespace travgrid::encoder
