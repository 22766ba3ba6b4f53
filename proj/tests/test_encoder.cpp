#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "travgrid/encoder.hpp"

using namespace travgrid;
using namespace travgrid::encoder;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.input_dim = 12;
  c.dim = 8;
  c.blocks = 2;
  c.heads = 2;
  return c;
}

nn::Var<double> random_tokens(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(static_cast<std::size_t>(n) * d);
  for (auto& x : v) x = g(rng);
  return nn::Var<double>::constant(n, d, std::move(v));
}

// Pushes weights away from the tiny init so attention is not uniform.
void scale_params(nn::ParamSet<double>& p, double factor) {
  for (auto& e : p.entries()) {
    if (e.name.find("ln") != std::string::npos) continue;
    for (auto& v : e.var.value()) v *= factor;
  }
}

void zero_output_projections(nn::ParamSet<double>& p, const EncoderConfig& c) {
  for (int l = 0; l < c.blocks; ++l) {
    for (const char* name : {".attn.wo", ".attn.bo", ".mlp.w2", ".mlp.b2"}) {
      auto& v = p.get("block" + std::to_string(l) + name).value();
      std::fill(v.begin(), v.end(), 0.0);
    }
  }
}

}  // namespace

TEST_CASE("zero input and zero bias embed to zero") {
  const auto c = small_config();
  std::mt19937_64 rng(1);
  auto p = init_encoder<double>(c, rng);
  const auto e = embed(nn::Var<double>::constant(3, c.input_dim, 0.0), p, c);
  for (double v : e.value()) CHECK(v == 0.0);
}

TEST_CASE("embedding matches a dense matrix-product oracle") {
  const auto c = small_config();
  std::mt19937_64 rng(2);
  auto p = init_encoder<double>(c, rng);
  scale_params(p, 50.0);
  const auto x = random_tokens(5, c.input_dim, rng);
  const auto e = embed(x, p, c);
  const auto& w = p.get("embed.weight");
  const auto& b = p.get("embed.bias");
  Eigen::MatrixXd xm = Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(x.value().data(), 5, c.input_dim);
  Eigen::MatrixXd wm = Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(w.value().data(), w.rows(), w.cols());
  Eigen::RowVectorXd bm = Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), b.cols());
  const Eigen::MatrixXd expect = (xm * wm).rowwise() + bm;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < c.dim; ++j) CHECK(e.at(i, j) == doctest::Approx(expect(i, j)).epsilon(1e-12));
}

TEST_CASE("identity-like projection selects input coordinates") {
  auto c = small_config();
  std::mt19937_64 rng(3);
  auto p = init_encoder<double>(c, rng);
  auto& w = p.get("embed.weight").value();
  std::fill(w.begin(), w.end(), 0.0);
  for (int j = 0; j < c.dim; ++j) w[static_cast<std::size_t>(j * c.dim + j)] = 1.0;
  const auto x = random_tokens(4, c.input_dim, rng);
  const auto e = embed(x, p, c);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < c.dim; ++j) CHECK(e.at(i, j) == x.at(i, j));
}

TEST_CASE("wrong token length is rejected") {
  const auto c = small_config();
  std::mt19937_64 rng(4);
  auto p = init_encoder<double>(c, rng);
  CHECK_THROWS_AS(embed(nn::Var<double>::constant(2, c.input_dim + 1), p, c), nn::ShapeError);
}

TEST_CASE("zero query and key projections give uniform attention") {
  const auto c = small_config();
  std::mt19937_64 rng(5);
  auto p = init_encoder<double>(c, rng);
  scale_params(p, 50.0);
  for (const char* n : {"block0.attn.wq", "block0.attn.bq", "block0.attn.wk", "block0.attn.bk"}) {
    auto& v = p.get(n).value();
    std::fill(v.begin(), v.end(), 0.0);
  }
  const auto z = random_tokens(6, c.dim, rng);
  const auto out = lw_msa(z, p, c, 0);
  // Oracle: every row equals (mean_i z_i Wv + bv) Wo + bo.
  const auto proj = [&](const std::vector<double>& row, const char* w, const char* b) {
    const auto& W = p.get(w);
    const auto& B = p.get(b);
    std::vector<double> r(static_cast<std::size_t>(W.cols()));
    for (int j = 0; j < W.cols(); ++j) {
      double s = B.value()[static_cast<std::size_t>(j)];
      for (int i = 0; i < W.rows(); ++i) s += row[static_cast<std::size_t>(i)] * W.at(i, j);
      r[static_cast<std::size_t>(j)] = s;
    }
    return r;
  };
  std::vector<double> mean(static_cast<std::size_t>(c.dim), 0.0);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < c.dim; ++j) mean[static_cast<std::size_t>(j)] += z.at(i, j) / 6.0;
  const auto expect = proj(proj(mean, "block0.attn.wv", "block0.attn.bv"), "block0.attn.wo", "block0.attn.bo");
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < c.dim; ++j) CHECK(out.at(i, j) == doctest::Approx(expect[static_cast<std::size_t>(j)]).epsilon(1e-10));
}

TEST_CASE("single-token attention is the projected value") {
  const auto c = small_config();
  std::mt19937_64 rng(6);
  auto p = init_encoder<double>(c, rng);
  scale_params(p, 50.0);
  const auto z = random_tokens(1, c.dim, rng);
  const auto out = lw_msa(z, p, c, 1);
  const auto v = nn::add(nn::matmul(z, p.get("block1.attn.wv")), p.get("block1.attn.bv"));
  const auto expect = nn::add(nn::matmul(v, p.get("block1.attn.wo")), p.get("block1.attn.bo"));
  for (int j = 0; j < c.dim; ++j) CHECK(out.at(0, j) == doctest::Approx(expect.at(0, j)).epsilon(1e-12));
}

TEST_CASE("attention gradient matches central differences") {
  const auto c = small_config();
  std::mt19937_64 rng(7);
  auto p = init_encoder<double>(c, rng);
  scale_params(p, 30.0);
  std::vector<nn::Var<double>> inputs = {oracle::random_param(4, c.dim, rng)};
  for (const char* n : {"block0.attn.wq", "block0.attn.wk", "block0.attn.wv", "block0.attn.wo"}) {
    inputs.push_back(p.get(n));
  }
  const auto f = [&](const std::vector<nn::Var<double>>& in) {
    const auto out = lw_msa(in[0], p, c, 0);
    std::vector<double> a(4, 0.0), b(static_cast<std::size_t>(c.dim), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.3 + 0.1 * static_cast<double>(i);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 1.0 - 0.07 * static_cast<double>(i);
    return nn::matmul(nn::matmul(nn::Var<double>::constant(1, 4, a), out),
                      nn::Var<double>::constant(c.dim, 1, b));
  };
  CHECK(oracle::gradient_error(inputs, f) < 1e-4);
}

TEST_CASE("paper-sized window maps 100 x 968 to 100 x 32") {
  EncoderConfig c;
  std::mt19937_64 rng(8);
  const auto p = init_encoder<float>(c, rng);
  std::normal_distribution<float> g;
  std::vector<float> x(100 * 968);
  for (auto& v : x) v = g(rng);
  const auto z = forward(nn::Var<float>::constant(100, 968, std::move(x)), p, c);
  CHECK(z.rows() == 100);
  CHECK(z.cols() == 32);
}

TEST_CASE("forward is permutation equivariant") {
  const auto c = small_config();
  std::mt19937_64 rng(9);
  auto p = init_encoder<double>(c, rng);
  scale_params(p, 30.0);
  const auto x = random_tokens(7, c.input_dim, rng);
  std::vector<int> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> xp;
  for (int i : perm) xp.insert(xp.end(), x.value().begin() + i * c.input_dim, x.value().begin() + (i + 1) * c.input_dim);
  const auto a = forward(x, p, c);
  const auto b = forward(nn::Var<double>::constant(7, c.input_dim, xp), p, c);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < c.dim; ++j) CHECK(b.at(i, j) == doctest::Approx(a.at(perm[static_cast<std::size_t>(i)], j)).epsilon(1e-12));
}

TEST_CASE("zeroed residual branches leave the embedding untouched") {
  const auto c = small_config();
  std::mt19937_64 rng(10);
  auto p = init_encoder<double>(c, rng);
  scale_params(p, 30.0);
  zero_output_projections(p, c);
  const auto x = random_tokens(5, c.input_dim, rng);
  const auto e = embed(x, p, c);
  const auto zl = forward_blocks(x, p, c);
  CHECK(zl.value() == e.value());
  const auto z = forward(x, p, c);
  const auto ne = nn::l2_normalize_rows(e);
  CHECK(z.value() == ne.value());
}

TEST_CASE("output embeddings have unit norm") {
  EncoderConfig c;
  std::mt19937_64 rng(11);
  const auto p = init_encoder<float>(c, rng);
  std::normal_distribution<float> g;
  std::vector<float> x(30 * 968);
  for (auto& v : x) v = g(rng);
  const auto z = forward(nn::Var<float>::constant(30, 968, std::move(x)), p, c);
  for (int i = 0; i < 30; ++i) {
    double s = 0.0;
    for (int j = 0; j < 32; ++j) s += static_cast<double>(z.at(i, j)) * z.at(i, j);
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-6);
  }
}

TEST_CASE("parameter shapes are checked") {
  const auto c = small_config();
  std::mt19937_64 rng(12);
  auto p = init_encoder<double>(c, rng);
  CHECK_NOTHROW(check_encoder_params(c, p));
  auto other = c;
  other.blocks = 3;
  CHECK_THROWS_AS(check_encoder_params(other, p), nn::ShapeError);
}
