#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "travgrid/nn/ops.hpp"
#include "travgrid/nn/params.hpp"

using namespace travgrid;
using namespace travgrid::nn;

namespace {

// a^T x b with random a, b: every entry of x reaches the scalar with a
// nonzero weight.
Var<double> reduce(const Var<double>& x) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<double> a(static_cast<std::size_t>(x.rows()));
  std::vector<double> b(static_cast<std::size_t>(x.cols()));
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);
  return matmul(matmul(Var<double>::constant(1, x.rows(), std::move(a)), x),
                Var<double>::constant(x.cols(), 1, std::move(b)));
}

}  // namespace

TEST_CASE("softmax of zeros is uniform") {
  const auto s = softmax_rows(Var<float>::constant(1, 4, 0.0f));
  for (float v : s.value()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("layer norm of a constant row is zero before the affine terms") {
  const auto g = Var<double>::constant(1, 5, 1.0);
  const auto b = Var<double>::constant(1, 5, 0.0);
  const auto y = layer_norm(Var<double>::constant(2, 5, 3.7), g, b);
  for (double v : y.value()) CHECK(v == 0.0);
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
  const auto a = Var<double>::constant(2, 3);
  const auto b = Var<double>::constant(4, 2);
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("primitive gradients match central differences") {
  std::mt19937_64 rng(1);
  using V = std::vector<Var<double>>;
  const double tol = 1e-4;

  SUBCASE("matmul") {
    CHECK(oracle::gradient_error(V{oracle::random_param(3, 4, rng), oracle::random_param(4, 2, rng)},
                                 [](const V& in) { return reduce(matmul(in[0], in[1])); }) < tol);
  }
  SUBCASE("add and broadcast add") {
    CHECK(oracle::gradient_error(V{oracle::random_param(3, 4, rng), oracle::random_param(3, 4, rng)},
                                 [](const V& in) { return reduce(add(in[0], in[1])); }) < tol);
    CHECK(oracle::gradient_error(V{oracle::random_param(3, 4, rng), oracle::random_param(1, 4, rng)},
                                 [](const V& in) { return reduce(add(in[0], in[1])); }) < tol);
  }
  SUBCASE("scale and transpose") {
    CHECK(oracle::gradient_error(V{oracle::random_param(3, 4, rng)},
                                 [](const V& in) { return reduce(transpose(scale(in[0], 1.7))); }) < tol);
  }
  SUBCASE("concat and slice") {
    CHECK(oracle::gradient_error(V{oracle::random_param(3, 2, rng), oracle::random_param(3, 3, rng)},
                                 [](const V& in) {
                                   return reduce(slice_cols(concat_cols(V{in[0], in[1]}), 1, 3));
                                 }) < tol);
  }
  SUBCASE("layer norm") {
    CHECK(oracle::gradient_error(
              V{oracle::random_param(3, 6, rng), oracle::random_param(1, 6, rng), oracle::random_param(1, 6, rng)},
              [](const V& in) { return reduce(layer_norm(in[0], in[1], in[2])); }) < tol);
  }
  SUBCASE("softmax") {
    CHECK(oracle::gradient_error(V{oracle::random_param(3, 5, rng, -2, 2)},
                                 [](const V& in) { return reduce(softmax_rows(in[0])); }) < tol);
  }
  SUBCASE("gelu") {
    CHECK(oracle::gradient_error(V{oracle::random_param(3, 5, rng, -3, 3)},
                                 [](const V& in) { return reduce(gelu(in[0])); }) < tol);
  }
  SUBCASE("l2 normalize") {
    CHECK(oracle::gradient_error(V{oracle::random_param(3, 5, rng)},
                                 [](const V& in) { return reduce(l2_normalize_rows(in[0])); }) < tol);
  }
  SUBCASE("cross entropy") {
    const std::vector<double> t = {0.1, 0.2, 0.3, 0.4, 1, 0, 0, 0};
    CHECK(oracle::gradient_error(V{oracle::random_param(2, 4, rng)}, [&](const V& in) {
            return cross_entropy_rows(softmax_rows(in[0]), std::span<const double>(t));
          }) < tol);
  }
  SUBCASE("contrastive") {
    std::vector<double> queue(6 * 4);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& q : queue) q = u(rng);
    const std::vector<std::int32_t> ql = {0, 1, 0, 2, 1, 0};
    const std::vector<std::int32_t> anchors = {0, 1};
    CHECK(oracle::gradient_error(V{oracle::random_param(2, 4, rng)}, [&](const V& in) {
            return contrastive_rows(l2_normalize_rows(in[0]), std::span<const double>(queue),
                                    std::span<const std::int32_t>(ql),
                                    std::span<const std::int32_t>(anchors), 0.5);
          }) < tol);
  }
}

TEST_CASE("cross entropy closed forms") {
  const std::vector<double> uniform = {0.25, 0.25, 0.25, 0.25};
  const auto p = Var<double>::constant(1, 4, std::vector<double>(uniform));
  CHECK(cross_entropy_rows(p, std::span<const double>(uniform)).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  const std::vector<double> onehot = {1, 0, 0, 0};
  const auto q = Var<double>::constant(1, 4, std::vector<double>{0.7, 0.1, 0.1, 0.1});
  CHECK(cross_entropy_rows(q, std::span<const double>(onehot)).item() ==
        doctest::Approx(-std::log(0.7)).epsilon(1e-12));
  const auto perfect = Var<double>::constant(1, 4, std::vector<double>{1, 0, 0, 0});
  CHECK(cross_entropy_rows(perfect, std::span<const double>(onehot)).item() == 0.0);
}

TEST_CASE("SGD matches hand arithmetic") {
  ParamSet<double> p;
  p.add("theta", Var<double>::parameter(1, 1, {1.0}));
  SgdState<double> st;
  st.config.weight_decay = 0.0;

  SUBCASE("zero gradient is a fixed point") {
    p.get("theta").grad()[0] = 0.0;
    sgd_step(p, st, 0.02);
    CHECK(p.get("theta").item() == 1.0);
  }
  SUBCASE("one and two steps") {
    p.get("theta").grad()[0] = 1.0;
    sgd_step(p, st, 0.02);
    CHECK(st.velocity[0][0] == doctest::Approx(1.0));
    CHECK(p.get("theta").item() == doctest::Approx(0.98));
    sgd_step(p, st, 0.02);
    CHECK(st.velocity[0][0] == doctest::Approx(1.9));
    CHECK(p.get("theta").item() == doctest::Approx(0.942));
  }
  SUBCASE("weight decay enters the velocity") {
    st.config.weight_decay = 1e-5;
    p.get("theta").grad()[0] = 0.0;
    sgd_step(p, st, 1.0);
    CHECK(st.velocity[0][0] == doctest::Approx(1e-5));
  }
  SUBCASE("non-finite gradient aborts the step") {
    p.get("theta").grad()[0] = std::nan("");
    CHECK_THROWS_AS(sgd_step(p, st, 0.02), NonFiniteError);
    CHECK(p.get("theta").item() == 1.0);
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  std::mt19937_64 rng(4);
  ParamSet<float> p;
  p.add("a.weight", Var<float>::parameter(3, 5, truncated_normal<float>(15, 0.02, rng)));
  p.add("b", Var<float>::parameter(1, 2, {1.5f, -0.25f}));
  const auto path = std::filesystem::temp_directory_path() / "travgrid_rt.tgck";
  write_checkpoint(path, p);
  const auto back = read_checkpoint(path);
  std::filesystem::remove(path);
  REQUIRE(back.entries().size() == 2);
  CHECK(back.entries()[0].name == "a.weight");
  CHECK(back.get("a.weight").value() == p.get("a.weight").value());
  CHECK(back.get("b").rows() == 1);
  CHECK(back.get("b").value() == p.get("b").value());
}

TEST_CASE("truncated normal stays within two sigma") {
  std::mt19937_64 rng(8);
  for (float v : truncated_normal<float>(10000, 0.02, rng)) CHECK(std::abs(v) <= 0.04f);
}
