#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "vtc/oracle.hpp"
#include "vtc/tensor.hpp"

using namespace vtc;

TEST_CASE("matmul hand cases") {
  CHECK(matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{5, 6}, {7, 8}})) == Tensor::matrix({{5, 6}, {7, 8}}));
  CHECK(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}})) == Tensor::matrix({{11}}));
}

TEST_CASE("matmul equals the triple loop bit for bit") {
  SplitMix64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor a = Tensor::uniform({7, 5}, rng, -1, 1), b = Tensor::uniform({5, 3}, rng, -1, 1);
    CHECK(matmul(a, b) == oracle::matmul(a, b));
  }
}

TEST_CASE("matmul is associative within 1e-9") {
  SplitMix64 rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor a = Tensor::uniform({4, 4}, rng, -1, 1), b = Tensor::uniform({4, 4}, rng, -1, 1),
                 c = Tensor::uniform({4, 4}, rng, -1, 1);
    CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-9);
  }
}

TEST_CASE("matmul rejects mismatched inner dims") {
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3, 1}), Tensor::zeros({3, 1})), ShapeError);
}

TEST_CASE("softmax rows") {
  CHECK(softmax_rows(Tensor::matrix({{0, 0}})) == Tensor::matrix({{0.5, 0.5}}));
  const Tensor big = softmax_rows(Tensor::matrix({{1000, 1000, 1000}}));
  for (std::size_t j = 0; j < 3; ++j) CHECK(big(0, j) == Catch::Approx(1.0 / 3.0).epsilon(1e-15));

  SplitMix64 rng(13);
  const Tensor r = softmax_rows(Tensor::uniform({4, 6}, rng, -50, 50));
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(r(i, j) >= 0.0);
      s += r(i, j);
    }
    CHECK(std::fabs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax treats -inf as a zero weight") {
  const double ninf = -std::numeric_limits<double>::infinity();
  const Tensor r = softmax_rows(Tensor::matrix({{0, ninf, 0}}));
  CHECK(r == Tensor::matrix({{0.5, 0.0, 0.5}}));
}

TEST_CASE("elementwise identities") {
  SplitMix64 rng(14);
  const Tensor x = Tensor::uniform({3, 5}, rng, -2, 2);
  CHECK(transpose2d(transpose2d(x)) == x);
  CHECK(add(x, Tensor::zeros({3, 5})) == x);
  CHECK(sub(x, x) == Tensor::zeros({3, 5}));
  CHECK(hadamard(x, Tensor::full({3, 5}, 1.0)) == x);
  CHECK(scale(x, 1.0) == x);
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(10.0) == Catch::Approx(10.0));
  CHECK(std::fabs(gelu(-10.0)) < 1e-12);
  CHECK_THROWS_AS(add(x, Tensor::zeros({5, 3})), ShapeError);
}

TEST_CASE("row and column helpers") {
  const Tensor x = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(add_row(x, Tensor::matrix({{10, 20, 30}})) == Tensor::matrix({{11, 22, 33}, {14, 25, 36}}));
  CHECK(expand_rows(Tensor::matrix({{1, 2}}), 3) == Tensor::matrix({{1, 2}, {1, 2}, {1, 2}}));
  CHECK(concat_rows(x, Tensor::matrix({{7, 8, 9}})) == Tensor::matrix({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}));
  CHECK(slice_cols(x, 1, 3) == Tensor::matrix({{2, 3}, {5, 6}}));
  CHECK(x.slice_rows(1, 2) == Tensor::matrix({{4, 5, 6}}));
  Tensor y = Tensor::zeros({2, 3});
  assign_cols(y, Tensor::matrix({{1}, {2}}), 2);
  CHECK(y == Tensor::matrix({{0, 0, 1}, {0, 0, 2}}));
}

TEST_CASE("layer norm gives zero mean and unit variance") {
  SplitMix64 rng(15);
  const Tensor y = layer_norm_rows(Tensor::uniform({3, 8}, rng, -3, 3));
  for (std::size_t i = 0; i < 3; ++i) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 8; ++j) m += y(i, j);
    m /= 8;
    for (std::size_t j = 0; j < 8; ++j) v += (y(i, j) - m) * (y(i, j) - m);
    CHECK(std::fabs(m) < 1e-12);
    CHECK(v / 8 == Catch::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("shapes") {
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>(3)), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2, 3}).reshape({4, 2}), ShapeError);
  CHECK(Tensor::zeros({2, 3}).reshape({3, 2}).shape() == Shape{3, 2});
  CHECK(Tensor().empty());
}

TEST_CASE("operations are pure and repeatable") {
  SplitMix64 rng(16);
  const Tensor a = Tensor::uniform({6, 6}, rng, -1, 1);
  CHECK(softmax_rows(matmul(a, a)) == softmax_rows(matmul(a, a)));
  CHECK(gelu(a) == gelu(a));
}

TEST_CASE("SplitMix64 reference stream and forks") {
  // First outputs for seed 0 of the published SplitMix64 generator.
  SplitMix64 r(0);
  CHECK(r.next() == 0xe220a8397b1dcdafULL);
  CHECK(r.next() == 0x6e789e6aa1b965f4ULL);
  CHECK(r.next() == 0x06c45d188009454fULL);

  const SplitMix64 root(42);
  SplitMix64 a = root.fork("grid"), b = root.fork("grid"), c = root.fork("cls");
  CHECK(a.next() == b.next());
  CHECK(a.next() != c.next());
  SplitMix64 u(7);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform(-1, 1);
    CHECK((x >= -1.0 && x < 1.0));
  }
}
