#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "unimixer/errors.hpp"
#include "unimixer/tensor.hpp"

using namespace unimixer;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix m(r, c);
  for (double& v : m.data()) v = normal(rng);
  return m;
}

Vector iota_vector(std::size_t n) {
  Vector v(n);
  std::iota(v.begin(), v.end(), 1.0);
  return v;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrix) {
  const Matrix a = random_matrix(2, 3, 1);
  EXPECT_EQ(matmul(Matrix::identity(2), a), a);
}

TEST(Matmul, HandExample) { EXPECT_EQ(matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{5}, {6}}), (Matrix{{17}, {39}})); }

TEST(Matmul, MatchesTripleLoop) {
  const Matrix a = random_matrix(4, 4, 2), b = random_matrix(4, 4, 3);
  const Matrix c = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), acc, 1e-14 * std::max(1.0, std::abs(acc)));
    }
}

TEST(Matmul, ShapeMismatchNamesShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
  }
}

TEST(MultiplyCounter, CountsAndNests) {
  MultiplyCounter outer;
  {
    MultiplyCounter inner;
    matmul(Matrix(2, 3), Matrix(3, 4));
    EXPECT_EQ(inner.count(), 24u);
  }
  matvec(Matrix(3, 5), Vector(5));
  vecmat(Vector(3), Matrix(3, 5));
  EXPECT_EQ(outer.count(), 24u + 15u + 15u);
}

TEST(Flatten, WorkedLayout) {
  const Vector x = iota_vector(12);
  const Matrix m = reshape(x, 2, 6);
  EXPECT_EQ(m(0, 5), 6.0);
  EXPECT_EQ(m(1, 0), 7.0);
  EXPECT_EQ(flatten_row_major(m), x);
  EXPECT_EQ(flatten_row_major(Matrix{{4.5}}), Vector{4.5});
}

TEST(Flatten, RoundTrip) {
  const Matrix m = random_matrix(3, 5, 4);
  EXPECT_EQ(reshape(flatten_row_major(m), 3, 5), m);
  const Vector v = random_matrix(1, 7, 5).data();
  EXPECT_EQ(reshape(v, 1, 7).data(), v);
  EXPECT_THROW(reshape(v, 2, 4), DimensionError);
}

TEST(SplitEven, WorkedBlocks) {
  const auto parts = split_even(iota_vector(12), 4);
  ASSERT_EQ(parts.size(), 4u);
  EXPECT_EQ(parts[0], (Vector{1, 2, 3}));
  EXPECT_EQ(parts[3], (Vector{10, 11, 12}));
  EXPECT_EQ(split_even(iota_vector(5), 1).front(), iota_vector(5));
  EXPECT_THROW(split_even(iota_vector(5), 2), DimensionError);
}

TEST(SplitEven, ConcatRoundTrip) {
  const Vector v = random_matrix(1, 12, 6).data();
  for (std::size_t k : {2u, 3u, 6u}) EXPECT_EQ(concat(split_even(v, k)), v);
}

TEST(Kron, WorkedPermutation) {
  const Matrix g{{1, 0, 0, 0}, {0, 0, 1, 0}, {0, 1, 0, 0}, {0, 0, 0, 1}};
  const Matrix p = kron(g, Matrix::identity(3));
  const Vector y = matvec(p, iota_vector(12));
  EXPECT_EQ(y, (Vector{1, 2, 3, 7, 8, 9, 4, 5, 6, 10, 11, 12}));
}

TEST(Kron, IdentityAndExpansion) {
  EXPECT_EQ(kron(Matrix::identity(2), Matrix::identity(3)), Matrix::identity(6));
  const Matrix a = random_matrix(2, 2, 7), b = random_matrix(3, 3, 8);
  const Matrix k = kron(a, b);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(k(i, j), a(i / 3, j / 3) * b(i % 3, j % 3));
}

TEST(Kron, BlockwiseVecIdentity) {
  // (A kron B) flatten(X) == flatten(A X B^T) for row-major flatten.
  const Matrix a = random_matrix(2, 3, 9), b = random_matrix(4, 5, 10), x = random_matrix(3, 5, 11);
  const Vector lhs = matvec(kron(a, b), flatten_row_major(x));
  const Vector rhs = flatten_row_major(matmul(matmul(a, x), transpose(b)));
  EXPECT_LE(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(GeneralizedKron, ReducesToKron) {
  const Matrix g = random_matrix(3, 3, 12), z = random_matrix(2, 2, 13);
  EXPECT_EQ(generalized_kron(g, {z, z, z}), kron(g, z));
}

TEST(GeneralizedKron, ColumnIndexedBlocks) {
  const Matrix g{{1, 2}, {3, 4}};
  const Matrix w1{{1, 0}, {0, 1}}, w2{{0, 1}, {1, 0}};
  const Matrix out = generalized_kron(g, {w1, w2});
  EXPECT_EQ(out, (Matrix{{1, 0, 0, 2}, {0, 1, 2, 0}, {3, 0, 0, 4}, {0, 3, 4, 0}}));
}

TEST(GeneralizedKron, MatchesExpansion) {
  const Matrix g = random_matrix(3, 3, 14);
  const std::vector<Matrix> blocks{random_matrix(2, 2, 15), random_matrix(2, 2, 16), random_matrix(2, 2, 17)};
  const Matrix out = generalized_kron(g, blocks);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(out(i, j), g(i / 2, j / 2) * blocks[j / 2](i % 2, j % 2));
  EXPECT_THROW(generalized_kron(g, {blocks[0], blocks[1], Matrix(3, 3)}), DimensionError);
}

TEST(Softmax, ConstantRowIsUniform) {
  const Matrix s = softmax_rows(Matrix(2, 4, 3.0));
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, RowsSumToOne) {
  const Matrix s = softmax_rows(scale(random_matrix(5, 7, 18), 30.0));
  for (std::size_t i = 0; i < 5; ++i) {
    double sum = 0;
    for (double v : s.row(i)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(RmsNorm, UnitRmsIsFixed) {
  const Vector v{1, -1, 1, -1};
  const Vector out = rms_norm(v);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out[i], v[i], 1e-6);
  EXPECT_THROW(rms_norm(Vector{}), DimensionError);
}

TEST(Swish, ScalarOracle) {
  for (double x : {-2.0, 0.0, 3.0}) EXPECT_NEAR(swish(x), x / (1.0 + std::exp(-x)), 1e-15);
  EXPECT_EQ(swish(0.0), 0.0);
  EXPECT_NEAR(swish(40.0), 40.0, 1e-12);
}

TEST(Kernels, Deterministic) {
  const Matrix a = random_matrix(6, 6, 19), b = random_matrix(6, 6, 20);
  EXPECT_EQ(matmul(a, b), matmul(a, b));
  EXPECT_EQ(softmax_rows(a), softmax_rows(a));
}
