#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "unimixer/errors.hpp"
#include "unimixer/reference_mixers.hpp"

using namespace unimixer;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix m(r, c);
  for (double& v : m.data()) v = normal(rng);
  return m;
}

Matrix iota_matrix(std::size_t r, std::size_t c) {
  Matrix m(r, c);
  std::iota(m.data().begin(), m.data().end(), 1.0);
  return m;
}

// softmax(q k^T / sqrt(d)) v, written out entry by entry.
Matrix attention_oracle(const Matrix& q, const Matrix& k, const Matrix& v) {
  const std::size_t t = q.rows();
  Matrix out(t, v.cols());
  for (std::size_t i = 0; i < t; ++i) {
    std::vector<double> logits(t);
    for (std::size_t j = 0; j < t; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
      logits[j] = s / std::sqrt(static_cast<double>(v.cols()));
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t j = 0; j < t; ++j)
      for (std::size_t c = 0; c < v.cols(); ++c) out(i, c) += logits[j] / z * v(j, c);
  }
  return out;
}

}  // namespace

TEST(TokenMixer, WorkedFixture) {
  const Matrix s = token_mixer(iota_matrix(2, 6), PermSpec{2, 6, 2});
  EXPECT_EQ(s, (Matrix{{1, 2, 3, 7, 8, 9}, {4, 5, 6, 10, 11, 12}}));
}

TEST(TokenMixer, SingleTokenIsIdentity) {
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(1, 5, rng);
  EXPECT_EQ(token_mixer(x, PermSpec{1, 5, 1}), x);
}

TEST(TokenMixer, InvolutionWhenTEqualsH) {
  std::mt19937_64 rng(2);
  const PermSpec spec{4, 8, 4};
  const Matrix x = random_matrix(4, 8, rng);
  EXPECT_EQ(token_mixer(token_mixer(x, spec), spec), x);
  const Matrix p = build_perm_matrix(spec);
  EXPECT_EQ(matmul(p, p), Matrix::identity(32));
}

TEST(TokenMixer, RejectsBadSpecs) {
  EXPECT_THROW(token_mixer(Matrix(2, 8), PermSpec{2, 8, 4}), ConstraintError);
  EXPECT_THROW(token_mixer(Matrix(3, 8), PermSpec{3, 8, 3}), DimensionError);
}

TEST(TokenMixer, PreservesMultiset) {
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(4, 12, rng);
  auto in = x.data(), out = token_mixer(x, PermSpec{4, 12, 4}).data();
  std::sort(in.begin(), in.end());
  std::sort(out.begin(), out.end());
  EXPECT_EQ(in, out);
}

TEST(PermMatrix, WorkedMatrix) {
  const Matrix g{{1, 0, 0, 0}, {0, 0, 1, 0}, {0, 1, 0, 0}, {0, 0, 0, 1}};
  EXPECT_EQ(build_perm_matrix(PermSpec{2, 6, 2}), kron(g, Matrix::identity(3)));
  EXPECT_EQ(build_perm_matrix(PermSpec{1, 4, 1}), Matrix::identity(4));
}

TEST(PermMatrix, MatchesTokenMixerOnRandomInputs) {
  std::mt19937_64 rng(4);
  const PermSpec spec{4, 8, 4};
  const Matrix p = build_perm_matrix(spec);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix x = random_matrix(4, 8, rng);
    ASSERT_EQ(matvec(p, flatten_row_major(x)), flatten_row_major(token_mixer(x, spec)));
  }
}

TEST(PermMatrix, GeneralSplitMatches) {
  std::mt19937_64 rng(5);
  const PermSpec spec{2, 8, 4};
  const Matrix x = random_matrix(2, 8, rng);
  EXPECT_EQ(matvec(build_perm_matrix(spec), flatten_row_major(x)), flatten_row_major(token_mixer_general(x, spec)));
  std::size_t nonzeros = 0;
  const Matrix p = build_perm_matrix(spec);
  for (double v : p.data()) {
    if (v != 0.0) {
      EXPECT_EQ(v, 1.0);
      ++nonzeros;
    }
  }
  EXPECT_EQ(nonzeros, 16u);
}

TEST(PermProperties, WorkedSpec) {
  const PropertyReport r = verify_perm_properties(PermSpec{2, 6, 2});
  EXPECT_TRUE(r.compressible);
  EXPECT_TRUE(r.doubly_stochastic);
  EXPECT_TRUE(r.one_nonzero_per_row_and_col);
  EXPECT_TRUE(r.symmetric);
  EXPECT_EQ(r.global, (Matrix{{1, 0, 0, 0}, {0, 0, 1, 0}, {0, 1, 0, 0}, {0, 0, 0, 1}}));
  EXPECT_EQ(r.local_side, 3u);
}

TEST(PermProperties, IdentitySpec) {
  const PropertyReport r = verify_perm_properties(PermSpec{1, 3, 1});
  EXPECT_TRUE(r.compressible && r.doubly_stochastic && r.one_nonzero_per_row_and_col && r.symmetric);
}

TEST(PermProperties, AsymmetricWhenTDiffersFromH) {
  const PropertyReport r = verify_perm_properties(PermSpec{2, 8, 4});
  EXPECT_TRUE(r.compressible);
  EXPECT_TRUE(r.doubly_stochastic);
  EXPECT_TRUE(r.one_nonzero_per_row_and_col);
  EXPECT_FALSE(r.symmetric);
}

TEST(SelfAttention, ZeroLogitsAverageValues) {
  std::mt19937_64 rng(6);
  const Matrix x = random_matrix(3, 4, rng), wv = random_matrix(4, 4, rng);
  const Matrix out = self_attention(x, Matrix(4, 4), Matrix(4, 4), wv);
  const Matrix v = matmul(x, wv);
  for (std::size_t c = 0; c < 4; ++c) {
    const double mean = (v(0, c) + v(1, c) + v(2, c)) / 3.0;
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out(i, c), mean, 1e-12);
  }
}

TEST(SelfAttention, SingleTokenAndOracle) {
  std::mt19937_64 rng(7);
  const Matrix wq = random_matrix(4, 4, rng), wk = random_matrix(4, 4, rng), wv = random_matrix(4, 4, rng);
  const Matrix x1 = random_matrix(1, 4, rng);
  EXPECT_LE(max_abs_diff(self_attention(x1, wq, wk, wv), matmul(x1, wv)), 1e-15);
  const Matrix x = random_matrix(3, 4, rng);
  EXPECT_LE(max_abs_diff(self_attention(x, wq, wk, wv), attention_oracle(matmul(x, wq), matmul(x, wk), matmul(x, wv))),
            1e-12);
}

TEST(HeteroAttention, MatchesTranscription) {
  std::mt19937_64 rng(8);
  const std::size_t t = 3, dim = 4, d = 2, heads = 2;
  HeteroAttentionParams p;
  for (std::size_t i = 0; i < t; ++i) {
    p.w_q.emplace_back();
    p.w_k.emplace_back();
    p.w_v.emplace_back();
    for (std::size_t h = 0; h < heads; ++h) {
      p.w_q[i].push_back(random_matrix(dim, d, rng));
      p.w_k[i].push_back(random_matrix(dim, d, rng));
      p.w_v[i].push_back(random_matrix(dim, d, rng));
    }
  }
  p.w_o = random_matrix(heads * d, dim, rng);
  const Matrix x = random_matrix(t, dim, rng);
  const Matrix out = hetero_attention(x, p);

  Matrix concat(t, heads * d);
  for (std::size_t h = 0; h < heads; ++h) {
    Matrix q(t, d), k(t, d), v(t, d);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t c = 0; c < d; ++c)
        for (std::size_t r = 0; r < dim; ++r) {
          q(i, c) += x(i, r) * p.w_q[i][h](r, c);
          k(i, c) += x(i, r) * p.w_k[i][h](r, c);
          v(i, c) += x(i, r) * p.w_v[i][h](r, c);
        }
    const Matrix o = attention_oracle(q, k, v);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t c = 0; c < d; ++c) concat(i, h * d + c) = o(i, c);
  }
  EXPECT_LE(max_abs_diff(out, matmul(concat, p.w_o)), 1e-12);
}

TEST(HeteroAttention, ZeroLogitAndSingleToken) {
  std::mt19937_64 rng(9);
  const Matrix wv = random_matrix(4, 4, rng), wo = random_matrix(4, 4, rng);
  HeteroAttentionParams p;
  for (int i = 0; i < 2; ++i) {
    p.w_q.push_back({Matrix(4, 4)});
    p.w_k.push_back({Matrix(4, 4)});
    p.w_v.push_back({wv});
  }
  p.w_o = wo;
  const Matrix x = random_matrix(2, 4, rng);
  const Matrix v = matmul(x, wv);
  Matrix mean(1, 4);
  for (std::size_t c = 0; c < 4; ++c) mean(0, c) = 0.5 * (v(0, c) + v(1, c));
  const Matrix expect = matmul(mean, wo);
  const Matrix out = hetero_attention(x, p);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out(i, c), expect(0, c), 1e-12);

  HeteroAttentionParams one;
  one.w_q = {{random_matrix(4, 4, rng)}};
  one.w_k = {{random_matrix(4, 4, rng)}};
  one.w_v = {{wv}};
  one.w_o = wo;
  const Matrix x1 = random_matrix(1, 4, rng);
  EXPECT_LE(max_abs_diff(hetero_attention(x1, one), matmul(matmul(x1, wv), wo)), 1e-12);
}

namespace {

WukongParams wukong_params(std::mt19937_64& rng, std::size_t t, std::size_t dim, std::size_t r) {
  WukongParams p;
  p.y = random_matrix(t, r, rng);
  p.w_lcb = random_matrix(2, t, rng);
  p.fmb_tokens = 2;
  p.mlp.w1 = random_matrix(t * r, 5, rng);
  p.mlp.b1 = random_matrix(1, 5, rng).data();
  p.mlp.w2 = random_matrix(5, 2 * dim, rng);
  p.mlp.b2 = random_matrix(1, 2 * dim, rng).data();
  return p;
}

}  // namespace

TEST(Wukong, ZeroInputUsesBiasPath) {
  std::mt19937_64 rng(10);
  const WukongParams p = wukong_params(rng, 3, 4, 2);
  const Matrix out = wukong_layer(Matrix(3, 4), p);
  ASSERT_EQ(out.rows(), 4u);
  Vector hidden(5);
  for (std::size_t j = 0; j < 5; ++j) hidden[j] = swish(p.mlp.b1[j]);
  const Vector mlp = vecmat(hidden, p.mlp.w2);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.data()[j], mlp[j] + p.mlp.b2[j], 1e-12);
  for (std::size_t j = 8; j < 16; ++j) EXPECT_EQ(out.data()[j], 0.0);
}

TEST(Wukong, FmHandExpansion) {
  const Matrix x{{1, 2}, {3, 4}};
  // Y = I: FM(X) = X X^T.
  EXPECT_EQ(fm_interaction(x, Matrix::identity(2)), (Matrix{{5, 11}, {11, 25}}));
}

TEST(Wukong, MatchesTranscription) {
  std::mt19937_64 rng(11);
  const std::size_t t = 3, dim = 4, r = 2;
  const WukongParams p = wukong_params(rng, t, dim, r);
  const Matrix x = random_matrix(t, dim, rng);
  Matrix fm(t, r);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < r; ++c)
      for (std::size_t j = 0; j < t; ++j) {
        double dot = 0;
        for (std::size_t k = 0; k < dim; ++k) dot += x(i, k) * x(j, k);
        fm(i, c) += dot * p.y(j, c);
      }
  double ms = 0;
  for (double v : fm.data()) ms += v * v;
  const double inv = 1.0 / std::sqrt(ms / static_cast<double>(fm.size()) + p.norm_eps);
  Vector hidden(5);
  for (std::size_t h = 0; h < 5; ++h) {
    double acc = p.mlp.b1[h];
    for (std::size_t k = 0; k < fm.size(); ++k) acc += fm.data()[k] * inv * p.mlp.w1(k, h);
    hidden[h] = acc / (1.0 + std::exp(-acc));
  }
  const Matrix out = wukong_layer(x, p);
  for (std::size_t o = 0; o < 2 * dim; ++o) {
    double acc = p.mlp.b2[o];
    for (std::size_t h = 0; h < 5; ++h) acc += hidden[h] * p.mlp.w2(h, o);
    EXPECT_NEAR(out.data()[o], acc, 1e-12);
  }
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < dim; ++k) {
      double acc = 0;
      for (std::size_t j = 0; j < t; ++j) acc += p.w_lcb(i, j) * x(j, k);
      EXPECT_NEAR(out(2 + i, k), acc, 1e-12);
    }
}
