#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "unimixer/errors.hpp"
#include "unimixer/reference_mixers.hpp"
#include "unimixer/unimixing.hpp"

using namespace unimixer;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.data()) v = normal(rng);
  return m;
}

Vector random_vector(std::size_t n, std::mt19937_64& rng) { return random_matrix(1, n, rng).data(); }

UniMixingParams random_params(std::size_t length, std::size_t block, std::mt19937_64& rng, double tau = 1.0) {
  UniMixingParams p;
  p.length = length;
  p.block = block;
  p.global_raw = random_matrix(length / block, length / block, rng);
  for (std::size_t i = 0; i < length / block; ++i) p.local_raw.push_back(random_matrix(block, block, rng));
  p.constraint.tau = tau;
  return p;
}

UniMixingParams zero_params(std::size_t length, std::size_t block) {
  UniMixingParams p;
  p.length = length;
  p.block = block;
  p.global_raw = Matrix(length / block, length / block);
  p.local_raw.assign(length / block, Matrix(block, block));
  return p;
}

double mean_entropy(const Matrix& m) {
  double total = 0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (double v : m.row(i)) total -= v * std::log(v);
  return total / static_cast<double>(m.rows());
}

}  // namespace

TEST(ConstrainedWeights, ZeroRawIsUniform) {
  const MixingWeights w = constrained_weights(zero_params(12, 3));
  for (double v : w.global.data()) EXPECT_NEAR(v, 0.25, 1e-15);
  for (const auto& l : w.local)
    for (double v : l.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(ConstrainedWeights, DoublyStochasticAndSymmetric) {
  std::mt19937_64 rng(1);
  const MixingWeights w = constrained_weights(random_params(24, 4, rng));
  EXPECT_LE(doubly_stochastic_deviation(w.global), 1e-6);
  EXPECT_TRUE(is_symmetric(w.global, 1e-10));
  for (const auto& l : w.local) {
    EXPECT_LE(doubly_stochastic_deviation(l), 1e-6);
    EXPECT_TRUE(is_symmetric(l, 1e-10));
  }
}

TEST(ConstrainedWeights, LowTemperatureIsSharper) {
  std::mt19937_64 rng(2);
  UniMixingParams p = random_params(24, 4, rng);
  for (auto* m : {&p.global_raw}) *m = scale(*m, 0.2);
  for (auto& l : p.local_raw) l = scale(l, 0.2);
  p.constraint.max_iters = 100000;
  const MixingWeights hot = constrained_weights(p);
  p.constraint.tau = 0.05;
  const MixingWeights cold = constrained_weights(p);
  EXPECT_LT(mean_entropy(cold.global), mean_entropy(hot.global));
}

TEST(Naive, UniformWeightsOnBasisVector) {
  const UniMixingParams p = zero_params(4, 2);
  const Vector out = unimixing_naive(Vector{1, 0, 0, 0}, p);
  // Every block (i, j) of the generalized Kronecker is 1/2 * [[1/2, 1/2], [1/2, 1/2]].
  for (double v : out) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Naive, SingleBlockDegeneracy) {
  std::mt19937_64 rng(3);
  const UniMixingParams p = random_params(3, 3, rng);
  const Vector x = random_vector(3, rng);
  const MixingWeights w = constrained_weights(p);
  EXPECT_EQ(w.global, (Matrix{{1.0}}));
  EXPECT_LE(max_abs_diff(unimixing_naive(x, p), vecmat(x, w.local[0])), 1e-15);
  EXPECT_LE(max_abs_diff(unimixing_forward(x, p), vecmat(x, w.local[0])), 1e-15);
}

TEST(Naive, PermutationWeightsReproduceTokenMixer) {
  MixingWeights w;
  w.global = Matrix{{1, 0, 0, 0}, {0, 0, 1, 0}, {0, 1, 0, 0}, {0, 0, 0, 1}};
  w.local.assign(4, Matrix::identity(3));
  Vector x(12);
  std::iota(x.begin(), x.end(), 1.0);
  const Vector expect = flatten_row_major(token_mixer(reshape(x, 2, 6), PermSpec{2, 6, 2}));
  EXPECT_EQ(unimixing_naive(x, w), expect);
  EXPECT_EQ(unimixing_forward(x, w), expect);
}

TEST(Forward, MatchesNaiveAcrossShapes) {
  std::mt19937_64 rng(4);
  for (std::size_t length : {12u, 24u, 48u})
    for (std::size_t block : {2u, 3u, 4u, 6u})
      for (int trial = 0; trial < 50; ++trial) {
        const UniMixingParams p = random_params(length, block, rng);
        const Vector x = random_vector(length, rng);
        const Vector naive = unimixing_naive(x, p), fast = unimixing_forward(x, p);
        ASSERT_LE(max_abs_diff(naive, fast) / max_abs(naive), 1e-12) << length << " " << block;
      }
}

TEST(Forward, MultiplyCounts) {
  std::mt19937_64 rng(5);
  const UniMixingParams p = random_params(768, 6, rng);
  const MixingWeights w = constrained_weights(p);
  const Vector x = random_vector(768, rng);
  std::uint64_t naive = 0, fast = 0;
  {
    MultiplyCounter c;
    unimixing_naive(x, w);
    naive = c.count();
  }
  {
    MultiplyCounter c;
    unimixing_forward(x, w);
    fast = c.count();
  }
  EXPECT_EQ(naive, 589824u);
  EXPECT_EQ(fast, 102912u);
  EXPECT_EQ(naive_mixing_multiplies(768), 589824u);
  EXPECT_EQ(optimized_mixing_multiplies(768, 6), 102912u);
}

TEST(Forward, MassPreserved) {
  std::mt19937_64 rng(6);
  const UniMixingParams p = random_params(24, 3, rng);
  const Vector x = random_vector(24, rng);
  const Vector y = unimixing_forward(x, p);
  const double sx = std::accumulate(x.begin(), x.end(), 0.0), sy = std::accumulate(y.begin(), y.end(), 0.0);
  EXPECT_LE(std::abs(sx - sy), 24 * p.constraint.tol * max_abs(x) + 1e-12);
}

TEST(Forward, BatchMatchesSingle) {
  std::mt19937_64 rng(7);
  const MixingWeights w = constrained_weights(random_params(12, 3, rng));
  const Matrix xs = random_matrix(5, 12, rng);
  const Matrix ys = unimixing_forward_batch(xs, w);
  for (std::size_t n = 0; n < 5; ++n) EXPECT_EQ(Vector(ys.row(n).begin(), ys.row(n).end()), unimixing_forward(xs.row(n), w));
}

TEST(Forward, LengthMismatch) {
  std::mt19937_64 rng(8);
  const UniMixingParams p = random_params(12, 3, rng);
  EXPECT_THROW(unimixing_forward(Vector(10), p), DimensionError);
  EXPECT_THROW(unimixing_naive(Vector(10), p), DimensionError);
}

TEST(Block, ZeroInputGivesZero) { EXPECT_EQ(unimixing_block(Vector(12, 0.0), zero_params(12, 3)), Vector(12, 0.0)); }

TEST(Block, UnitRmsAndNaiveComposition) {
  std::mt19937_64 rng(9);
  const UniMixingParams p = random_params(24, 4, rng);
  const Vector x = random_vector(24, rng);
  const Vector out = unimixing_block(x, p);
  double ms = 0;
  for (double v : out) ms += v * v;
  EXPECT_NEAR(std::sqrt(ms / 24.0), 1.0, 1e-6);
  const Vector naive = unimixing_naive(x, p);
  Vector sum(24);
  for (std::size_t i = 0; i < 24; ++i) sum[i] = x[i] + naive[i];
  EXPECT_LE(max_abs_diff(out, rms_norm(sum)), 1e-12);
}

TEST(Lite, ZeroLowRankIsUniform) {
  LiteParams p;
  p.length = 8;
  p.block = 2;
  p.rank = 1;
  p.a_g = Matrix(4, 1);
  p.b_g = Matrix(1, 4);
  p.basis = {Matrix(2, 2)};
  p.omega = Matrix(4, 1, 1.0);
  const MixingWeights w = lite_materialize(p);
  for (double v : w.global.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Lite, SingleBasisCollapse) {
  std::mt19937_64 rng(10);
  LiteParams p;
  p.length = 12;
  p.block = 3;
  p.rank = 2;
  p.a_g = random_matrix(4, 2, rng);
  p.b_g = random_matrix(2, 4, rng);
  p.basis = {random_matrix(3, 3, rng)};
  p.omega = Matrix(4, 1, 1.0);
  const MixingWeights w = lite_materialize(p);
  const Matrix z = sinkhorn_knopp(p.basis[0], p.constraint).matrix;
  for (const auto& l : w.local) EXPECT_EQ(l, z);
}

TEST(Lite, OneHotOmegaSelectsBasis) {
  std::mt19937_64 rng(11);
  LiteParams p;
  p.length = 8;
  p.block = 2;
  p.rank = 1;
  p.a_g = random_matrix(4, 1, rng);
  p.b_g = random_matrix(1, 4, rng);
  p.basis = {random_matrix(2, 2, rng), random_matrix(2, 2, rng)};
  p.omega = Matrix{{1, 0}, {0, 1}, {0, 1}, {1, 0}};
  const MixingWeights w = lite_materialize(p);
  const std::size_t pick[] = {0, 1, 1, 0};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(w.local[i], sinkhorn_knopp(p.basis[pick[i]], p.constraint).matrix);
}

TEST(Lite, FullRankMatchesUniMixing) {
  std::mt19937_64 rng(12);
  const UniMixingParams u = random_params(12, 3, rng);
  LiteParams p;
  p.length = 12;
  p.block = 3;
  p.rank = 4;
  p.a_g = symmetrize(u.global_raw);
  p.b_g = Matrix::identity(4);
  for (const auto& l : u.local_raw) p.basis.push_back(symmetrize(l));
  p.omega = Matrix::identity(4);
  const Vector x = random_vector(12, rng);
  EXPECT_LE(max_abs_diff(unimixing_lite_forward(x, p), unimixing_forward(x, u)), 1e-10);
}

TEST(Lite, SingleBlockAndShapes) {
  std::mt19937_64 rng(13);
  LiteParams p;
  p.length = 3;
  p.block = 3;
  p.rank = 1;
  p.a_g = random_matrix(1, 1, rng);
  p.b_g = random_matrix(1, 1, rng);
  p.basis = {random_matrix(3, 3, rng)};
  p.omega = Matrix{{0.7}};
  const Vector x = random_vector(3, rng);
  const MixingWeights w = lite_materialize(p);
  EXPECT_EQ(w.global, (Matrix{{1.0}}));
  EXPECT_LE(max_abs_diff(unimixing_lite_forward(x, p), vecmat(x, w.local[0])), 1e-15);

  LiteParams big;
  big.length = 768;
  big.block = 6;
  big.rank = 16;
  big.a_g = random_matrix(128, 16, rng, 0.02);
  big.b_g = random_matrix(16, 128, rng, 0.02);
  big.basis = {random_matrix(6, 6, rng, 0.02), random_matrix(6, 6, rng, 0.02)};
  big.omega = random_matrix(128, 2, rng, 0.02);
  big.validate();
  const MixingWeights bw = lite_materialize(big);
  EXPECT_EQ(bw.global.rows(), 128u);
  EXPECT_EQ(bw.local.size(), 128u);
  EXPECT_EQ(bw.local[0].rows(), 6u);
}

TEST(ParameterCount, ClosedForms) {
  std::mt19937_64 rng(14);
  EXPECT_EQ(random_params(12, 3, rng).parameter_count(), 52u);
  LiteParams p;
  p.length = 12;
  p.block = 3;
  p.rank = 2;
  p.a_g = Matrix(4, 2);
  p.b_g = Matrix(2, 4);
  p.basis = {Matrix(3, 3), Matrix(3, 3)};
  p.omega = Matrix(4, 2);
  EXPECT_EQ(p.parameter_count(), 42u);
  const std::size_t stored = p.a_g.size() + p.b_g.size() + 18 + p.omega.size();
  EXPECT_EQ(stored, 42u);
}

TEST(Unified, MatchesReferences) {
  std::mt19937_64 rng(15);
  const Matrix x = random_matrix(4, 8, rng);
  EXPECT_EQ(unified_mixing(x, TokenMixerMix{4}), token_mixer(x, PermSpec{4, 8, 4}));

  const Matrix y = random_matrix(4, 8, rng);
  EXPECT_EQ(unified_mixing(x, FmMix{y}), fm_interaction(x, y));

  const Matrix wq = random_matrix(8, 8, rng), wk = random_matrix(8, 8, rng), wv = random_matrix(8, 8, rng);
  EXPECT_LE(max_abs_diff(unified_mixing(x, SelfAttentionMix{wq, wk, wv}), self_attention(x, wq, wk, wv)), 1e-12);

  HeteroAttentionMix h;
  HeteroAttentionParams ref;
  for (int i = 0; i < 4; ++i) {
    h.w_q.push_back(random_matrix(8, 8, rng));
    h.w_k.push_back(random_matrix(8, 8, rng));
    h.w_v.push_back(random_matrix(8, 8, rng));
    ref.w_q.push_back({h.w_q.back()});
    ref.w_k.push_back({h.w_k.back()});
    ref.w_v.push_back({h.w_v.back()});
  }
  ref.w_o = Matrix::identity(8);
  EXPECT_LE(max_abs_diff(unified_mixing(x, h), hetero_attention(x, ref)), 1e-12);

  const UniMixingParams u = random_params(32, 4, rng);
  EXPECT_EQ(unified_mixing(x, UniMixingMix{u}).data(), unimixing_forward(x.data(), u));
  EXPECT_THROW(unified_mixing(x, FmMix{Matrix(3, 2)}), ConfigError);
}

TEST(Unified, TokenMixerGeneralSplitIsBijection) {
  std::mt19937_64 rng(16);
  const Matrix x = random_matrix(2, 8, rng);
  const Matrix out = unified_mixing(x, TokenMixerMix{4});
  EXPECT_EQ(out, token_mixer_general(x, PermSpec{2, 8, 4}));
  auto a = x.data(), b = out.data();
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(ValueProjection, Equivalence) {
  EXPECT_TRUE(check_value_projection_equivalence(ValueProjectionCheck{}));
  std::mt19937_64 rng(17);
  const Matrix x = random_matrix(4, 3, rng);
  std::vector<Matrix> a, b;
  for (int i = 0; i < 4; ++i) {
    a.push_back(random_matrix(3, 3, rng));
    b.push_back(random_matrix(3, 3, rng));
  }
  EXPECT_FALSE(value_projection_matches(x, a, b));
  EXPECT_TRUE(value_projection_matches(Matrix(4, 3), a, b));
  EXPECT_THROW(value_projection_matches(x, {a[0]}, {b[0]}), ConfigError);
}

TEST(FmDegeneracy, Identity) {
  std::mt19937_64 rng(18);
  const Matrix x = random_matrix(3, 4, rng), y = random_matrix(3, 2, rng);
  const auto r = check_attention_fm_degeneracy(x, y);
  EXPECT_TRUE(r.identity_holds);
  EXPECT_GT(r.softmax_gap, 0.0);
  EXPECT_TRUE(static_cast<bool>(check_attention_fm_degeneracy(Matrix(3, 4), y)));
  EXPECT_TRUE(static_cast<bool>(check_attention_fm_degeneracy(x, Matrix::identity(3))));
}
