#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "unimixer/autodiff.hpp"
#include "unimixer/errors.hpp"
#include "unimixer/metrics.hpp"
#include "unimixer/sinkhorn.hpp"

using namespace unimixer;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> normal(0.0, s);
  Matrix m(r, c);
  for (double& v : m.data()) v = normal(rng);
  return m;
}

// Contracts an op output with a fixed random weight so every output entry
// contributes to a scalar loss.
ad::Var contract(const ad::Var& out, const Matrix& weight) {
  const ad::Var prod = ad::hadamard(out, ad::constant(weight));
  const ad::Var left = ad::constant(Matrix(1, prod->value.rows(), 1.0));
  const ad::Var right = ad::constant(Matrix(prod->value.cols(), 1, 1.0));
  return ad::matmul(ad::matmul(left, prod), right);
}

using Op = std::function<ad::Var(const std::vector<ad::Var>&)>;

// Max relative error between tape and central-difference gradients over
// every entry of every input. Entries below 1e-4 are compared absolutely.
double check_op(const Op& op, std::vector<Matrix> inputs, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  Matrix weight;
  auto loss_of = [&](const std::vector<Matrix>& values, std::vector<ad::Var>* leaves) {
    std::vector<ad::Var> vars;
    for (const auto& v : values) vars.push_back(ad::parameter(v));
    const ad::Var out = op(vars);
    if (weight.size() == 0) weight = random_matrix(out->value.rows(), out->value.cols(), rng);
    const ad::Var loss = contract(out, weight);
    if (leaves) {
      ad::backward(loss);
      *leaves = vars;
    }
    return loss->value(0, 0);
  };
  std::vector<ad::Var> leaves;
  loss_of(inputs, &leaves);
  const double eps = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t e = 0; e < inputs[k].size(); ++e) {
      const double orig = inputs[k].data()[e];
      inputs[k].data()[e] = orig + eps;
      const double up = loss_of(inputs, nullptr);
      inputs[k].data()[e] = orig - eps;
      const double down = loss_of(inputs, nullptr);
      inputs[k].data()[e] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = leaves[k]->grad.size() ? leaves[k]->grad.data()[e] : 0.0;
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

constexpr double kTol = 1e-5;

}  // namespace

TEST(Autodiff, ElementaryOps) {
  std::mt19937_64 rng(1);
  const Matrix a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng), c = random_matrix(3, 4, rng);
  EXPECT_LE(check_op([](auto& v) { return ad::matmul(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::transpose(v[0]); }, {a}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::add(v[0], v[1]); }, {a, c}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::hadamard(v[0], v[1]); }, {a, c}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::scale(v[0], -2.5); }, {a}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::swish(v[0]); }, {a}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::add_row(v[0], v[1]); }, {a, random_matrix(1, 4, rng)}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::reshape(v[0], 2, 6); }, {a}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::slice_cols(v[0], 1, 2); }, {a}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::concat_cols({v[0], v[1]}); }, {a, c}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::rms_norm_rows(v[0], 1e-6); }, {a}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::symmetrize(v[0]); }, {random_matrix(4, 4, rng)}), kTol);
}

TEST(Autodiff, SinkhornAcrossTemperatures) {
  std::mt19937_64 rng(2);
  for (double tau : {1.0, 0.3, 0.05}) {
    ConstraintConfig cfg;
    cfg.tau = tau;
    cfg.max_iters = 20;
    cfg.mode = SinkhornMode::kFixedDepth;
    const Matrix w = random_matrix(4, 4, rng, 0.05);
    EXPECT_LE(check_op([&](auto& v) { return ad::sinkhorn(v[0], cfg); }, {w}), 1e-5) << tau;
    EXPECT_LE(check_op([&](auto& v) { return ad::sinkhorn(ad::symmetrize(v[0]), cfg); }, {w}), 1e-5) << tau;
    const ad::Var out = ad::sinkhorn(ad::constant(w), cfg);
    EXPECT_LE(max_abs_diff(out->value, sinkhorn_knopp(w, cfg).matrix), 1e-14);
  }
}

TEST(Autodiff, StructuredOps) {
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(2, 6, rng);
  EXPECT_LE(check_op([](auto& v) { return ad::block_linear(v[0], {v[1], v[2], v[3]}); },
                     {x, random_matrix(2, 3, rng), random_matrix(2, 3, rng), random_matrix(2, 3, rng)}),
            kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::block_global(v[0], v[1], 2); }, {random_matrix(3, 3, rng), x}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::basis_combine(v[0], 1, {v[1], v[2]}); },
                     {random_matrix(3, 2, rng), random_matrix(2, 2, rng), random_matrix(2, 2, rng)}),
            kTol);
  const std::vector<std::size_t> idx{2, 0, 2};
  EXPECT_LE(check_op([&](auto& v) { return ad::gather_rows(v[0], idx); }, {random_matrix(4, 3, rng)}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::token_attention(v[0], v[1], v[2], 3); },
                     {x, random_matrix(2, 6, rng), random_matrix(2, 6, rng)}),
            kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::fm_core(v[0], v[1], 3); }, {x, random_matrix(3, 2, rng)}), kTol);
  EXPECT_LE(check_op([](auto& v) { return ad::permute_cols(v[0], {2, 0, 1, 5, 3, 4}); }, {x}), kTol);
}

TEST(Autodiff, BceMatchesMetricAndGradient) {
  std::mt19937_64 rng(4);
  const Matrix z = random_matrix(5, 1, rng, 3.0);
  const std::vector<double> y{1, 0, 0, 1, 1};
  const ad::Var leaf = ad::parameter(z);
  const ad::Var loss = ad::bce_with_logits(leaf, y);
  EXPECT_NEAR(loss->value(0, 0), bce_loss(z.data(), y), 1e-15);
  ad::backward(loss);
  for (std::size_t n = 0; n < 5; ++n) EXPECT_NEAR(leaf->grad(n, 0), (sigmoid(z(n, 0)) - y[n]) / 5.0, 1e-15);
}

TEST(Autodiff, SharedInputAccumulates) {
  const ad::Var a = ad::parameter(Matrix{{3.0}});
  ad::backward(ad::hadamard(a, a));
  EXPECT_DOUBLE_EQ(a->grad(0, 0), 6.0);
}

TEST(Autodiff, ConstantsCollectNothing) {
  const ad::Var a = ad::constant(Matrix{{2.0}});
  const ad::Var b = ad::parameter(Matrix{{5.0}});
  ad::backward(ad::matmul(a, b));
  EXPECT_EQ(a->grad.size(), 0u);
  EXPECT_DOUBLE_EQ(b->grad(0, 0), 2.0);
}

TEST(Autodiff, ShapeErrors) {
  EXPECT_THROW(ad::matmul(ad::constant(Matrix(2, 3)), ad::constant(Matrix(2, 3))), DimensionError);
  EXPECT_THROW(ad::add(ad::constant(Matrix(2, 3)), ad::constant(Matrix(3, 2))), DimensionError);
  EXPECT_THROW(ad::backward(ad::constant(Matrix(2, 2))), DimensionError);
}

TEST(Autodiff, CountersMatchFormulas) {
  std::mt19937_64 rng(5);
  const auto count = [](const std::function<void()>& f) {
    MultiplyCounter c;
    f();
    return c.count();
  };
  const ad::Var a = ad::constant(random_matrix(3, 4, rng)), b = ad::constant(random_matrix(4, 5, rng));
  EXPECT_EQ(count([&] { ad::matmul(a, b); }), 60u);
  EXPECT_EQ(count([&] { ad::hadamard(a, a); }), 12u);
  EXPECT_EQ(count([&] { ad::rms_norm_rows(a, 1e-6); }), 24u);
  const ad::Var x = ad::constant(random_matrix(2, 6, rng));
  EXPECT_EQ(count([&] { ad::block_linear(x, {ad::constant(Matrix(2, 4)), ad::constant(Matrix(2, 4)), ad::constant(Matrix(2, 4))}); }),
            2u * 3 * 2 * 4);
  EXPECT_EQ(count([&] { ad::block_global(ad::constant(Matrix(3, 3)), x, 2); }), 2u * 9 * 2);
  EXPECT_EQ(count([&] { ad::token_attention(x, x, x, 3); }), 2u * (2 * 9 * 2 + 9));
  EXPECT_EQ(count([&] { ad::fm_core(x, ad::constant(Matrix(3, 1)), 3); }), 2u * (9 * 2 + 9 * 1));
}
