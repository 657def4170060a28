#include "unimixer/verify.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "unimixer/reference_mixers.hpp"
#include "unimixer/sinkhorn.hpp"
#include "unimixer/training.hpp"
#include "unimixer/unimixing.hpp"

namespace unimixer {
namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.data()) v = normal(rng);
  return m;
}

// Runs body, timing it and turning exceptions into a failed result.
CheckResult timed(const std::string& name, const std::function<bool(std::ostringstream&)>& body) {
  CheckResult r;
  r.name = name;
  std::ostringstream detail;
  const auto start = std::chrono::steady_clock::now();
  try {
    r.passed = body(detail);
  } catch (const std::exception& e) {
    r.passed = false;
    detail << "exception: " << e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.detail = detail.str();
  return r;
}

double row_entropy(const Matrix& m) {
  double total = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (double v : m.row(i))
      if (v > 0.0) total -= v * std::log(v);
  return total / static_cast<double>(m.rows());
}

ModelConfig gradient_model(std::size_t blocks) {
  ModelConfig cfg;
  for (int i = 0; i < 4; ++i) cfg.fields.push_back(FieldSpec{"c" + std::to_string(i), 10, 0, 8});
  cfg.fields.push_back(FieldSpec{"d", 0, 16, 16});
  cfg.chunk = 8;
  cfg.token_dim = 8;
  cfg.block = 4;
  cfg.num_blocks = blocks;
  cfg.rank = 4;
  cfg.basis = 2;
  cfg.mixer = MixerKind::kUniMixingLite;
  return cfg;
}

FeatureBatch gradient_batch(std::size_t n, std::uint64_t seed, Vector* labels) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  FeatureBatch b;
  b.size = n;
  b.categorical.assign(4, std::vector<std::size_t>(n));
  b.dense = Matrix(n, 16);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& col : b.categorical) col[i] = rng() % 10;
    for (std::size_t j = 0; j < 16; ++j) b.dense(i, j) = normal(rng);
  }
  if (labels) {
    labels->assign(n, 0.0);
    for (std::size_t i = 0; i < n; i += 2) (*labels)[i] = 1.0;
  }
  return b;
}

}  // namespace

CheckResult check_tokenmixer_fixture() {
  return timed("tokenmixer-fixture", [](std::ostringstream& out) {
    Matrix x(2, 6);
    for (std::size_t i = 0; i < 12; ++i) x.data()[i] = static_cast<double>(i + 1);
    const PermSpec spec{2, 6, 2};
    const Matrix s = token_mixer(x, spec);
    const Matrix expect_s{{1, 2, 3, 7, 8, 9}, {4, 5, 6, 10, 11, 12}};
    const Matrix g{{1, 0, 0, 0}, {0, 0, 1, 0}, {0, 1, 0, 0}, {0, 0, 0, 1}};
    const Matrix p = build_perm_matrix(spec);
    const PropertyReport props = verify_perm_properties(spec);
    const bool output_ok = s == expect_s;
    const bool matrix_ok = p == kron(g, Matrix::identity(3)) && matvec(p, flatten_row_major(x)) == flatten_row_major(s);
    const bool decomposition_ok = props.compressible && props.global == g && props.local_side == 3;
    out << "output " << (output_ok ? "ok" : "MISMATCH") << ", W_perm " << (matrix_ok ? "ok" : "MISMATCH")
        << ", G (x) I_3 " << (decomposition_ok ? "ok" : "MISMATCH");
    return output_ok && matrix_ok && decomposition_ok;
  });
}

CheckResult check_tokenmixer_random(std::size_t trials, std::uint64_t seed) {
  return timed("tokenmixer-random", [=](std::ostringstream& out) {
    std::mt19937_64 rng(seed);
    const std::size_t sizes[] = {2, 4, 8};
    std::size_t failures = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t heads = sizes[t % 3];
      const std::size_t dim = heads * (1 + rng() % 3);
      const PermSpec spec{heads, dim, heads};
      const Matrix x = random_matrix(heads, dim, rng);
      const Vector expect = flatten_row_major(token_mixer(x, spec));
      const Vector flat = flatten_row_major(x);
      const PropertyReport props = verify_perm_properties(spec);
      MixingWeights w;
      w.global = props.global;
      w.local.assign(props.global.rows(), Matrix::identity(props.local_side));
      if (matvec(build_perm_matrix(spec), flat) != expect || unimixing_naive(flat, w) != expect ||
          unimixing_forward(flat, w) != expect) {
        ++failures;
      }
    }
    out << trials - failures << "/" << trials << " trials bit-exact";
    return failures == 0;
  });
}

CheckResult check_perm_properties() {
  return timed("perm-properties", [](std::ostringstream& out) {
    // T or H equal to 1 makes the permutation the identity, so those are left out
    // of the symmetric-iff-T==H grid.
    std::size_t tested = 0, failures = 0;
    for (std::size_t t : {2u, 3u, 4u, 8u})
      for (std::size_t h : {2u, 3u, 4u, 8u})
        for (std::size_t mult : {1u, 2u, 3u}) {
          const PermSpec spec{t, h * mult, h};
          const PropertyReport r = verify_perm_properties(spec);
          const Matrix p = build_perm_matrix(spec);
          const bool symmetric = p == transpose(p);
          ++tested;
          if (!r.compressible || !r.doubly_stochastic || !r.one_nonzero_per_row_and_col || r.symmetric != symmetric ||
              symmetric != (t == h)) {
            ++failures;
          }
        }
    out << tested - failures << "/" << tested << " specs satisfy every property";
    return failures == 0;
  });
}

CheckResult check_pipeline_equivalence(std::size_t trials, std::uint64_t seed, double tol) {
  return timed("pipeline-equivalence", [=](std::ostringstream& out) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    std::size_t runs = 0;
    for (std::size_t length : {12u, 24u, 48u})
      for (std::size_t block : {2u, 3u, 4u, 6u})
        for (std::size_t t = 0; t < trials; ++t) {
          UniMixingParams p;
          p.length = length;
          p.block = block;
          p.global_raw = random_matrix(length / block, length / block, rng);
          for (std::size_t i = 0; i < length / block; ++i) p.local_raw.push_back(random_matrix(block, block, rng));
          const MixingWeights w = constrained_weights(p);
          const Vector x = random_matrix(1, length, rng).data();
          const Vector naive = unimixing_naive(x, w);
          worst = std::max(worst, max_abs_diff(naive, unimixing_forward(x, w)) / max_abs(naive));
          ++runs;
        }
    out << runs << " runs, max relative sup-norm error " << worst;
    return worst <= tol;
  });
}

CheckResult check_complexity() {
  return timed("complexity", [](std::ostringstream& out) {
    std::mt19937_64 rng(3);
    bool ok = true;
    std::uint64_t naive_768 = 0, fast_768 = 0;
    const std::pair<std::size_t, std::size_t> shapes[] = {{12, 2}, {12, 3}, {24, 4}, {48, 6}, {96, 8}, {768, 6}};
    for (const auto& [length, block] : shapes) {
      MixingWeights w;
      w.global = Matrix(length / block, length / block, 1.0 / static_cast<double>(length / block));
      w.local.assign(length / block, Matrix(block, block, 1.0 / static_cast<double>(block)));
      const Vector x = random_matrix(1, length, rng).data();
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
      ok = ok && naive == naive_mixing_multiplies(length) && naive == length * length &&
           fast == optimized_mixing_multiplies(length, block) && fast == length * length / block + length * block;
      if (length == 768) {
        naive_768 = naive;
        fast_768 = fast;
      }
    }
    out << "L=768 B=6: naive " << naive_768 << ", optimized " << fast_768;
    return ok && naive_768 == 589824 && fast_768 == 102912;
  });
}

CheckResult check_sinkhorn(std::uint64_t seed) {
  return timed("sinkhorn", [=](std::ostringstream& out) {
    std::mt19937_64 rng(seed);
    double worst_sum = 0.0, worst_sym = 0.0;
    std::size_t max_iters = 0;
    bool converged = true;
    ConstraintConfig cfg;
    cfg.max_iters = 100;
    for (std::size_t n : {4u, 8u, 16u, 32u, 64u, 128u}) {
      const SinkhornResult r = sinkhorn_knopp(random_matrix(n, n, rng), cfg);
      converged = converged && r.converged;
      max_iters = std::max(max_iters, r.iterations);
      worst_sum = std::max(worst_sum, doubly_stochastic_deviation(r.matrix));
      const SinkhornResult s = sinkhorn_knopp(symmetrize(random_matrix(n, n, rng)), cfg);
      worst_sum = std::max(worst_sum, doubly_stochastic_deviation(s.matrix));
      worst_sym = std::max(worst_sym, max_abs_diff(s.matrix, transpose(s.matrix)));
    }
    // Entropy comparison on small raw weights, where the cold limit still converges.
    bool sharper = true;
    ConstraintConfig hot, cold;
    hot.max_iters = cold.max_iters = 100000;
    cold.tau = 0.05;
    for (std::uint64_t s = 0; s < 5; ++s) {
      std::mt19937_64 local(seed + 100 + s);
      const Matrix w = random_matrix(8, 8, local, 0.2);
      sharper = sharper && row_entropy(sinkhorn_knopp(w, cold).matrix) < row_entropy(sinkhorn_knopp(w, hot).matrix);
    }
    out << "max sum deviation " << worst_sum << " within " << max_iters << " iterations, symmetry gap " << worst_sym
        << ", cold entropy lower: " << (sharper ? "yes" : "no");
    return converged && worst_sum <= 1e-6 && worst_sym <= 1e-10 && sharper;
  });
}

CheckResult check_degeneracies(std::uint64_t seed, double tol) {
  return timed("degeneracies", [=](std::ostringstream& out) {
    std::mt19937_64 rng(seed);
    const bool value_ok = check_value_projection_equivalence(ValueProjectionCheck{});
    bool fm_ok = true;
    for (int t = 0; t < 10; ++t) fm_ok = fm_ok && check_attention_fm_degeneracy(random_matrix(4, 6, rng), random_matrix(4, 3, rng));

    const Matrix x = random_matrix(4, 8, rng);
    double gap = 0.0;
    gap = std::max(gap, max_abs_diff(unified_mixing(x, TokenMixerMix{4}), token_mixer(x, PermSpec{4, 8, 4})));
    const Matrix y = random_matrix(4, 8, rng);
    gap = std::max(gap, max_abs_diff(unified_mixing(x, FmMix{y}), fm_interaction(x, y)));
    const Matrix wq = random_matrix(8, 8, rng), wk = random_matrix(8, 8, rng), wv = random_matrix(8, 8, rng);
    gap = std::max(gap, max_abs_diff(unified_mixing(x, SelfAttentionMix{wq, wk, wv}), self_attention(x, wq, wk, wv)));
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
    gap = std::max(gap, max_abs_diff(unified_mixing(x, h), hetero_attention(x, ref)));
    UniMixingParams u;
    u.length = 32;
    u.block = 4;
    u.global_raw = random_matrix(8, 8, rng);
    for (int i = 0; i < 8; ++i) u.local_raw.push_back(random_matrix(4, 4, rng));
    gap = std::max(gap, max_abs_diff(unified_mixing(x, UniMixingMix{u}).data(), unimixing_naive(x.data(), u)));
    LiteParams l;
    l.length = 32;
    l.block = 4;
    l.rank = 2;
    l.a_g = random_matrix(8, 2, rng);
    l.b_g = random_matrix(2, 8, rng);
    l.basis = {random_matrix(4, 4, rng), random_matrix(4, 4, rng)};
    l.omega = random_matrix(8, 2, rng);
    gap = std::max(gap, max_abs_diff(unified_mixing(x, LiteMix{l}).data(), unimixing_naive(x.data(), lite_materialize(l))));
    out << "value projection " << (value_ok ? "exact" : "MISMATCH") << ", XX^T Y identity "
        << (fm_ok ? "exact" : "MISMATCH") << ", dispatcher max gap " << gap;
    return value_ok && fm_ok && gap <= tol;
  });
}

CheckResult check_gradients(const std::vector<double>& taus, std::size_t samples, double eps, double tol) {
  return timed("gradients", [=](std::ostringstream& out) {
    double worst = 0.0;
    std::size_t fewest = samples;
    std::string worst_name;
    for (double tau : taus) {
      UniMixerModel model = init_model(gradient_model(2), 1);
      set_temperature(model, tau);
      Vector labels;
      const FeatureBatch batch = gradient_batch(8, 1, &labels);
      GradCheckOptions opts;
      opts.eps = eps;
      opts.samples = samples;
      const GradCheckResult r = finite_diff_grad_check(model, batch, labels, opts);
      fewest = std::min(fewest, r.checked);
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_name = r.worst + " at tau " + std::to_string(tau);
      }
    }
    out << "L=" << gradient_model(2).length() << ", " << fewest << "+ entries per tau, max relative error " << worst
        << " (" << worst_name << ")";
    return fewest >= samples && worst <= tol;
  });
}

CheckResult check_siamese(std::size_t seeds) {
  return timed("siamese-norm", [=](std::ostringstream& out) {
    std::mt19937_64 rng(5);
    const SiameseState state{random_matrix(1, 12, rng).data(), random_matrix(1, 12, rng).data()};
    const SiameseState next = siamese_step(state, [](std::span<const double> u) { return Vector(u.size(), 0.0); });
    const bool zero_ok = next.x_bar == rms_norm(state.x_bar) && next.y_bar == state.y_bar;
    double lo = 1e300, hi = 0.0;
    for (std::uint64_t s = 1; s <= seeds; ++s) {
      UniMixerModel model = init_model(gradient_model(8), s);
      GraphForward graph(model, false);
      graph.logits(gradient_batch(16, s, nullptr));
      for (double r : graph.block_rms()) {
        lo = std::min(lo, r);
        hi = std::max(hi, r);
      }
    }
    out << "zero block " << (zero_ok ? "exact" : "MISMATCH") << ", 8-block activation RMS in [" << lo << ", " << hi
        << "]";
    return zero_ok && lo >= 0.1 && hi <= 10.0;
  });
}

std::vector<CheckResult> run_all_checks(std::uint64_t seed) {
  return {check_tokenmixer_fixture(),
          check_tokenmixer_random(100, seed),
          check_perm_properties(),
          check_pipeline_equivalence(50, seed, 1e-12),
          check_complexity(),
          check_sinkhorn(seed),
          check_degeneracies(seed, 1e-12),
          check_gradients({1.0, 0.3, 0.05}, 240, 1e-5, 1e-4),
          check_siamese(10)};
}

}  // namespace unimixer
