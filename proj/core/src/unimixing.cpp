#include "unimixer/unimixing.hpp"

#include <cmath>
#include <random>
#include <string>

#include "unimixer/errors.hpp"

namespace unimixer {

namespace {

void require_square(const Matrix& m, std::size_t side, const char* what) {
  if (m.rows() != side || m.cols() != side) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(side) + "x" + std::to_string(side) +
                         ", got " + m.shape_string());
  }
}

void require_length(std::span<const double> x, std::size_t length, const char* what) {
  if (x.size() != length) {
    throw DimensionError(std::string(what) + ": input length " + std::to_string(x.size()) + " != L=" +
                         std::to_string(length));
  }
}

void validate_weights(const MixingWeights& w) {
  const std::size_t n = w.local.size();
  if (n == 0) throw DimensionError("MixingWeights: no local blocks");
  require_square(w.global, n, "MixingWeights global");
  for (const auto& blk : w.local) require_square(blk, w.block(), "MixingWeights local");
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

}  // namespace

std::size_t UniMixingParams::parameter_count() const {
  const std::size_t n = num_blocks();
  return n * n + n * block * block;
}

void UniMixingParams::validate() const {
  if (block == 0 || length == 0 || length % block != 0) {
    throw DimensionError("UniMixingParams: L=" + std::to_string(length) + " is not divisible by B=" +
                         std::to_string(block));
  }
  const std::size_t n = num_blocks();
  require_square(global_raw, n, "UniMixingParams global_raw");
  if (local_raw.size() != n) {
    throw DimensionError("UniMixingParams: " + std::to_string(local_raw.size()) + " local matrices for " +
                         std::to_string(n) + " blocks");
  }
  for (const auto& m : local_raw) require_square(m, block, "UniMixingParams local_raw");
  constraint.validate();
}

std::size_t LiteParams::parameter_count() const {
  const std::size_t n = num_blocks();
  return 2 * rank * n + basis.size() * block * block + basis.size() * n;
}

void LiteParams::validate() const {
  if (block == 0 || length == 0 || length % block != 0) {
    throw DimensionError("LiteParams: L=" + std::to_string(length) + " is not divisible by B=" +
                         std::to_string(block));
  }
  if (rank < 1) throw DimensionError("LiteParams: rank must be >= 1");
  if (basis.empty()) throw DimensionError("LiteParams: basis must be nonempty");
  const std::size_t n = num_blocks();
  if (a_g.rows() != n || a_g.cols() != rank || b_g.rows() != rank || b_g.cols() != n) {
    throw DimensionError("LiteParams: low-rank factors " + a_g.shape_string() + " and " + b_g.shape_string() +
                         " do not match L/B=" + std::to_string(n) + ", r=" + std::to_string(rank));
  }
  for (const auto& z : basis) require_square(z, block, "LiteParams basis");
  if (omega.rows() != n || omega.cols() != basis.size()) {
    throw DimensionError("LiteParams: omega " + omega.shape_string() + " expected " + std::to_string(n) + "x" +
                         std::to_string(basis.size()));
  }
  constraint.validate();
}

std::uint64_t naive_mixing_multiplies(std::size_t length) {
  return static_cast<std::uint64_t>(length) * length;
}

std::uint64_t optimized_mixing_multiplies(std::size_t length, std::size_t block) {
  return static_cast<std::uint64_t>(length) * length / block + static_cast<std::uint64_t>(length) * block;
}

MixingWeights constrained_weights(const UniMixingParams& p) {
  p.validate();
  MixingWeights w;
  w.global = sinkhorn_knopp(symmetrize(p.global_raw), p.constraint).matrix;
  w.local.reserve(p.local_raw.size());
  for (const auto& raw : p.local_raw) w.local.push_back(sinkhorn_knopp(symmetrize(raw), p.constraint).matrix);
  return w;
}

MixingWeights lite_materialize(const LiteParams& p) {
  p.validate();
  MixingWeights w;
  w.global = sinkhorn_knopp(matmul(p.a_g, p.b_g), p.constraint).matrix;
  for (std::size_t i = 0; i < p.num_blocks(); ++i) {
    Matrix combined(p.block, p.block);
    for (std::size_t l = 0; l < p.basis.size(); ++l) {
      const double coeff = p.omega(i, l);
      for (std::size_t e = 0; e < combined.size(); ++e) combined.data()[e] += coeff * p.basis[l].data()[e];
    }
    w.local.push_back(sinkhorn_knopp(combined, p.constraint).matrix);
  }
  return w;
}

Vector unimixing_naive(std::span<const double> x_flat, const MixingWeights& w) {
  validate_weights(w);
  require_length(x_flat, w.length(), "unimixing_naive");
  std::vector<Matrix> transposed;
  transposed.reserve(w.local.size());
  for (const auto& blk : w.local) transposed.push_back(transpose(blk));
  const Matrix full = generalized_kron(w.global, transposed);
  return matvec(full, x_flat);
}

Vector unimixing_naive(std::span<const double> x_flat, const UniMixingParams& p) {
  return unimixing_naive(x_flat, constrained_weights(p));
}

Matrix local_mixing(std::span<const double> x_flat, const std::vector<Matrix>& local) {
  if (local.empty()) throw DimensionError("local_mixing: no local blocks");
  const std::size_t b = local.front().rows();
  const auto chunks = split_even(x_flat, local.size());
  if (chunks.front().size() != b) {
    throw DimensionError("local_mixing: block width " + std::to_string(chunks.front().size()) +
                         " does not match local matrices of side " + std::to_string(b));
  }
  Matrix h(local.size(), b);
  for (std::size_t i = 0; i < local.size(); ++i) {
    const Vector row = vecmat(chunks[i], local[i]);
    std::copy(row.begin(), row.end(), h.row(i).begin());
  }
  return h;
}

Vector unimixing_forward(std::span<const double> x_flat, const MixingWeights& w) {
  validate_weights(w);
  require_length(x_flat, w.length(), "unimixing_forward");
  return flatten_row_major(matmul(w.global, local_mixing(x_flat, w.local)));
}

Vector unimixing_forward(std::span<const double> x_flat, const UniMixingParams& p) {
  return unimixing_forward(x_flat, constrained_weights(p));
}

Matrix unimixing_forward_batch(const Matrix& xs, const MixingWeights& w) {
  Matrix out(xs.rows(), xs.cols());
  for (std::size_t n = 0; n < xs.rows(); ++n) {
    const Vector y = unimixing_forward(xs.row(n), w);
    std::copy(y.begin(), y.end(), out.row(n).begin());
  }
  return out;
}

Vector unimixing_block(std::span<const double> x_flat, const MixingWeights& w, double eps) {
  Vector mixed = unimixing_forward(x_flat, w);
  for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] += x_flat[i];
  return rms_norm(mixed, eps);
}

Vector unimixing_block(std::span<const double> x_flat, const UniMixingParams& p, double eps) {
  return unimixing_block(x_flat, constrained_weights(p), eps);
}

Vector unimixing_lite_forward(std::span<const double> x_flat, const LiteParams& p) {
  return unimixing_forward(x_flat, lite_materialize(p));
}

Vector unimixing_lite_block(std::span<const double> x_flat, const LiteParams& p, double eps) {
  return unimixing_block(x_flat, lite_materialize(p), eps);
}

Matrix unified_mixing(const Matrix& x, const MixVariant& v) {
  struct Visitor {
    const Matrix& x;

    Matrix operator()(const SelfAttentionMix& m) const {
      if (m.w_q.rows() != x.cols() || m.w_k.rows() != x.cols() || m.w_v.rows() != x.cols()) {
        throw ConfigError("unified_mixing: self-attention weights do not match token width " +
                          std::to_string(x.cols()));
      }
      const Matrix local = matmul(x, m.w_v);
      const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(local.cols()));
      const Matrix global = softmax_rows(scale(matmul(matmul(x, m.w_q), transpose(matmul(x, m.w_k))), inv_sqrt_d));
      return matmul(global, local);
    }

    Matrix operator()(const HeteroAttentionMix& m) const {
      if (m.w_q.size() != x.rows() || m.w_k.size() != x.rows() || m.w_v.size() != x.rows()) {
        throw ConfigError("unified_mixing: heterogeneous attention needs one weight per token");
      }
      const Matrix local = token_specific_projection(x, m.w_v);
      const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(local.cols()));
      const Matrix q = token_specific_projection(x, m.w_q);
      const Matrix k = token_specific_projection(x, m.w_k);
      return matmul(softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d)), local);
    }

    Matrix operator()(const TokenMixerMix& m) const {
      if (m.heads == 0 || x.cols() % m.heads != 0) {
        throw ConfigError("unified_mixing: TokenMixer heads must divide the token width");
      }
      const PermSpec spec{x.rows(), x.cols(), m.heads};
      const PropertyReport props = verify_perm_properties(spec);
      const Matrix local = reshape(x.data(), x.size() / props.local_side, props.local_side);
      const Matrix mixed = matmul(props.global, local);
      return reshape(mixed.data(), spec.heads, spec.length() / spec.heads);
    }

    Matrix operator()(const FmMix& m) const {
      if (m.y.rows() != x.rows()) throw ConfigError("unified_mixing: FM Y rows must equal the token count");
      const Matrix identity = Matrix::identity(x.cols());
      const Matrix xi = matmul(x, identity);
      return matmul(matmul(xi, transpose(xi)), m.y);
    }

    Matrix operator()(const UniMixingMix& m) const { return apply(constrained_weights(m.params), m.params.length); }

    Matrix operator()(const LiteMix& m) const { return apply(lite_materialize(m.params), m.params.length); }

    Matrix apply(const MixingWeights& w, std::size_t length) const {
      if (x.size() != length) {
        throw ConfigError("unified_mixing: input has " + std::to_string(x.size()) + " entries, mixer expects L=" +
                          std::to_string(length));
      }
      const Matrix mixed = matmul(w.global, local_mixing(x.data(), w.local));
      return reshape(mixed.data(), x.rows(), x.cols());
    }
  };
  return std::visit(Visitor{x}, v);
}

bool value_projection_matches(const Matrix& x, const std::vector<Matrix>& local, const std::vector<Matrix>& value) {
  if (local.size() != x.rows() || value.size() != x.rows()) {
    throw ConfigError("value projection check: need one local and one value matrix per token (L/B == T)");
  }
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (local[i].rows() != x.cols() || !local[i].is_square() || value[i].rows() != x.cols() ||
        value[i].cols() != local[i].cols()) {
      throw ConfigError("value projection check: requires B == D == d with square local matrices");
    }
  }
  const Matrix h = local_mixing(x.data(), local);
  const Matrix v = token_specific_projection(x, value);
  return max_abs_diff(h, v) <= 1e-12;
}

bool check_value_projection_equivalence(const ValueProjectionCheck& cfg) {
  if (cfg.tokens == 0 || cfg.token_dim == 0) throw ConfigError("value projection check: T and D must be positive");
  std::mt19937_64 rng(cfg.seed);
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    const Matrix x = random_matrix(cfg.tokens, cfg.token_dim, rng);
    std::vector<Matrix> shared;
    for (std::size_t i = 0; i < cfg.tokens; ++i) shared.push_back(random_matrix(cfg.token_dim, cfg.token_dim, rng));
    if (!value_projection_matches(x, shared, shared)) return false;
  }
  return true;
}

FmDegeneracyReport check_attention_fm_degeneracy(const Matrix& x, const Matrix& y) {
  if (y.rows() != x.rows()) {
    throw DimensionError("check_attention_fm_degeneracy: Y " + y.shape_string() + " does not match " +
                         std::to_string(x.rows()) + " tokens");
  }
  // Attention with W_Q = W_K = I, value matrix Y and the softmax removed.
  const Matrix identity = Matrix::identity(x.cols());
  const Matrix q = matmul(x, identity);
  const Matrix k = matmul(x, identity);
  const Matrix attention_path = matmul(matmul(q, transpose(k)), y);
  const Matrix fm_path = fm_interaction(x, y);

  FmDegeneracyReport report;
  report.identity_holds = attention_path == fm_path;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  const Matrix with_softmax = matmul(softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d)), y);
  report.softmax_gap = max_abs_diff(with_softmax, fm_path);
  return report;
}

}  // namespace unimixer
