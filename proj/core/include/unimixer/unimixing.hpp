#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "unimixer/reference_mixers.hpp"
#include "unimixer/sinkhorn.hpp"
#include "unimixer/tensor.hpp"

namespace unimixer {

// Learnable block-factored mixing map: a global (L/B)x(L/B) matrix and one
// BxB local matrix per block. Raw values are constrained before use.
struct UniMixingParams {
  std::size_t length = 0;  // L
  std::size_t block = 0;   // B
  Matrix global_raw;
  std::vector<Matrix> local_raw;
  ConstraintConfig constraint;

  std::size_t num_blocks() const { return block == 0 ? 0 : length / block; }
  std::size_t parameter_count() const;
  void validate() const;
};

// Lightweight variant: low-rank global factor A_G * B_G and local matrices
// composed from a shared basis with per-block coefficients.
struct LiteParams {
  std::size_t length = 0;
  std::size_t block = 0;
  std::size_t rank = 0;
  Matrix a_g;                // (L/B) x r
  Matrix b_g;                // r x (L/B)
  std::vector<Matrix> basis; // b matrices, each B x B
  Matrix omega;              // (L/B) x b, row i holds the coefficients of block i
  ConstraintConfig constraint;

  std::size_t num_blocks() const { return block == 0 ? 0 : length / block; }
  std::size_t basis_count() const { return basis.size(); }
  std::size_t parameter_count() const;
  void validate() const;
};

// Constrained weights ready for the forward pass.
struct MixingWeights {
  Matrix global;              // (L/B) x (L/B)
  std::vector<Matrix> local;  // L/B matrices, each B x B

  std::size_t block() const { return local.empty() ? 0 : local.front().rows(); }
  std::size_t length() const { return local.size() * block(); }
};

// Closed-form per-sample multiplication counts.
std::uint64_t naive_mixing_multiplies(std::size_t length);
std::uint64_t optimized_mixing_multiplies(std::size_t length, std::size_t block);

MixingWeights constrained_weights(const UniMixingParams& p);
MixingWeights lite_materialize(const LiteParams& p);

// Materialises the L x L generalized Kronecker map and applies it. Blocks are
// taken transposed so that the result agrees with the row-vector convention
// x_i * W_B^i of the blockwise pipeline.
Vector unimixing_naive(std::span<const double> x_flat, const MixingWeights& w);
Vector unimixing_naive(std::span<const double> x_flat, const UniMixingParams& p);

// Rows of the local interaction matrix: row i is x_i * W_B^i.
Matrix local_mixing(std::span<const double> x_flat, const std::vector<Matrix>& local);

// flatten(W_G * local_mixing(x)); never builds an L x L intermediate.
Vector unimixing_forward(std::span<const double> x_flat, const MixingWeights& w);
Vector unimixing_forward(std::span<const double> x_flat, const UniMixingParams& p);
// Each row of xs is an independent sample.
Matrix unimixing_forward_batch(const Matrix& xs, const MixingWeights& w);

// rms_norm(x + UniMixing(x)).
Vector unimixing_block(std::span<const double> x_flat, const MixingWeights& w, double eps = 1e-6);
Vector unimixing_block(std::span<const double> x_flat, const UniMixingParams& p, double eps = 1e-6);

Vector unimixing_lite_forward(std::span<const double> x_flat, const LiteParams& p);
Vector unimixing_lite_block(std::span<const double> x_flat, const LiteParams& p, double eps = 1e-6);

// Mixers expressed in the unified G(X, W_G) times local-pattern form (single head).
struct SelfAttentionMix {
  Matrix w_q, w_k, w_v;
};
struct HeteroAttentionMix {
  std::vector<Matrix> w_q, w_k, w_v;  // one per token
};
struct TokenMixerMix {
  std::size_t heads = 0;
};
struct FmMix {
  Matrix y;  // T x r
};
struct UniMixingMix {
  UniMixingParams params;
};
struct LiteMix {
  LiteParams params;
};
using MixVariant = std::variant<SelfAttentionMix, HeteroAttentionMix, TokenMixerMix, FmMix, UniMixingMix, LiteMix>;

// G(X, W_G) times the local mixing pattern. Output shape:
//   attention variants: T x d;  FM: T x r;  TokenMixer: H x (T*D/H);
//   UniMixing / Lite: same shape as x.
Matrix unified_mixing(const Matrix& x, const MixVariant& v);

// True iff the block-local projection rows x_i * W_B^i equal the
// heterogeneous-attention value rows x_i * W_V^i within 1e-12.
bool value_projection_matches(const Matrix& x, const std::vector<Matrix>& local, const std::vector<Matrix>& value);

struct ValueProjectionCheck {
  std::size_t tokens = 4;     // T == L/B
  std::size_t token_dim = 3;  // D == B == d
  std::size_t trials = 20;
  std::uint64_t seed = 7;
};
// Random inputs with shared weights W_V^i = W_B^i.
bool check_value_projection_equivalence(const ValueProjectionCheck& cfg);

struct FmDegeneracyReport {
  bool identity_holds = false;  // (X I)(X I)^T Y == X X^T Y, bit-exact
  double softmax_gap = 0.0;     // max |softmax(XX^T/sqrt(d)) Y - XX^T Y|, reported only
  explicit operator bool() const { return identity_holds; }
};
FmDegeneracyReport check_attention_fm_degeneracy(const Matrix& x, const Matrix& y);

}  // namespace unimixer
