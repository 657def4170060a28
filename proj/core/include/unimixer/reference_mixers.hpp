#pragma once

#include <cstddef>
#include <vector>

#include "unimixer/tensor.hpp"

namespace unimixer {

// Geometry of the rule-based TokenMixer: T tokens of width D, each split into H heads.
struct PermSpec {
  std::size_t tokens = 0;     // T
  std::size_t token_dim = 0;  // D
  std::size_t heads = 0;      // H

  std::size_t head_dim() const { return token_dim / heads; }
  std::size_t length() const { return tokens * token_dim; }
};

struct PropertyReport {
  bool compressible = false;  // P == kron(G, I_{D/H})
  bool doubly_stochastic = false;
  bool one_nonzero_per_row_and_col = false;
  bool symmetric = false;
  Matrix global;  // recovered G
  std::size_t local_side = 0;
};

// Token-specific projections. Index [token][head].
struct HeteroAttentionParams {
  std::vector<std::vector<Matrix>> w_q;
  std::vector<std::vector<Matrix>> w_k;
  std::vector<std::vector<Matrix>> w_v;
  Matrix w_o;  // (heads * d) x D
};

// MLP inside the factorization-machine block: one hidden layer with Swish.
struct WukongMlp {
  Matrix w1;  // (T*r) x hidden
  Vector b1;
  Matrix w2;  // hidden x (n_fmb * D)
  Vector b2;
};

struct WukongParams {
  Matrix y;      // T x r
  Matrix w_lcb;  // n_lcb x T
  WukongMlp mlp;
  std::size_t fmb_tokens = 0;  // n_fmb output tokens
  double norm_eps = 1e-6;
};

// S = TokenMixer(X). Requires H == T and D % H == 0.
Matrix token_mixer(const Matrix& x, const PermSpec& spec);
// Same head-major regrouping without the H == T restriction; output is H x (T*D/H).
Matrix token_mixer_general(const Matrix& x, const PermSpec& spec);

Matrix build_perm_matrix(const PermSpec& spec);
PropertyReport verify_perm_properties(const PermSpec& spec);

// Row i of the result is x.row(i) * per_token[i] (token-specific linear map).
Matrix token_specific_projection(const Matrix& x, const std::vector<Matrix>& per_token);

Matrix hetero_attention(const Matrix& x, const HeteroAttentionParams& p);
Matrix self_attention(const Matrix& x, const Matrix& w_q, const Matrix& w_k, const Matrix& w_v);

// X X^T Y
Matrix fm_interaction(const Matrix& x, const Matrix& y);
Matrix wukong_fmb(const Matrix& x, const WukongParams& p);
Matrix wukong_lcb(const Matrix& x, const WukongParams& p);
// Concatenation of FMB(x) (fmb_tokens rows) and LCB(x) (n_lcb rows) along the token axis.
Matrix wukong_layer(const Matrix& x, const WukongParams& p);

}  // namespace unimixer
