#include "unimixer/reference_mixers.hpp"

#include <cmath>
#include <string>

#include "unimixer/errors.hpp"

namespace unimixer {

namespace {

void require_head_split(const PermSpec& spec) {
  if (spec.tokens == 0 || spec.token_dim == 0 || spec.heads == 0) {
    throw DimensionError("PermSpec: T, D and H must be positive");
  }
  if (spec.token_dim % spec.heads != 0) {
    throw DimensionError("PermSpec: D=" + std::to_string(spec.token_dim) + " is not divisible by H=" +
                         std::to_string(spec.heads));
  }
}

// Position in flatten(S) that receives flatten(X)[t*D + h*s + k].
std::size_t mixed_index(const PermSpec& spec, std::size_t t, std::size_t h, std::size_t k) {
  const std::size_t s = spec.head_dim();
  return h * (spec.tokens * s) + t * s + k;
}

Matrix attention_core(const Matrix& q, const Matrix& k, const Matrix& v) {
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(v.cols()));
  const Matrix logits = scale(matmul(q, transpose(k)), scale_factor);
  return matmul(softmax_rows(logits), v);
}

}  // namespace

Matrix token_specific_projection(const Matrix& x, const std::vector<Matrix>& per_token) {
  if (per_token.size() != x.rows()) {
    throw DimensionError("token-specific projection: " + std::to_string(per_token.size()) + " weights for " +
                         std::to_string(x.rows()) + " tokens");
  }
  const std::size_t out_cols = per_token.front().cols();
  Matrix out(x.rows(), out_cols);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (per_token[i].rows() != x.cols() || per_token[i].cols() != out_cols) {
      throw DimensionError("token-specific projection: weight " + per_token[i].shape_string() +
                           " does not fit token width " + std::to_string(x.cols()));
    }
    const Vector r = vecmat(x.row(i), per_token[i]);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

Matrix token_mixer_general(const Matrix& x, const PermSpec& spec) {
  require_head_split(spec);
  if (x.rows() != spec.tokens || x.cols() != spec.token_dim) {
    throw DimensionError("token_mixer: input " + x.shape_string() + " does not match T=" +
                         std::to_string(spec.tokens) + ", D=" + std::to_string(spec.token_dim));
  }
  const std::size_t s = spec.head_dim();
  Vector out(spec.length());
  for (std::size_t t = 0; t < spec.tokens; ++t)
    for (std::size_t h = 0; h < spec.heads; ++h)
      for (std::size_t k = 0; k < s; ++k) out[mixed_index(spec, t, h, k)] = x(t, h * s + k);
  return reshape(out, spec.heads, spec.length() / spec.heads);
}

Matrix token_mixer(const Matrix& x, const PermSpec& spec) {
  if (spec.heads != spec.tokens) {
    throw ConstraintError("token_mixer: H=" + std::to_string(spec.heads) + " must equal T=" +
                          std::to_string(spec.tokens));
  }
  return token_mixer_general(x, spec);
}

Matrix build_perm_matrix(const PermSpec& spec) {
  require_head_split(spec);
  const std::size_t n = spec.length();
  const std::size_t s = spec.head_dim();
  Matrix p(n, n);
  for (std::size_t t = 0; t < spec.tokens; ++t)
    for (std::size_t h = 0; h < spec.heads; ++h)
      for (std::size_t k = 0; k < s; ++k) p(mixed_index(spec, t, h, k), t * spec.token_dim + h * s + k) = 1.0;
  return p;
}

PropertyReport verify_perm_properties(const PermSpec& spec) {
  const Matrix p = build_perm_matrix(spec);
  const std::size_t n = p.rows();
  PropertyReport report;

  bool stochastic = true;
  bool one_nonzero = true;
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0, col_sum = 0.0;
    std::size_t row_nz = 0, col_nz = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row_sum += p(i, j);
      col_sum += p(j, i);
      row_nz += p(i, j) != 0.0;
      col_nz += p(j, i) != 0.0;
    }
    stochastic = stochastic && row_sum == 1.0 && col_sum == 1.0;
    one_nonzero = one_nonzero && row_nz == 1 && col_nz == 1;
  }
  report.doubly_stochastic = stochastic;
  report.one_nonzero_per_row_and_col = one_nonzero;
  report.symmetric = is_symmetric(p);

  // Recover G by sampling the top-left entry of every s x s block, then check
  // that the Kronecker product reproduces P exactly.
  const std::size_t s = spec.head_dim();
  const std::size_t g_side = n / s;
  Matrix g(g_side, g_side);
  for (std::size_t i = 0; i < g_side; ++i)
    for (std::size_t j = 0; j < g_side; ++j) g(i, j) = p(i * s, j * s);
  report.compressible = kron(g, Matrix::identity(s)) == p;
  report.global = std::move(g);
  report.local_side = s;
  return report;
}

Matrix hetero_attention(const Matrix& x, const HeteroAttentionParams& p) {
  const std::size_t heads = p.w_v.empty() ? 0 : p.w_v.front().size();
  if (heads == 0 || p.w_q.size() != x.rows() || p.w_k.size() != x.rows() || p.w_v.size() != x.rows()) {
    throw DimensionError("hetero_attention: need per-token weights for " + std::to_string(x.rows()) + " tokens");
  }
  std::vector<Matrix> head_outputs;
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<Matrix> wq, wk, wv;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (p.w_q[i].size() != heads || p.w_k[i].size() != heads || p.w_v[i].size() != heads) {
        throw DimensionError("hetero_attention: inconsistent head count across tokens");
      }
      wq.push_back(p.w_q[i][h]);
      wk.push_back(p.w_k[i][h]);
      wv.push_back(p.w_v[i][h]);
    }
    head_outputs.push_back(
        attention_core(token_specific_projection(x, wq), token_specific_projection(x, wk), token_specific_projection(x, wv)));
  }
  const std::size_t d = head_outputs.front().cols();
  Matrix concat_heads(x.rows(), heads * d);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) concat_heads(i, h * d + j) = head_outputs[h](i, j);
  if (p.w_o.rows() != heads * d) {
    throw DimensionError("hetero_attention: output projection " + p.w_o.shape_string() + " expects " +
                         std::to_string(heads * d) + " rows");
  }
  return matmul(concat_heads, p.w_o);
}

Matrix self_attention(const Matrix& x, const Matrix& w_q, const Matrix& w_k, const Matrix& w_v) {
  return attention_core(matmul(x, w_q), matmul(x, w_k), matmul(x, w_v));
}

Matrix fm_interaction(const Matrix& x, const Matrix& y) {
  if (y.rows() != x.rows()) {
    throw DimensionError("fm_interaction: Y " + y.shape_string() + " does not match " +
                         std::to_string(x.rows()) + " tokens");
  }
  return matmul(matmul(x, transpose(x)), y);
}

Matrix wukong_fmb(const Matrix& x, const WukongParams& p) {
  const Matrix fm = fm_interaction(x, p.y);
  const Vector normed = rms_norm(flatten_row_major(fm), p.norm_eps);
  if (p.mlp.w1.rows() != normed.size() || p.mlp.b1.size() != p.mlp.w1.cols() ||
      p.mlp.w2.rows() != p.mlp.w1.cols() || p.mlp.b2.size() != p.mlp.w2.cols()) {
    throw DimensionError("wukong_fmb: MLP weights do not match FM output of length " +
                         std::to_string(normed.size()));
  }
  Vector hidden = vecmat(normed, p.mlp.w1);
  for (std::size_t j = 0; j < hidden.size(); ++j) hidden[j] = swish(hidden[j] + p.mlp.b1[j]);
  Vector out = vecmat(hidden, p.mlp.w2);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += p.mlp.b2[j];
  if (p.fmb_tokens == 0 || out.size() % p.fmb_tokens != 0) {
    throw DimensionError("wukong_fmb: MLP output of length " + std::to_string(out.size()) +
                         " cannot form " + std::to_string(p.fmb_tokens) + " tokens");
  }
  return reshape(out, p.fmb_tokens, out.size() / p.fmb_tokens);
}

Matrix wukong_lcb(const Matrix& x, const WukongParams& p) { return matmul(p.w_lcb, x); }

Matrix wukong_layer(const Matrix& x, const WukongParams& p) {
  const Matrix fmb = wukong_fmb(x, p);
  const Matrix lcb = wukong_lcb(x, p);
  if (fmb.cols() != lcb.cols()) {
    throw DimensionError("wukong_layer: FMB width " + std::to_string(fmb.cols()) + " differs from LCB width " +
                         std::to_string(lcb.cols()));
  }
  Matrix out(fmb.rows() + lcb.rows(), fmb.cols());
  std::copy(fmb.data().begin(), fmb.data().end(), out.data().begin());
  std::copy(lcb.data().begin(), lcb.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(fmb.size()));
  return out;
}

}  // namespace unimixer
