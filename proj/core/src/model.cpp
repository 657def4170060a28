#include "unimixer/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <unordered_map>

#include "unimixer/errors.hpp"
#include "unimixer/reference_mixers.hpp"

namespace unimixer {

namespace {

constexpr double kMixingInitStd = 0.02;
constexpr double kEmbeddingInitStd = 0.01;

Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

std::vector<Matrix> normal_matrices(std::size_t count, std::size_t rows, std::size_t cols, double stddev,
                                    std::mt19937_64& rng) {
  std::vector<Matrix> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(normal_matrix(rows, cols, stddev, rng));
  return out;
}

ConstraintConfig model_constraint(const ModelConfig& cfg) {
  ConstraintConfig c;
  c.tau = cfg.tau;
  c.max_iters = cfg.sinkhorn_iters;
  c.mode = SinkhornMode::kFixedDepth;
  return c;
}

// Calls fn(name, family, matrix, dense) for every trainable tensor.
template <class Model, class Fn>
void visit_parameters(Model& model, Fn&& fn) {
  const auto& cfg = model.config;
  std::size_t cat = 0;
  for (const auto& field : cfg.fields) {
    if (!field.categorical()) continue;
    fn("tokenizer.embedding." + field.name, "embedding", model.tokenizer.embeddings[cat++], false);
  }
  for (std::size_t i = 0; i < model.tokenizer.projections.size(); ++i)
    fn("tokenizer.proj." + std::to_string(i), "projection", model.tokenizer.projections[i], true);
  fn(std::string("tokenizer.bias"), "projection", model.tokenizer.bias, true);

  for (std::size_t k = 0; k < model.blocks.size(); ++k) {
    auto& block = model.blocks[k];
    const std::string prefix = "block" + std::to_string(k) + ".";
    std::visit(
        [&](auto& mix) {
          using T = std::decay_t<decltype(mix)>;
          if constexpr (std::is_same_v<T, UniMixingMix>) {
            fn(prefix + "mix.global_raw", "mix_global", mix.params.global_raw, true);
            for (std::size_t i = 0; i < mix.params.local_raw.size(); ++i)
              fn(prefix + "mix.local_raw." + std::to_string(i), "mix_local", mix.params.local_raw[i], true);
          } else if constexpr (std::is_same_v<T, LiteMix>) {
            fn(prefix + "mix.a_g", "lite_a_g", mix.params.a_g, true);
            fn(prefix + "mix.b_g", "lite_b_g", mix.params.b_g, true);
            for (std::size_t l = 0; l < mix.params.basis.size(); ++l)
              fn(prefix + "mix.basis." + std::to_string(l), "lite_basis", mix.params.basis[l], true);
            fn(prefix + "mix.omega", "lite_omega", mix.params.omega, true);
          } else if constexpr (std::is_same_v<T, SelfAttentionMix>) {
            fn(prefix + "mix.w_q", "attention", mix.w_q, true);
            fn(prefix + "mix.w_k", "attention", mix.w_k, true);
            fn(prefix + "mix.w_v", "attention", mix.w_v, true);
          } else if constexpr (std::is_same_v<T, HeteroAttentionMix>) {
            for (std::size_t i = 0; i < mix.w_q.size(); ++i) {
              fn(prefix + "mix.w_q." + std::to_string(i), "attention", mix.w_q[i], true);
              fn(prefix + "mix.w_k." + std::to_string(i), "attention", mix.w_k[i], true);
              fn(prefix + "mix.w_v." + std::to_string(i), "attention", mix.w_v[i], true);
            }
          } else if constexpr (std::is_same_v<T, FmMix>) {
            fn(prefix + "mix.fm_y", "fm_y", mix.y, true);
          }
        },
        block.mixer);
    auto& ffn = block.ffn;
    for (std::size_t i = 0; i < ffn.w_up.size(); ++i) {
      fn(prefix + "ffn.w_up." + std::to_string(i), "swiglu", ffn.w_up[i], true);
      fn(prefix + "ffn.w_gate." + std::to_string(i), "swiglu", ffn.w_gate[i], true);
      fn(prefix + "ffn.w_down." + std::to_string(i), "swiglu", ffn.w_down[i], true);
    }
    fn(prefix + "ffn.b_up", "swiglu", ffn.b_up, true);
    fn(prefix + "ffn.b_gate", "swiglu", ffn.b_gate, true);
    fn(prefix + "ffn.b_down", "swiglu", ffn.b_down, true);
  }
  fn(std::string("head.w"), "head", model.head_w, true);
  fn(std::string("head.b"), "head", model.head_b, true);
}

Vector add_vectors(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("vector add: length mismatch");
  Vector out(a.begin(), a.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

std::vector<std::size_t> token_permutation(const ModelConfig& cfg, std::size_t heads) {
  const PermSpec spec{cfg.tokens(), cfg.token_dim, heads};
  const Matrix p = build_perm_matrix(spec);
  std::vector<std::size_t> perm(p.cols());
  for (std::size_t out = 0; out < p.rows(); ++out)
    for (std::size_t in = 0; in < p.cols(); ++in)
      if (p(out, in) != 0.0) perm[in] = out;
  return perm;
}

}  // namespace

std::string to_string(MixerKind kind) {
  switch (kind) {
    case MixerKind::kSelfAttention: return "self-attn";
    case MixerKind::kHeteroAttention: return "hetero-attn";
    case MixerKind::kTokenMixer: return "tokenmixer";
    case MixerKind::kFm: return "fm";
    case MixerKind::kUniMixing: return "unimixing";
    case MixerKind::kUniMixingLite: return "unimixing-lite";
  }
  return "unknown";
}

MixerKind parse_mixer_kind(const std::string& name) {
  for (MixerKind k : {MixerKind::kSelfAttention, MixerKind::kHeteroAttention, MixerKind::kTokenMixer, MixerKind::kFm,
                      MixerKind::kUniMixing, MixerKind::kUniMixingLite}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown mixer variant '" + name +
                    "' (expected self-attn, hetero-attn, tokenmixer, fm, unimixing or unimixing-lite)");
}

std::size_t ModelConfig::embedding_length() const {
  std::size_t total = 0;
  for (const auto& f : fields) total += f.categorical() ? f.embed_dim : f.dense_dim;
  return total;
}

std::size_t ModelConfig::dense_input_width() const {
  std::size_t total = 0;
  for (const auto& f : fields)
    if (!f.categorical()) total += f.dense_dim;
  return total;
}

void ModelConfig::validate() const {
  if (fields.empty()) throw ConfigError("model: at least one feature field is required");
  for (const auto& f : fields) {
    if (f.categorical() && f.embed_dim == 0) throw ConfigError("model: field '" + f.name + "' needs embed_dim > 0");
    if (!f.categorical() && f.dense_dim == 0) {
      throw ConfigError("model: field '" + f.name + "' needs a cardinality or a dense_dim");
    }
  }
  if (chunk == 0 || embedding_length() % chunk != 0) {
    throw ConfigError("model: embedding length " + std::to_string(embedding_length()) +
                      " is not divisible by chunk " + std::to_string(chunk));
  }
  if (token_dim == 0) throw ConfigError("model: token_dim must be positive");
  if (block == 0 || length() % block != 0) {
    throw ConfigError("model: L=" + std::to_string(length()) + " is not divisible by block " +
                      std::to_string(block));
  }
  if (num_blocks == 0) throw ConfigError("model: num_blocks must be >= 1");
  if (expansion == 0) throw ConfigError("model: expansion must be >= 1");
  if (mixer == MixerKind::kUniMixingLite && (rank == 0 || basis == 0)) {
    throw ConfigError("model: unimixing-lite needs rank >= 1 and basis >= 1");
  }
  if (mixer == MixerKind::kTokenMixer) {
    const std::size_t h = mixer_heads == 0 ? tokens() : mixer_heads;
    if (token_dim % h != 0) {
      throw ConfigError("model: tokenmixer heads " + std::to_string(h) + " must divide token_dim " +
                        std::to_string(token_dim));
    }
  }
  if (!(tau > 0.0)) throw ConfigError("model: tau must be > 0");
  if (sinkhorn_iters == 0) throw ConfigError("model: sinkhorn_iters must be >= 1");
  if (!(norm_eps > 0.0)) throw ConfigError("model: norm_eps must be > 0");
}

UniMixerModel init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  UniMixerModel model;
  model.config = config;

  const std::size_t t = config.tokens();
  const std::size_t dim = config.token_dim;
  const std::size_t len = config.length();
  const std::size_t b = config.block;
  const std::size_t nb = config.expansion * b;
  const std::size_t blocks = len / b;

  for (const auto& f : config.fields)
    if (f.categorical()) model.tokenizer.embeddings.push_back(normal_matrix(f.cardinality, f.embed_dim, kEmbeddingInitStd, rng));
  model.tokenizer.projections =
      normal_matrices(t, dim, config.chunk, 1.0 / std::sqrt(static_cast<double>(config.chunk)), rng);
  model.tokenizer.bias = Matrix(t, dim);

  const ConstraintConfig constraint = model_constraint(config);
  for (std::size_t k = 0; k < config.num_blocks; ++k) {
    BlockParams block;
    switch (config.mixer) {
      case MixerKind::kUniMixing: {
        UniMixingParams p;
        p.length = len;
        p.block = b;
        p.global_raw = normal_matrix(blocks, blocks, kMixingInitStd, rng);
        p.local_raw = normal_matrices(blocks, b, b, kMixingInitStd, rng);
        p.constraint = constraint;
        block.mixer = UniMixingMix{std::move(p)};
        break;
      }
      case MixerKind::kUniMixingLite: {
        LiteParams p;
        p.length = len;
        p.block = b;
        p.rank = config.rank;
        p.a_g = normal_matrix(blocks, config.rank, kMixingInitStd, rng);
        p.b_g = normal_matrix(config.rank, blocks, kMixingInitStd, rng);
        p.basis = normal_matrices(config.basis, b, b, kMixingInitStd, rng);
        p.omega = normal_matrix(blocks, config.basis, kMixingInitStd, rng);
        p.constraint = constraint;
        block.mixer = LiteMix{std::move(p)};
        break;
      }
      case MixerKind::kSelfAttention: {
        const double s = 1.0 / std::sqrt(static_cast<double>(dim));
        block.mixer = SelfAttentionMix{normal_matrix(dim, dim, s, rng), normal_matrix(dim, dim, s, rng),
                                       normal_matrix(dim, dim, s, rng)};
        break;
      }
      case MixerKind::kHeteroAttention: {
        const double s = 1.0 / std::sqrt(static_cast<double>(dim));
        HeteroAttentionMix mix;
        for (std::size_t i = 0; i < t; ++i) {
          mix.w_q.push_back(normal_matrix(dim, dim, s, rng));
          mix.w_k.push_back(normal_matrix(dim, dim, s, rng));
          mix.w_v.push_back(normal_matrix(dim, dim, s, rng));
        }
        block.mixer = std::move(mix);
        break;
      }
      case MixerKind::kTokenMixer:
        block.mixer = TokenMixerMix{config.mixer_heads == 0 ? t : config.mixer_heads};
        break;
      case MixerKind::kFm:
        block.mixer = FmMix{normal_matrix(t, dim, 1.0 / static_cast<double>(t), rng)};
        break;
    }
    auto& ffn = block.ffn;
    ffn.w_up = normal_matrices(blocks, b, nb, 1.0 / std::sqrt(static_cast<double>(b)), rng);
    ffn.w_gate = normal_matrices(blocks, b, nb, 1.0 / std::sqrt(static_cast<double>(b)), rng);
    ffn.w_down = normal_matrices(blocks, nb, b, 1.0 / std::sqrt(static_cast<double>(nb)), rng);
    ffn.b_up = Matrix(blocks, nb);
    ffn.b_gate = Matrix(blocks, nb);
    ffn.b_down = Matrix(blocks, b);
    model.blocks.push_back(std::move(block));
  }
  model.head_w = normal_matrix(len, 1, 1.0 / std::sqrt(static_cast<double>(len)), rng);
  model.head_b = Matrix(1, 1);
  return model;
}

void set_temperature(UniMixerModel& model, double tau) {
  if (!(tau > 0.0)) throw ConfigError("set_temperature: tau must be > 0");
  model.config.tau = tau;
  for (auto& block : model.blocks) {
    if (auto* u = std::get_if<UniMixingMix>(&block.mixer)) u->params.constraint.tau = tau;
    if (auto* l = std::get_if<LiteMix>(&block.mixer)) l->params.constraint.tau = tau;
  }
}

std::vector<ParamRef> parameters(UniMixerModel& model) {
  std::vector<ParamRef> out;
  visit_parameters(model, [&](std::string name, const char* family, Matrix& m, bool dense) {
    out.push_back(ParamRef{std::move(name), family, &m, dense});
  });
  return out;
}

std::size_t total_scalars(UniMixerModel& model, bool dense_only) {
  std::size_t total = 0;
  for (const auto& p : parameters(model))
    if (p.dense || !dense_only) total += p.value->size();
  return total;
}

Matrix tokenize(std::span<const double> embedding, const TokenizerParams& p, std::size_t chunk) {
  const std::size_t t = p.projections.size();
  if (chunk == 0 || embedding.size() != t * chunk) {
    throw DimensionError("tokenize: embedding of length " + std::to_string(embedding.size()) + " does not split into " +
                         std::to_string(t) + " chunks of " + std::to_string(chunk));
  }
  if (t == 0) return Matrix();
  const std::size_t dim = p.projections.front().rows();
  if (p.bias.rows() != t || p.bias.cols() != dim) {
    throw DimensionError("tokenize: bias " + p.bias.shape_string() + " does not match " + std::to_string(t) + "x" +
                         std::to_string(dim));
  }
  Matrix x(t, dim);
  for (std::size_t i = 0; i < t; ++i) {
    const Vector xi = matvec(p.projections[i], embedding.subspan(i * chunk, chunk));
    for (std::size_t j = 0; j < dim; ++j) x(i, j) = xi[j] + p.bias(i, j);
  }
  return x;
}

Vector embed(const FeatureBatch& batch, std::size_t n, const UniMixerModel& model) {
  Vector e;
  std::size_t cat = 0, dense = 0;
  for (const auto& f : model.config.fields) {
    if (f.categorical()) {
      const std::size_t idx = batch.categorical.at(cat).at(n);
      const Matrix& table = model.tokenizer.embeddings.at(cat);
      if (idx >= table.rows()) {
        throw DimensionError("embed: index " + std::to_string(idx) + " out of range for field '" + f.name + "'");
      }
      e.insert(e.end(), table.row(idx).begin(), table.row(idx).end());
      ++cat;
    } else {
      const auto r = batch.dense.row(n);
      e.insert(e.end(), r.begin() + static_cast<std::ptrdiff_t>(dense),
               r.begin() + static_cast<std::ptrdiff_t>(dense + f.dense_dim));
      dense += f.dense_dim;
    }
  }
  return e;
}

Matrix pertoken_swiglu(const Matrix& o, const PSwiGLUParams& p) {
  if (o.rows() != p.w_up.size() || o.rows() != p.w_gate.size() || o.rows() != p.w_down.size()) {
    throw DimensionError("pertoken_swiglu: " + std::to_string(o.rows()) + " tokens but " +
                         std::to_string(p.w_up.size()) + " weight sets");
  }
  Matrix out(o.rows(), o.cols());
  for (std::size_t i = 0; i < o.rows(); ++i) {
    Vector up = vecmat(o.row(i), p.w_up[i]);
    Vector gate = vecmat(o.row(i), p.w_gate[i]);
    if (up.size() != p.b_up.cols() || gate.size() != p.b_gate.cols()) {
      throw DimensionError("pertoken_swiglu: bias width does not match expansion");
    }
    Vector hidden(up.size());
    for (std::size_t j = 0; j < up.size(); ++j)
      hidden[j] = (up[j] + p.b_up(i, j)) * swish(gate[j] + p.b_gate(i, j));
    const Vector down = vecmat(hidden, p.w_down[i]);
    if (down.size() != o.cols()) throw DimensionError("pertoken_swiglu: down projection changes the token width");
    for (std::size_t j = 0; j < down.size(); ++j) out(i, j) = down[j] + p.b_down(i, j);
  }
  return out;
}

SiameseState siamese_step(const SiameseState& state, const std::function<Vector(std::span<const double>)>& block,
                          double eps) {
  if (state.x_bar.size() != state.y_bar.size()) throw DimensionError("siamese_step: stream lengths differ");
  const Vector y_tilde = rms_norm(state.y_bar, eps);
  const Vector o = block(add_vectors(state.x_bar, y_tilde));
  return SiameseState{rms_norm(add_vectors(state.x_bar, o), eps), add_vectors(state.y_bar, o)};
}

Vector siamese_finalize(const SiameseState& state, double eps) {
  return add_vectors(state.x_bar, rms_norm(state.y_bar, eps));
}

MixingWeights block_mixing_weights(const MixVariant& mixer, const ModelConfig& config) {
  (void)config;
  if (const auto* u = std::get_if<UniMixingMix>(&mixer)) return constrained_weights(u->params);
  if (const auto* l = std::get_if<LiteMix>(&mixer)) return lite_materialize(l->params);
  throw ConfigError("block_mixing_weights: mixer has no learned block weights");
}

Vector block_body(std::span<const double> x_flat, const BlockParams& block, const ModelConfig& config) {
  const std::size_t len = config.length();
  if (x_flat.size() != len) throw DimensionError("block_body: input length does not match L");
  Vector z;
  if (std::holds_alternative<UniMixingMix>(block.mixer) || std::holds_alternative<LiteMix>(block.mixer)) {
    z = unimixing_block(x_flat, block_mixing_weights(block.mixer, config), config.norm_eps);
  } else {
    const Matrix mixed = unified_mixing(reshape(x_flat, config.tokens(), config.token_dim), block.mixer);
    z = rms_norm(add_vectors(x_flat, mixed.data()), config.norm_eps);
  }
  return flatten_row_major(pertoken_swiglu(reshape(z, len / config.block, config.block), block.ffn));
}

double model_forward(const FeatureBatch& features, std::size_t n, const UniMixerModel& model) {
  const auto& cfg = model.config;
  const Vector e = embed(features, n, model);
  const Vector x = flatten_row_major(tokenize(e, model.tokenizer, cfg.chunk));
  SiameseState state{x, x};
  for (const auto& block : model.blocks) {
    state = siamese_step(
        state, [&](std::span<const double> in) { return block_body(in, block, cfg); }, cfg.norm_eps);
  }
  const Vector out = siamese_finalize(state, cfg.norm_eps);
  const Vector logit = vecmat(out, model.head_w);
  return logit[0] + model.head_b(0, 0);
}

Vector model_forward_batch(const FeatureBatch& features, const UniMixerModel& model) {
  Vector out(features.size);
  for (std::size_t n = 0; n < features.size; ++n) out[n] = model_forward(features, n, model);
  return out;
}

GraphForward::GraphForward(UniMixerModel& model, bool trainable) : model_(model), trainable_(trainable) {}

ad::Var GraphForward::bind(Matrix& m) {
  for (const auto& [ptr, var] : bound_)
    if (ptr == &m) return var;
  ad::Var v = trainable_ ? ad::parameter(m) : ad::constant(m);
  bound_.emplace_back(&m, v);
  return v;
}

std::vector<Matrix> GraphForward::gradients() const {
  std::vector<Matrix> out;
  for (const auto& p : parameters(model_)) {
    Matrix g(p.value->rows(), p.value->cols());
    for (const auto& [ptr, var] : bound_)
      if (ptr == p.value && !var->grad.empty()) g = var->grad;
    out.push_back(std::move(g));
  }
  return out;
}

ad::Var GraphForward::mixing(const ad::Var& u, BlockParams& block) {
  const auto& cfg = model_.config;
  const std::size_t t = cfg.tokens();
  if (auto* uni = std::get_if<UniMixingMix>(&block.mixer)) {
    auto& p = uni->params;
    const ad::Var g = ad::sinkhorn(ad::symmetrize(bind(p.global_raw)), p.constraint);
    std::vector<ad::Var> locals;
    for (auto& raw : p.local_raw) locals.push_back(ad::sinkhorn(ad::symmetrize(bind(raw)), p.constraint));
    return ad::block_global(g, ad::block_linear(u, locals), p.block);
  }
  if (auto* lite = std::get_if<LiteMix>(&block.mixer)) {
    auto& p = lite->params;
    const ad::Var g = ad::sinkhorn(ad::matmul(bind(p.a_g), bind(p.b_g)), p.constraint);
    std::vector<ad::Var> basis;
    for (auto& z : p.basis) basis.push_back(bind(z));
    const ad::Var omega = bind(p.omega);
    std::vector<ad::Var> locals;
    for (std::size_t i = 0; i < p.num_blocks(); ++i)
      locals.push_back(ad::sinkhorn(ad::basis_combine(omega, i, basis), p.constraint));
    return ad::block_global(g, ad::block_linear(u, locals), p.block);
  }
  if (auto* tm = std::get_if<TokenMixerMix>(&block.mixer)) {
    return ad::permute_cols(u, token_permutation(cfg, tm->heads));
  }
  if (auto* fm = std::get_if<FmMix>(&block.mixer)) return ad::fm_core(u, bind(fm->y), t);
  if (auto* sa = std::get_if<SelfAttentionMix>(&block.mixer)) {
    const std::vector<ad::Var> q(t, bind(sa->w_q)), k(t, bind(sa->w_k)), v(t, bind(sa->w_v));
    return ad::token_attention(ad::block_linear(u, q), ad::block_linear(u, k), ad::block_linear(u, v), t);
  }
  auto& ha = std::get<HeteroAttentionMix>(block.mixer);
  std::vector<ad::Var> q, k, v;
  for (std::size_t i = 0; i < t; ++i) {
    q.push_back(bind(ha.w_q[i]));
    k.push_back(bind(ha.w_k[i]));
    v.push_back(bind(ha.w_v[i]));
  }
  return ad::token_attention(ad::block_linear(u, q), ad::block_linear(u, k), ad::block_linear(u, v), t);
}

ad::Var GraphForward::body(const ad::Var& u, BlockParams& block) {
  const double eps = model_.config.norm_eps;
  const ad::Var z = ad::rms_norm_rows(ad::add(u, mixing(u, block)), eps);
  auto& ffn = block.ffn;
  auto bind_all = [&](std::vector<Matrix>& ms) {
    std::vector<ad::Var> out;
    for (auto& m : ms) out.push_back(bind(m));
    return out;
  };
  auto as_row = [&](Matrix& m) { return ad::reshape(bind(m), 1, m.size()); };
  const ad::Var up = ad::add_row(ad::block_linear(z, bind_all(ffn.w_up)), as_row(ffn.b_up));
  const ad::Var gate = ad::add_row(ad::block_linear(z, bind_all(ffn.w_gate)), as_row(ffn.b_gate));
  const ad::Var hidden = ad::hadamard(up, ad::swish(gate));
  return ad::add_row(ad::block_linear(hidden, bind_all(ffn.w_down)), as_row(ffn.b_down));
}

ad::Var GraphForward::logits(const FeatureBatch& batch) {
  const auto& cfg = model_.config;
  const double eps = cfg.norm_eps;
  std::vector<ad::Var> parts;
  std::size_t cat = 0, dense = 0;
  for (const auto& f : cfg.fields) {
    if (f.categorical()) {
      parts.push_back(ad::gather_rows(bind(model_.tokenizer.embeddings.at(cat)), batch.categorical.at(cat)));
      ++cat;
    } else {
      Matrix slice(batch.size, f.dense_dim);
      for (std::size_t n = 0; n < batch.size; ++n)
        for (std::size_t j = 0; j < f.dense_dim; ++j) slice(n, j) = batch.dense(n, dense + j);
      parts.push_back(ad::constant(std::move(slice)));
      dense += f.dense_dim;
    }
  }
  const ad::Var e = parts.size() == 1 ? parts.front() : ad::concat_cols(parts);
  std::vector<ad::Var> proj;
  for (auto& w : model_.tokenizer.projections) proj.push_back(ad::transpose(bind(w)));
  const ad::Var x = ad::add_row(ad::block_linear(e, proj),
                                ad::reshape(bind(model_.tokenizer.bias), 1, model_.tokenizer.bias.size()));

  block_rms_.clear();
  ad::Var x_bar = x, y_bar = x;
  for (auto& block : model_.blocks) {
    const ad::Var o = body(ad::add(x_bar, ad::rms_norm_rows(y_bar, eps)), block);
    x_bar = ad::rms_norm_rows(ad::add(x_bar, o), eps);
    y_bar = ad::add(y_bar, o);
    double sq = 0.0;
    for (double v : x_bar->value.data()) sq += v * v;
    block_rms_.push_back(std::sqrt(sq / static_cast<double>(std::max<std::size_t>(1, x_bar->value.size()))));
  }
  const ad::Var out = ad::add(x_bar, ad::rms_norm_rows(y_bar, eps));
  return ad::add_row(ad::matmul(out, bind(model_.head_w)), bind(model_.head_b));
}

}  // namespace unimixer
