#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "unimixer/autodiff.hpp"
#include "unimixer/tensor.hpp"
#include "unimixer/unimixing.hpp"

namespace unimixer {

enum class MixerKind { kSelfAttention, kHeteroAttention, kTokenMixer, kFm, kUniMixing, kUniMixingLite };

// CLI spelling: self-attn, hetero-attn, tokenmixer, fm, unimixing, unimixing-lite.
std::string to_string(MixerKind kind);
MixerKind parse_mixer_kind(const std::string& name);

// One feature domain. Categorical domains (cardinality > 0) are looked up in
// an embedding table of width embed_dim; dense domains pass their dense_dim
// values through unchanged (embed_dim == dense_dim).
struct FieldSpec {
  std::string name;
  std::size_t cardinality = 0;
  std::size_t dense_dim = 0;
  std::size_t embed_dim = 0;

  bool categorical() const { return cardinality > 0; }
};

struct ModelConfig {
  std::vector<FieldSpec> fields;
  std::size_t chunk = 8;       // d: width of each slice of the concatenated embedding
  std::size_t token_dim = 8;   // D
  std::size_t block = 4;       // B
  std::size_t num_blocks = 2;  // M
  MixerKind mixer = MixerKind::kUniMixingLite;
  std::size_t rank = 4;           // Lite low-rank r
  std::size_t basis = 2;          // Lite basis count b
  std::size_t expansion = 2;      // pSwiGLU n
  std::size_t mixer_heads = 0;    // TokenMixer H (0 means H = T)
  double tau = 1.0;
  std::size_t sinkhorn_iters = 20;
  double norm_eps = 1e-6;

  std::size_t embedding_length() const;
  std::size_t tokens() const { return chunk == 0 ? 0 : embedding_length() / chunk; }
  std::size_t length() const { return tokens() * token_dim; }
  std::size_t dense_input_width() const;
  void validate() const;
};

// A batch of raw features: categorical[f][n] is the index of sample n in the
// f-th categorical field; dense holds the dense fields side by side.
struct FeatureBatch {
  std::size_t size = 0;
  std::vector<std::vector<std::size_t>> categorical;
  Matrix dense;
};

struct TokenizerParams {
  std::vector<Matrix> embeddings;  // one table per categorical field
  std::vector<Matrix> projections; // T matrices, D x d
  Matrix bias;                     // T x D, row i is b_i
};

struct PSwiGLUParams {
  std::vector<Matrix> w_up;    // per block, B x nB
  std::vector<Matrix> w_gate;  // per block, B x nB
  std::vector<Matrix> w_down;  // per block, nB x B
  Matrix b_up;                 // (L/B) x nB
  Matrix b_gate;               // (L/B) x nB
  Matrix b_down;               // (L/B) x B
};

struct BlockParams {
  MixVariant mixer;
  PSwiGLUParams ffn;
};

struct UniMixerModel {
  ModelConfig config;
  TokenizerParams tokenizer;
  std::vector<BlockParams> blocks;
  Matrix head_w;  // L x 1
  Matrix head_b;  // 1 x 1
};

struct SiameseState {
  Vector x_bar;
  Vector y_bar;
};

// Named view of one trainable tensor.
struct ParamRef {
  std::string name;
  std::string family;
  Matrix* value = nullptr;
  bool dense = true;  // embedding tables are sparse
};

UniMixerModel init_model(const ModelConfig& config, std::uint64_t seed);

// Updates the Sinkhorn temperature everywhere it is stored.
void set_temperature(UniMixerModel& model, double tau);

// Every trainable tensor in a fixed order.
std::vector<ParamRef> parameters(UniMixerModel& model);
std::size_t total_scalars(UniMixerModel& model, bool dense_only);

// Token matrix (T x D) from the concatenated embedding E.
Matrix tokenize(std::span<const double> embedding, const TokenizerParams& p, std::size_t chunk);
// Concatenated embedding of sample n.
Vector embed(const FeatureBatch& batch, std::size_t n, const UniMixerModel& model);

// o is (L/B) x B; each row gets its own gated feed-forward.
Matrix pertoken_swiglu(const Matrix& o, const PSwiGLUParams& p);

SiameseState siamese_step(const SiameseState& state, const std::function<Vector(std::span<const double>)>& block,
                          double eps = 1e-6);
Vector siamese_finalize(const SiameseState& state, double eps = 1e-6);

// pSwiGLU(reshape(RMSNorm(x + Mix(x)), L/B, B)), flattened.
Vector block_body(std::span<const double> x_flat, const BlockParams& block, const ModelConfig& config);

// Materialised mixing weights with the model's fixed-depth Sinkhorn.
MixingWeights block_mixing_weights(const MixVariant& mixer, const ModelConfig& config);

double model_forward(const FeatureBatch& features, std::size_t n, const UniMixerModel& model);
Vector model_forward_batch(const FeatureBatch& features, const UniMixerModel& model);

// Differentiable forward pass. Every parameter touched is bound to a leaf;
// gradients can be read back in parameters() order after ad::backward().
class GraphForward {
 public:
  GraphForward(UniMixerModel& model, bool trainable);

  // N x 1 logits.
  ad::Var logits(const FeatureBatch& batch);
  // Gradient per parameter in parameters() order (zeros where unused).
  std::vector<Matrix> gradients() const;

  // Activation RMS after each block (x_bar stream), recorded by the last logits() call.
  const std::vector<double>& block_rms() const { return block_rms_; }

 private:
  ad::Var bind(Matrix& m);
  ad::Var mixing(const ad::Var& u, BlockParams& block);
  ad::Var body(const ad::Var& u, BlockParams& block);

  UniMixerModel& model_;
  bool trainable_;
  std::vector<std::pair<const Matrix*, ad::Var>> bound_;
  std::vector<double> block_rms_;
};

}  // namespace unimixer
