#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ldalign/corpus.hpp"
#include "ldalign/params.hpp"
#include "ldalign/rng.hpp"

namespace ldalign {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// Pre-LayerNorm decoder-only transformer with learned absolute positions,
// GELU MLP (4x width) and an optional untied output head.
struct TransformerShape {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int context_len = 256;
  int vocab_size = kVocabSize;
  bool with_head = true;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
};

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o;
  std::size_t ln2_g, ln2_b, w_1, b_1, w_2, b_2;
};

struct TransformerLayout {
  TransformerShape shape;
  std::size_t tok_emb = 0, pos_emb = 0;
  std::vector<LayerOffsets> layers;
  std::size_t lnf_g = 0, lnf_b = 0;
  std::size_t head_w = 0, head_b = 0;
  std::size_t begin = 0, end = 0;

  // Registers every array of the network in `table` under `prefix`.
  static TransformerLayout build(const TransformerShape& shape, ParamTable& table,
                                 const std::string& prefix);
};

// GPT-2 style init: N(0, 0.02) weights, residual projections scaled by
// 1/sqrt(2 * n_layers), zero biases, unit LayerNorm gains.
template <typename T>
void init_transformer(const TransformerLayout& layout, std::span<T> params, Rng& rng);

template <typename T>
struct LayerCache {
  MatR<T> x_in, xhat1, a, qkv, o, x_mid, xhat2, b, hpre, g;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd1, rstd2;
  std::vector<MatR<T>> probs;  // one L x L attention matrix per head
};

template <typename T>
struct ForwardCache {
  int length = 0;
  std::optional<int> injected_position;
  std::vector<LayerCache<T>> layers;
  MatR<T> x_final, xhatf;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstdf;
  MatR<T> hidden;  // final LayerNorm output, L x d
  MatR<T> logits;  // L x vocab (empty without a head)
};

// Replaces the token embedding at one position by an arbitrary vector; the
// positional embedding is still added. Used to feed the guide latent.
template <typename T>
struct InjectedEmbedding {
  int position = 0;
  std::span<const T> vector;
};

template <typename T>
void transformer_forward(const TransformerLayout& layout, std::span<const T> params,
                         std::span<const Token> tokens,
                         const InjectedEmbedding<T>* inject, ForwardCache<T>& cache);

// Accumulates parameter gradients into `grad` (+=). Either upstream term may
// be null. If `d_injected` is given it receives dLoss/d(injected vector).
template <typename T>
void transformer_backward(const TransformerLayout& layout, std::span<const T> params,
                          std::span<const Token> tokens, const ForwardCache<T>& cache,
                          const MatR<T>* d_logits, const MatR<T>* d_hidden,
                          std::span<T> grad, RowVec<T>* d_injected);

// Single-sequence key/value cache for autoregressive sampling. Logits agree
// with transformer_forward up to float rounding.
template <typename T>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const TransformerLayout& layout, std::span<const T> params);

  // Feeds one token at the next position and returns its logits row.
  const RowVec<T>& step(Token token);
  int position() const { return pos_; }

 private:
  const TransformerLayout& layout_;
  std::span<const T> params_;
  int pos_ = 0;
  std::vector<MatR<T>> keys_, values_;
  RowVec<T> logits_;
};

}  // namespace ldalign
