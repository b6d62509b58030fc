#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ldalign/corpus.hpp"
#include "ldalign/training.hpp"
#include "ldalign/transformer.hpp"

namespace ldalign {

struct LMConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int context_len = 256;
  int vocab_size = kVocabSize;

  TransformerShape shape() const {
    return {n_layers, n_heads, d_model, context_len, vocab_size, true};
  }
  void validate() const { shape().validate(); }
  bool operator==(const LMConfig&) const = default;
};

// Parameters theta of the policy p_theta, as one flat buffer plus layout.
// T = float for training, double for verification.
template <typename T>
class LMParams {
 public:
  // All-zero parameters (uniform next-token distribution everywhere).
  explicit LMParams(const LMConfig& config);
  static LMParams random(const LMConfig& config, std::uint64_t seed);

  const LMConfig& config() const { return config_; }
  const ParamTable& table() const { return table_; }
  const TransformerLayout& layout() const { return layout_; }
  std::span<const T> values() const { return values_; }
  std::span<T> values() { return values_; }
  std::size_t parameter_count() const { return values_.size(); }

  template <typename U>
  LMParams<U> cast() const {
    LMParams<U> out(config_);
    std::copy(values_.begin(), values_.end(), out.values().begin());
    return out;
  }

 private:
  LMConfig config_;
  ParamTable table_;
  TransformerLayout layout_;
  AlignedVector<T> values_;
};

// Per-position logits, tokens.size() x vocab.
template <typename T>
MatR<T> forward_logits(const LMParams<T>& params, std::span<const Token> tokens);

// Sum of log-softmax scores over the response range of `enc`.
template <typename T>
double response_log_prob(const MatR<T>& logits, const EncodedPair& enc);

// Gradient of scale * response_log_prob with respect to the logits.
template <typename T>
MatR<T> response_log_prob_dlogits(const MatR<T>& logits, const EncodedPair& enc, double scale);

// log p(y | x) = sum_j log p(y_j | x, y_<j), over y and the closing EOS.
template <typename T>
double conditional_log_prob(const LMParams<T>& params, std::span<const Token> prompt,
                            std::span<const Token> response);

// Forward state kept between computing a log-probability and its gradient.
template <typename T>
struct LogProbPass {
  EncodedPair enc;
  ForwardCache<T> cache;
  double log_prob = 0.0;
};

template <typename T>
void log_prob_forward(const LMParams<T>& params, std::span<const Token> prompt,
                      std::span<const Token> response, LogProbPass<T>& pass);

// grad += scale * d log p(y|x) / d theta
template <typename T>
void log_prob_backward(const LMParams<T>& params, const LogProbPass<T>& pass, double scale,
                       std::span<T> grad);

// Mean negative conditional log-likelihood over the batch.
template <typename T>
double sft_loss(const LMParams<T>& params, std::span<const PromptResponsePair> batch);

// Same value as sft_loss; writes its gradient into `grad`.
template <typename T>
double sft_loss_and_grad(const LMParams<T>& params, std::span<const PromptResponsePair> batch,
                         std::span<T> grad);

struct SftHyper {
  double lr = 3e-4;
  int steps = 1000;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
};

LMParams<float> train_sft(const LMParams<float>& init, const Dataset& dataset,
                          const SftHyper& hyper, const StepCallback& on_step = {});

struct DecodeConfig {
  double temperature = 1.0;  // 0 = greedy, ties to the lowest token id
  int max_new_tokens = 64;   // sampled tokens including EOS
  std::uint64_t seed = 0;
};

struct SampleResult {
  Tokens tokens;  // content only, EOS stripped
  bool truncated = false;
};

template <typename T>
SampleResult sample_response(const LMParams<T>& params, std::span<const Token> prompt,
                             const DecodeConfig& decode);

// Chooses the next token from a logits row under `temperature`.
template <typename T>
Token choose_token(const RowVec<T>& logits, double temperature, Rng& rng);

}  // namespace ldalign
