#include "ldalign/lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ldalign/errors.hpp"
#include "ldalign/parallel.hpp"

namespace ldalign {

template <typename T>
LMParams<T>::LMParams(const LMConfig& config)
    : config_(config),
      layout_(TransformerLayout::build(config.shape(), table_, "")),
      values_(table_.total(), T(0)) {}

template <typename T>
LMParams<T> LMParams<T>::random(const LMConfig& config, std::uint64_t seed) {
  LMParams p(config);
  Rng rng(derive_seed({seed, 0x6c6d696e6974ULL}));
  init_transformer<T>(p.layout_, p.values_, rng);
  return p;
}

template <typename T>
MatR<T> forward_logits(const LMParams<T>& params, std::span<const Token> tokens) {
  ForwardCache<T> cache;
  transformer_forward<T>(params.layout(), params.values(), tokens, nullptr, cache);
  return std::move(cache.logits);
}

namespace {

template <typename T>
double log_softmax_at(const MatR<T>& logits, Eigen::Index row, Token target) {
  const auto r = logits.row(row);
  const double mx = static_cast<double>(r.maxCoeff());
  double sum = 0.0;
  for (Eigen::Index j = 0; j < r.size(); ++j) sum += std::exp(static_cast<double>(r(j)) - mx);
  return static_cast<double>(r(target)) - mx - std::log(sum);
}

}  // namespace

template <typename T>
double response_log_prob(const MatR<T>& logits, const EncodedPair& enc) {
  double total = 0.0;
  for (std::size_t t = enc.response_begin; t < enc.response_end; ++t) {
    total += log_softmax_at(logits, static_cast<Eigen::Index>(t - 1), enc.tokens[t]);
  }
  return total;
}

template <typename T>
void log_prob_forward(const LMParams<T>& params, std::span<const Token> prompt,
                      std::span<const Token> response, LogProbPass<T>& pass) {
  pass.enc = encode_pair(prompt, response, params.config().context_len);
  transformer_forward<T>(params.layout(), params.values(), pass.enc.tokens, nullptr, pass.cache);
  pass.log_prob = response_log_prob(pass.cache.logits, pass.enc);
}

template <typename T>
MatR<T> response_log_prob_dlogits(const MatR<T>& logits, const EncodedPair& enc, double scale) {
  MatR<T> dlogits = MatR<T>::Zero(logits.rows(), logits.cols());
  for (std::size_t t = enc.response_begin; t < enc.response_end; ++t) {
    const auto r = static_cast<Eigen::Index>(t - 1);
    const T mx = logits.row(r).maxCoeff();
    RowVec<T> p = (logits.row(r).array() - mx).exp().matrix();
    p /= p.sum();
    // d log softmax(target) / d logits = onehot(target) - softmax
    dlogits.row(r) = -static_cast<T>(scale) * p;
    dlogits(r, enc.tokens[t]) += static_cast<T>(scale);
  }
  return dlogits;
}

template <typename T>
void log_prob_backward(const LMParams<T>& params, const LogProbPass<T>& pass, double scale,
                       std::span<T> grad) {
  const MatR<T> dlogits = response_log_prob_dlogits(pass.cache.logits, pass.enc, scale);
  transformer_backward<T>(params.layout(), params.values(), pass.enc.tokens, pass.cache,
                          &dlogits, nullptr, grad, nullptr);
}

template <typename T>
double conditional_log_prob(const LMParams<T>& params, std::span<const Token> prompt,
                            std::span<const Token> response) {
  LogProbPass<T> pass;
  log_prob_forward(params, prompt, response, pass);
  return pass.log_prob;
}

template <typename T>
double sft_loss(const LMParams<T>& params, std::span<const PromptResponsePair> batch) {
  if (batch.empty()) throw ConfigError("sft_loss: empty batch");
  std::vector<double> nll(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    nll[i] = -conditional_log_prob(params, batch[i].prompt, batch[i].response);
  });
  return pairwise_sum(std::span<const double>(nll)) / static_cast<double>(batch.size());
}

template <typename T>
double sft_loss_and_grad(const LMParams<T>& params, std::span<const PromptResponsePair> batch,
                         std::span<T> grad) {
  if (batch.empty()) throw ConfigError("sft_loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double total = accumulate_items<T>(batch.size(), grad, [&](std::size_t i, std::span<T> g) {
    LogProbPass<T> pass;
    log_prob_forward(params, batch[i].prompt, batch[i].response, pass);
    log_prob_backward(params, pass, -inv_b, g);
    return -pass.log_prob;
  });
  return total * inv_b;
}

LMParams<float> train_sft(const LMParams<float>& init, const Dataset& dataset,
                          const SftHyper& hyper, const StepCallback& on_step) {
  if (dataset.empty()) throw ConfigError("train_sft: empty dataset");
  if (hyper.steps < 0) throw ConfigError("train_sft: negative step count");
  LMParams<float> params = init;
  if (hyper.steps == 0) return params;
  Adam opt(params.parameter_count(), {hyper.lr, 0.9, 0.999, 1e-8, hyper.grad_clip});
  BatchSampler sampler(dataset.size(), static_cast<std::size_t>(hyper.batch_size), hyper.seed);
  AlignedVector<float> grad(params.parameter_count());
  std::vector<PromptResponsePair> batch;
  for (int step = 0; step < hyper.steps; ++step) {
    batch.clear();
    for (std::size_t i : sampler.next()) batch.push_back(dataset[i]);
    const double loss = sft_loss_and_grad<float>(params, batch, grad);
    if (!std::isfinite(loss) || !all_finite(grad)) {
      throw NonFiniteError("train_sft: non-finite loss or gradient at step " +
                           std::to_string(step) + " (loss=" + std::to_string(loss) + ")");
    }
    opt.step(params.values(), grad);
    if (on_step) on_step(step, loss);
  }
  return params;
}

template <typename T>
Token choose_token(const RowVec<T>& logits, double temperature, Rng& rng) {
  if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
  Eigen::Index best = 0;
  logits.maxCoeff(&best);  // first maximum, i.e. lowest id on ties
  if (temperature == 0.0) return static_cast<Token>(best);
  const double mx = static_cast<double>(logits(best));
  std::vector<double> w(static_cast<std::size_t>(logits.size()));
  double sum = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] = std::exp((static_cast<double>(logits(static_cast<Eigen::Index>(j))) - mx) / temperature);
    sum += w[j];
  }
  double u = uniform01(rng) * sum;
  for (std::size_t j = 0; j < w.size(); ++j) {
    u -= w[j];
    if (u < 0.0) return static_cast<Token>(j);
  }
  return static_cast<Token>(best);
}

template <typename T>
SampleResult sample_response(const LMParams<T>& params, std::span<const Token> prompt,
                             const DecodeConfig& decode) {
  if (decode.temperature < 0.0) throw ConfigError("temperature must be >= 0");
  if (decode.max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  if (prompt.empty()) throw ConfigError("sample_response: empty prompt");
  const int ctx = params.config().context_len;
  const int room = ctx - static_cast<int>(prompt.size()) - 3;
  if (room < 0) throw LengthError("prompt does not fit the context window");
  const int cap = std::min(decode.max_new_tokens, room);

  Rng rng(decode.seed);
  IncrementalDecoder<T> dec(params.layout(), params.values());
  dec.step(kBos);
  for (Token t : prompt) dec.step(t);
  const RowVec<T>* logits = &dec.step(kSep);

  SampleResult out;
  for (int i = 0; i < cap; ++i) {
    const Token next = choose_token(*logits, decode.temperature, rng);
    if (next == kEos) return out;
    out.tokens.push_back(next);
    if (i + 1 < cap) logits = &dec.step(next);
  }
  out.truncated = true;
  return out;
}

template class LMParams<float>;
template class LMParams<double>;

#define LDALIGN_INSTANTIATE_LM(T)                                                           \
  template MatR<T> forward_logits<T>(const LMParams<T>&, std::span<const Token>);          \
  template double response_log_prob<T>(const MatR<T>&, const EncodedPair&);                \
  template MatR<T> response_log_prob_dlogits<T>(const MatR<T>&, const EncodedPair&, double); \
  template double conditional_log_prob<T>(const LMParams<T>&, std::span<const Token>,      \
                                          std::span<const Token>);                        \
  template void log_prob_forward<T>(const LMParams<T>&, std::span<const Token>,            \
                                    std::span<const Token>, LogProbPass<T>&);              \
  template void log_prob_backward<T>(const LMParams<T>&, const LogProbPass<T>&, double,    \
                                     std::span<T>);                                        \
  template double sft_loss<T>(const LMParams<T>&, std::span<const PromptResponsePair>);    \
  template double sft_loss_and_grad<T>(const LMParams<T>&,                                 \
                                       std::span<const PromptResponsePair>, std::span<T>); \
  template Token choose_token<T>(const RowVec<T>&, double, Rng&);                          \
  template SampleResult sample_response<T>(const LMParams<T>&, std::span<const Token>,     \
                                           const DecodeConfig&);

LDALIGN_INSTANTIATE_LM(float)
LDALIGN_INSTANTIATE_LM(double)

}  // namespace ldalign
