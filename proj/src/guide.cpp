#include "ldalign/guide.hpp"

#include <cmath>
#include <map>

#include "ldalign/csv.hpp"
#include "ldalign/errors.hpp"
#include "ldalign/parallel.hpp"

namespace ldalign {

void GuideConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  encoder.validate();
  decoder.validate();
  if (encoder.vocab_size != kVocabSize || decoder.vocab_size != kVocabSize) {
    throw ConfigError("guide must share the byte-level vocabulary");
  }
}

double latent_l2(const LatentVector& a, const LatentVector& b) {
  if (a.dim() != b.dim()) throw ConfigError("latent dimension mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double d = a.values[i] - b.values[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

template <typename T>
GuideParams<T>::GuideParams(const GuideConfig& config) : config_(config) {
  config.validate();
  TransformerShape enc = config.encoder.shape();
  enc.with_head = false;
  encoder_ = TransformerLayout::build(enc, table_, "encoder.");
  decoder_ = TransformerLayout::build(config.decoder.shape(), table_, "decoder.");
  const std::size_t k = config.latent_dim;
  pool_w_ = table_.add("pool.weight", {static_cast<std::size_t>(config.encoder.d_model), k});
  pool_b_ = table_.add("pool.bias", {k});
  latent_w_ = table_.add("latent.weight", {k, static_cast<std::size_t>(config.decoder.d_model)});
  latent_b_ = table_.add("latent.bias", {static_cast<std::size_t>(config.decoder.d_model)});
  values_.assign(table_.total(), T(0));
}

template <typename T>
GuideParams<T> GuideParams<T>::random(const GuideConfig& config, std::uint64_t seed) {
  GuideParams g(config);
  Rng rng(derive_seed({seed, 0x6775696465ULL}));
  init_transformer<T>(g.encoder_, g.values_, rng);
  init_transformer<T>(g.decoder_, g.values_, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto fill = [&](std::size_t off, std::size_t n, double stddev) {
    for (std::size_t i = 0; i < n; ++i) g.values_[off + i] = static_cast<T>(stddev * normal(rng));
  };
  const int k = config.latent_dim;
  fill(g.pool_w_, static_cast<std::size_t>(config.encoder.d_model) * k,
       1.0 / std::sqrt(config.encoder.d_model));
  fill(g.latent_w_, static_cast<std::size_t>(k) * config.decoder.d_model, 1.0 / std::sqrt(k));
  return g;
}

namespace {

template <typename T>
using ConstMap = Eigen::Map<const MatR<T>>;
template <typename T>
using ConstRow = Eigen::Map<const RowVec<T>>;

// Encoder forward state for one (x, y).
template <typename T>
struct EncoderPass {
  EncodedPair enc;
  ForwardCache<T> cache;
  RowVec<T> pooled;
  RowVec<T> latent;
};

template <typename T>
void encoder_forward(const GuideParams<T>& g, std::span<const Token> prompt,
                     std::span<const Token> response, EncoderPass<T>& pass) {
  const auto& cfg = g.config();
  pass.enc = encode_pair(prompt, response, cfg.encoder.context_len);
  transformer_forward<T>(g.encoder(), g.values(), pass.enc.tokens, nullptr, pass.cache);
  const auto begin = static_cast<Eigen::Index>(pass.enc.response_begin);
  const auto count = static_cast<Eigen::Index>(pass.enc.response_length());
  pass.pooled = pass.cache.hidden.middleRows(begin, count).colwise().mean();
  const auto p = g.values();
  pass.latent = pass.pooled * ConstMap<T>(p.data() + g.pool_w(), cfg.encoder.d_model, cfg.latent_dim) +
                ConstRow<T>(p.data() + g.pool_b(), cfg.latent_dim);
}

// Decoder input: [BOS] x [SEP] [LAT] y [EOS]; the LAT slot holds a PAD id
// whose embedding is replaced by the latent image.
struct DecoderSequence {
  EncodedPair enc;
  int latent_position = 0;
};

DecoderSequence decoder_sequence(std::span<const Token> prompt, std::span<const Token> response,
                                 int context_len) {
  if (context_len < 2) throw LengthError("decoder context too small");
  DecoderSequence seq;
  seq.enc = encode_pair(prompt, response, static_cast<std::size_t>(context_len - 1));
  seq.latent_position = static_cast<int>(seq.enc.response_begin);
  seq.enc.tokens.insert(seq.enc.tokens.begin() + seq.latent_position, kPad);
  ++seq.enc.response_begin;
  ++seq.enc.response_end;
  return seq;
}

template <typename T>
struct DecoderPass {
  DecoderSequence seq;
  RowVec<T> latent;
  RowVec<T> injected;
  ForwardCache<T> cache;
  double log_prob = 0.0;
};

template <typename T>
void decoder_forward(const GuideParams<T>& g, std::span<const Token> prompt,
                     const RowVec<T>& latent, std::span<const Token> response,
                     DecoderPass<T>& pass) {
  const auto& cfg = g.config();
  if (latent.size() != cfg.latent_dim) throw ConfigError("latent dimension mismatch");
  const auto p = g.values();
  pass.seq = decoder_sequence(prompt, response, cfg.decoder.context_len);
  pass.latent = latent;
  pass.injected = latent * ConstMap<T>(p.data() + g.latent_w(), cfg.latent_dim, cfg.decoder.d_model) +
                  ConstRow<T>(p.data() + g.latent_b(), cfg.decoder.d_model);
  InjectedEmbedding<T> inj{pass.seq.latent_position,
                           std::span<const T>(pass.injected.data(), pass.injected.size())};
  transformer_forward<T>(g.decoder(), p, pass.seq.enc.tokens, &inj, pass.cache);
  pass.log_prob = response_log_prob(pass.cache.logits, pass.seq.enc);
}

// grad += scale * d log p / d(decoder params, latent map); returns d log p / d h (scaled).
template <typename T>
RowVec<T> decoder_backward(const GuideParams<T>& g, const DecoderPass<T>& pass, double scale,
                           std::span<T> grad) {
  const auto& cfg = g.config();
  const int k = cfg.latent_dim, dd = cfg.decoder.d_model;
  const MatR<T> dlogits = response_log_prob_dlogits(pass.cache.logits, pass.seq.enc, scale);
  RowVec<T> d_inj = RowVec<T>::Zero(dd);
  transformer_backward<T>(g.decoder(), g.values(), pass.seq.enc.tokens, pass.cache, &dlogits,
                          nullptr, grad, &d_inj);
  Eigen::Map<MatR<T>>(grad.data() + g.latent_w(), k, dd).noalias() +=
      pass.latent.transpose() * d_inj;
  Eigen::Map<RowVec<T>>(grad.data() + g.latent_b(), dd) += d_inj;
  return d_inj * ConstMap<T>(g.values().data() + g.latent_w(), k, dd).transpose();
}

template <typename T>
void encoder_backward(const GuideParams<T>& g, const EncoderPass<T>& pass,
                      const RowVec<T>& d_latent, std::span<T> grad) {
  const auto& cfg = g.config();
  const int k = cfg.latent_dim, de = cfg.encoder.d_model;
  Eigen::Map<MatR<T>>(grad.data() + g.pool_w(), de, k).noalias() +=
      pass.pooled.transpose() * d_latent;
  Eigen::Map<RowVec<T>>(grad.data() + g.pool_b(), k) += d_latent;
  const RowVec<T> d_pooled =
      d_latent * ConstMap<T>(g.values().data() + g.pool_w(), de, k).transpose();
  const auto begin = static_cast<Eigen::Index>(pass.enc.response_begin);
  const auto count = static_cast<Eigen::Index>(pass.enc.response_length());
  MatR<T> d_hidden = MatR<T>::Zero(pass.cache.length, de);
  d_hidden.middleRows(begin, count).rowwise() = d_pooled / static_cast<T>(count);
  transformer_backward<T>(g.encoder(), g.values(), pass.enc.tokens, pass.cache, nullptr,
                          &d_hidden, grad, nullptr);
}

}  // namespace

template <typename T>
LatentVector encode(const GuideParams<T>& guide, std::span<const Token> prompt,
                    std::span<const Token> response) {
  EncoderPass<T> pass;
  encoder_forward(guide, prompt, response, pass);
  LatentVector h;
  h.values.assign(pass.latent.data(), pass.latent.data() + pass.latent.size());
  return h;
}

template <typename T>
double decode_log_prob(const GuideParams<T>& guide, std::span<const Token> prompt,
                       const LatentVector& latent, std::span<const Token> response) {
  RowVec<T> h(static_cast<Eigen::Index>(latent.dim()));
  for (std::size_t i = 0; i < latent.dim(); ++i) h(static_cast<Eigen::Index>(i)) = static_cast<T>(latent.values[i]);
  DecoderPass<T> pass;
  decoder_forward(guide, prompt, h, response, pass);
  return pass.log_prob;
}

template <typename T>
double reconstruction_log_prob_and_grad(const GuideParams<T>& guide,
                                        std::span<const Token> prompt,
                                        std::span<const Token> response, double scale,
                                        std::span<T> grad) {
  EncoderPass<T> enc;
  encoder_forward(guide, prompt, response, enc);
  DecoderPass<T> dec;
  decoder_forward(guide, prompt, enc.latent, response, dec);
  if (!grad.empty()) {
    const RowVec<T> d_latent = decoder_backward(guide, dec, scale, grad);
    encoder_backward(guide, enc, d_latent, grad);
  }
  return dec.log_prob;
}

template <typename T>
double guide_loss(const GuideParams<T>& guide, std::span<const GuideTriple> batch) {
  if (batch.empty()) throw ConfigError("guide_loss: empty batch");
  std::vector<double> terms(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    const auto& tr = batch[i];
    const double gold =
        decode_log_prob(guide, tr.prompt, encode(guide, tr.prompt, tr.gold), tr.gold);
    const double gen = decode_log_prob(guide, tr.prompt, encode(guide, tr.prompt, tr.generated),
                                       tr.generated);
    terms[i] = -(gold + gen);
  });
  return pairwise_sum(std::span<const double>(terms)) / static_cast<double>(batch.size());
}

template <typename T>
double guide_loss_and_grad(const GuideParams<T>& guide, std::span<const GuideTriple> batch,
                           std::span<T> grad) {
  if (batch.empty()) throw ConfigError("guide_loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double total = accumulate_items<T>(batch.size(), grad, [&](std::size_t i, std::span<T> g) {
    const auto& tr = batch[i];
    const double gold = reconstruction_log_prob_and_grad(guide, tr.prompt, tr.gold, -inv_b, g);
    const double gen =
        reconstruction_log_prob_and_grad(guide, tr.prompt, tr.generated, -inv_b, g);
    return -(gold + gen);
  });
  return total * inv_b;
}

std::vector<GuideTriple> make_guide_triples(const Dataset& dataset,
                                            std::span<const GenerationRecord> generations) {
  std::vector<const GenerationRecord*> by_pair(dataset.size(), nullptr);
  for (const auto& r : generations) {
    if (r.pair_index >= dataset.size()) {
      throw ConfigError("generation refers to pair " + std::to_string(r.pair_index) +
                        " outside the dataset");
    }
    if (by_pair[r.pair_index]) {
      throw ConfigError("duplicate generation for pair " + std::to_string(r.pair_index));
    }
    by_pair[r.pair_index] = &r;
  }
  std::vector<GuideTriple> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!by_pair[i]) throw ConfigError("missing generation for pair " + std::to_string(i));
    out.push_back({dataset[i].prompt, dataset[i].response, by_pair[i]->generated});
  }
  return out;
}

GuideParams<float> train_guide(const GuideParams<float>& init, const Dataset& dataset,
                               std::span<const GenerationRecord> generations,
                               const GuideHyper& hyper, const StepCallback& on_step) {
  if (dataset.empty()) throw ConfigError("train_guide: empty dataset");
  if (hyper.steps < 0) throw ConfigError("train_guide: negative step count");
  const auto triples = make_guide_triples(dataset, generations);
  GuideParams<float> guide = init;
  if (hyper.steps == 0) return guide;
  Adam opt(guide.parameter_count(), {hyper.lr, 0.9, 0.999, 1e-8, hyper.grad_clip});
  BatchSampler sampler(triples.size(), static_cast<std::size_t>(hyper.batch_size), hyper.seed);
  AlignedVector<float> grad(guide.parameter_count());
  std::vector<GuideTriple> batch;
  for (int step = 0; step < hyper.steps; ++step) {
    batch.clear();
    for (std::size_t i : sampler.next()) batch.push_back(triples[i]);
    const double loss = guide_loss_and_grad<float>(guide, batch, grad);
    if (!std::isfinite(loss) || !all_finite(grad)) {
      throw NonFiniteError("train_guide: non-finite loss or gradient at step " +
                           std::to_string(step) + " (loss=" + std::to_string(loss) + ")");
    }
    opt.step(guide.values(), grad);
    if (on_step) on_step(step, loss);
  }
  return guide;
}

template <typename T>
double latent_distance(const GuideParams<T>& guide, std::span<const Token> prompt,
                       std::span<const Token> response_a, std::span<const Token> response_b) {
  return latent_l2(encode(guide, prompt, response_a), encode(guide, prompt, response_b));
}

double distance_expectation(std::span<const double> distances) {
  if (distances.empty()) throw ConfigError("distance_expectation: empty cohort");
  for (double s : distances) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw ConfigError("distance_expectation: distances must be finite and >= 0");
    }
  }
  const double mean = pairwise_sum(distances) / static_cast<double>(distances.size());
  if (mean == 0.0) {
    throw DegenerateCohortError(
        "all latent distances are zero: the policy already matches the gold responses");
  }
  return mean;
}

std::vector<double> normalized_weights(std::span<const double> distances) {
  const double S = distance_expectation(distances);
  std::vector<double> w(distances.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = distances[i] / S;
  return w;
}

std::vector<DistanceRecord> make_distance_records(std::span<const double> distances,
                                                  int iteration) {
  const auto w = normalized_weights(distances);
  std::vector<DistanceRecord> out(distances.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {i, distances[i], w[i], iteration};
  return out;
}

void write_distance_csv(const std::string& path, std::span<const DistanceRecord> records) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(records.size());
  for (const auto& r : records) {
    rows.push_back({std::to_string(r.iteration), std::to_string(r.pair_index), format_real(r.s),
                    format_real(r.weight)});
  }
  append_csv(path, {"iteration", "pair_index", "s", "weight"}, rows);
}

std::vector<DistanceRecord> read_distance_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header != std::vector<std::string>{"iteration", "pair_index", "s", "weight"}) {
    throw IoError("unexpected distance csv header in " + path);
  }
  std::vector<DistanceRecord> out;
  for (const auto& r : t.rows) {
    out.push_back({std::stoul(r[1]), std::stod(r[2]), std::stod(r[3]), std::stoi(r[0])});
  }
  return out;
}

template class GuideParams<float>;
template class GuideParams<double>;

#define LDALIGN_INSTANTIATE_GUIDE(T)                                                          \
  template LatentVector encode<T>(const GuideParams<T>&, std::span<const Token>,             \
                                  std::span<const Token>);                                   \
  template double decode_log_prob<T>(const GuideParams<T>&, std::span<const Token>,          \
                                     const LatentVector&, std::span<const Token>);           \
  template double reconstruction_log_prob_and_grad<T>(                                       \
      const GuideParams<T>&, std::span<const Token>, std::span<const Token>, double,         \
      std::span<T>);                                                                         \
  template double guide_loss<T>(const GuideParams<T>&, std::span<const GuideTriple>);        \
  template double guide_loss_and_grad<T>(const GuideParams<T>&, std::span<const GuideTriple>, \
                                         std::span<T>);                                      \
  template double latent_distance<T>(const GuideParams<T>&, std::span<const Token>,          \
                                     std::span<const Token>, std::span<const Token>);

LDALIGN_INSTANTIATE_GUIDE(float)
LDALIGN_INSTANTIATE_GUIDE(double)

}  // namespace ldalign
