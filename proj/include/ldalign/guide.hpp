#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ldalign/corpus.hpp"
#include "ldalign/lm.hpp"
#include "ldalign/training.hpp"
#include "ldalign/transformer.hpp"

namespace ldalign {

// Guide model T = (phi, psi). The encoder phi reads [BOS] x [SEP] y [EOS],
// mean-pools its final hidden states over the response positions and
// projects them to a latent h in R^d. The decoder psi reads
// [BOS] x [SEP] [LAT] y [EOS], where the LAT slot carries a learned linear
// image of h, and scores y autoregressively.
struct GuideConfig {
  int latent_dim = 16;
  LMConfig encoder{2, 4, 128, 256, kVocabSize};
  LMConfig decoder{2, 4, 128, 257, kVocabSize};

  void validate() const;
  bool operator==(const GuideConfig&) const = default;
};

struct LatentVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  bool operator==(const LatentVector&) const = default;
};

double latent_l2(const LatentVector& a, const LatentVector& b);

template <typename T>
class GuideParams {
 public:
  explicit GuideParams(const GuideConfig& config);  // all zeros
  static GuideParams random(const GuideConfig& config, std::uint64_t seed);

  const GuideConfig& config() const { return config_; }
  const ParamTable& table() const { return table_; }
  const TransformerLayout& encoder() const { return encoder_; }
  const TransformerLayout& decoder() const { return decoder_; }
  std::span<const T> values() const { return values_; }
  std::span<T> values() { return values_; }
  std::size_t parameter_count() const { return values_.size(); }

  // Offsets of the two latent maps.
  std::size_t pool_w() const { return pool_w_; }
  std::size_t pool_b() const { return pool_b_; }
  std::size_t latent_w() const { return latent_w_; }
  std::size_t latent_b() const { return latent_b_; }

  template <typename U>
  GuideParams<U> cast() const {
    GuideParams<U> out(config_);
    std::copy(values_.begin(), values_.end(), out.values().begin());
    return out;
  }

 private:
  GuideConfig config_;
  ParamTable table_;
  TransformerLayout encoder_, decoder_;
  std::size_t pool_w_ = 0, pool_b_ = 0, latent_w_ = 0, latent_b_ = 0;
  AlignedVector<T> values_;
};

// h = phi(x, y)
template <typename T>
LatentVector encode(const GuideParams<T>& guide, std::span<const Token> prompt,
                    std::span<const Token> response);

// log p_psi(y | x, h)
template <typename T>
double decode_log_prob(const GuideParams<T>& guide, std::span<const Token> prompt,
                       const LatentVector& latent, std::span<const Token> response);

// One (x, y, y') training triple: gold and generated responses for a prompt.
struct GuideTriple {
  Tokens prompt;
  Tokens gold;
  Tokens generated;
};

// Mean over the batch of
//   -[log p_psi(y | x, phi(x, y)) + log p_psi(y' | x, phi(x, y'))].
template <typename T>
double guide_loss(const GuideParams<T>& guide, std::span<const GuideTriple> batch);

template <typename T>
double guide_loss_and_grad(const GuideParams<T>& guide, std::span<const GuideTriple> batch,
                           std::span<T> grad);

// -log p_psi(y | x, phi(x, y)) and its gradient scaled by `scale`; exposed
// for the reconstruction-term identity and gradient checks.
template <typename T>
double reconstruction_log_prob_and_grad(const GuideParams<T>& guide,
                                        std::span<const Token> prompt,
                                        std::span<const Token> response, double scale,
                                        std::span<T> grad);

struct GuideHyper {
  double lr = 3e-4;
  int steps = 1000;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
};

// Pairs dataset[i] with the generation whose pair_index is i. Throws
// ConfigError unless there is exactly one generation per pair.
std::vector<GuideTriple> make_guide_triples(const Dataset& dataset,
                                            std::span<const GenerationRecord> generations);

GuideParams<float> train_guide(const GuideParams<float>& init, const Dataset& dataset,
                               std::span<const GenerationRecord> generations,
                               const GuideHyper& hyper, const StepCallback& on_step = {});

// s_phi(x, y, y') = || phi(x, y) - phi(x, y') ||_2
template <typename T>
double latent_distance(const GuideParams<T>& guide, std::span<const Token> prompt,
                       std::span<const Token> response_a, std::span<const Token> response_b);

// S_phi: arithmetic mean of a cohort of distances. Throws ConfigError on an
// empty or negative cohort, DegenerateCohortError when every distance is 0.
double distance_expectation(std::span<const double> distances);

// s / S_phi for every member of the cohort (mean 1).
std::vector<double> normalized_weights(std::span<const double> distances);

struct DistanceRecord {
  std::size_t pair_index = 0;
  double s = 0.0;
  double weight = 0.0;
  int iteration = 0;

  bool operator==(const DistanceRecord&) const = default;
};

std::vector<DistanceRecord> make_distance_records(std::span<const double> distances,
                                                  int iteration);

// CSV columns: iteration,pair_index,s,weight. Appends when the file exists.
void write_distance_csv(const std::string& path, std::span<const DistanceRecord> records);
std::vector<DistanceRecord> read_distance_csv(const std::string& path);

}  // namespace ldalign
