#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldalign/corpus.hpp"
#include "ldalign/guide.hpp"
#include "ldalign/lm.hpp"

namespace ldalign {

// softplus(x) = log(1 + e^x), overflow-free.
double softplus(double x);
// log sigma(z) = -softplus(-z)
double log_sigmoid(double z);
double sigmoid(double z);

// P(win beats lose) = e^{r_win} / (e^{r_win} + e^{r_lose}), in logistic form.
double bradley_terry(double r_win, double r_lose);

// Gold response (winner) against a policy sample (loser), with its
// normalized latent-distance weight.
struct WeightedPreferencePair {
  Tokens prompt;
  Tokens win;
  Tokens lose;
  double weight = 1.0;
};

// beta * [(theta_win - ref_win) - (theta_lose - ref_lose)], all log-probs.
double margin_from_log_probs(double theta_win, double theta_lose, double ref_win,
                             double ref_lose, double beta);

template <typename T>
double implicit_reward_margin(const LMParams<T>& theta, const LMParams<T>& ref,
                              std::span<const Token> prompt, std::span<const Token> win,
                              std::span<const Token> lose, double beta);

// log p_ref of the winner and loser of one pair; fixed for a whole iteration.
struct RefLogProbs {
  double win = 0.0;
  double lose = 0.0;
};

template <typename T>
std::vector<RefLogProbs> reference_log_probs(const LMParams<T>& ref,
                                             std::span<const WeightedPreferencePair> batch);

// mean_i  -w_i * log sigma(z_i)
template <typename T>
double weighted_dpo_loss(const LMParams<T>& theta, const LMParams<T>& ref,
                         std::span<const WeightedPreferencePair> batch, double beta);

// Same loss from precomputed reference log-probs; writes d loss / d theta to
// `grad`. For each pair
//   grad_i = -(beta * w_i * sigma(-z_i) / B) * (grad log p(win) - grad log p(lose)).
template <typename T>
double weighted_dpo_loss_and_grad(const LMParams<T>& theta,
                                  std::span<const WeightedPreferencePair> batch,
                                  std::span<const RefLogProbs> ref_log_probs, double beta,
                                  std::span<T> grad);

struct GradientCheckOptions {
  int probe_count = 64;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-8;
  std::uint64_t seed = 0;
  // Test hook: tampers with the analytic gradient before comparison.
  std::function<void(std::span<double>)> corrupt_gradient;
};

struct GradientCheckReport {
  double max_relative_error = 0.0;
  long worst_index = -1;
  int probes = 0;
  // max |assembled - analytic| / max |analytic| for the per-pair
  // decomposition into log-likelihood gradients of winner and loser.
  double decomposition_error = 0.0;
  // Every pair's coefficient on grad log p(win) is <= 0 and on
  // grad log p(lose) is >= 0, so descent raises the winner and lowers the loser.
  bool descent_direction_ok = true;
  // Relative error when the scaling factor is sigma(z) instead of sigma(-z).
  double sigma_plus_z_error = 0.0;
  bool passed = false;
};

// Compares the analytic gradient with central finite differences at
// probe_count parameters drawn from those with a nonzero analytic gradient.
GradientCheckReport check_gradient(const LMParams<double>& theta, const LMParams<double>& ref,
                                   std::span<const WeightedPreferencePair> batch, double beta,
                                   const GradientCheckOptions& options = {});

// check_gradient that throws VerificationError (with the offending parameter
// index) on failure; returns the max relative error.
double verify_gradient(const LMParams<double>& theta, const LMParams<double>& ref,
                       std::span<const WeightedPreferencePair> batch, double beta,
                       const GradientCheckOptions& options = {});

struct AlignConfig {
  double beta = 0.1;
  int iterations = 3;
  double lr = 1e-4;
  int steps_per_iteration = 100;
  int batch_size = 16;
  double grad_clip = 1.0;
  DecodeConfig decode{1.0, 64, 0};
  std::uint64_t seed = 0;
  // Heldout prompts used for the margin diagnostic (0 = all).
  int heldout_eval_pairs = 0;
};

struct IterationReport {
  int iteration = 0;
  double mean_distance = 0.0;  // cohort sampled from theta_{t-1}
  double mean_weight = 0.0;
  std::optional<double> mean_heldout_margin;
  std::optional<double> heldout_fraction_positive;
  std::vector<double> losses;
  std::string ref_hash;
  std::string theta_hash;
};

nlohmann::json to_json(const IterationReport& report);
IterationReport iteration_report_from_json(const nlohmann::json& j);

// y'_i ~ p_theta(. | x_i) for every pair, with per-pair seeds
// derive_seed(seed, pair_index, iteration).
std::vector<GenerationRecord> generate_cohort(const LMParams<float>& theta,
                                              const Dataset& dataset, const DecodeConfig& decode,
                                              std::uint64_t seed, int iteration);

// Latent distance of every gold/generated pair in a cohort.
std::vector<double> cohort_distances(const GuideParams<float>& guide, const Dataset& dataset,
                                     std::span<const GenerationRecord> generations);

struct IterationResult {
  LMParams<float> theta;
  IterationReport report;
  std::vector<GenerationRecord> generations;
  std::vector<DistanceRecord> distances;
};

// One pass of the alignment loop: sample from theta_prev, weight every pair by
// s / S_phi under the frozen guide, then optimize the weighted loss with
// ref = theta_prev.
IterationResult align_iteration(const LMParams<float>& theta_prev,
                                const GuideParams<float>& guide, const Dataset& dataset,
                                const Dataset* heldout, const AlignConfig& config,
                                int iteration);

struct LdAlignResult {
  LMParams<float> theta;
  GuideParams<float> guide;
  std::vector<IterationReport> reports;
  std::vector<GenerationRecord> initial_generations;
  // Mean distance of a closing cohort sampled from theta_T (absent when T = 0).
  std::optional<double> final_mean_distance;
};

struct LdAlignOptions {
  GuideConfig guide_config;
  GuideHyper guide_hyper;
  // When nonempty: checkpoints/, reports/ and metrics/ are written here.
  std::string out_dir;
};

// Full loop with a guide trained on theta_0 samples first.
LdAlignResult run_ld_align(const LMParams<float>& theta0, const Dataset& dataset,
                           const Dataset* heldout, const AlignConfig& config,
                           const LdAlignOptions& options);

// Full loop with an already trained, frozen guide.
LdAlignResult run_ld_align_with_guide(const LMParams<float>& theta0,
                                      const GuideParams<float>& guide, const Dataset& dataset,
                                      const Dataset* heldout, const AlignConfig& config,
                                      const std::string& out_dir = {});

}  // namespace ldalign
