#include "ldalign/align.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "ldalign/analysis.hpp"
#include "ldalign/csv.hpp"
#include "ldalign/errors.hpp"
#include "ldalign/model_io.hpp"
#include "ldalign/parallel.hpp"

namespace ldalign {

using json = nlohmann::json;
namespace fs = std::filesystem;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double log_sigmoid(double z) { return -softplus(-z); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double bradley_terry(double r_win, double r_lose) { return sigmoid(r_win - r_lose); }

double margin_from_log_probs(double theta_win, double theta_lose, double ref_win,
                             double ref_lose, double beta) {
  return beta * ((theta_win - ref_win) - (theta_lose - ref_lose));
}

template <typename T>
double implicit_reward_margin(const LMParams<T>& theta, const LMParams<T>& ref,
                              std::span<const Token> prompt, std::span<const Token> win,
                              std::span<const Token> lose, double beta) {
  return margin_from_log_probs(conditional_log_prob(theta, prompt, win),
                               conditional_log_prob(theta, prompt, lose),
                               conditional_log_prob(ref, prompt, win),
                               conditional_log_prob(ref, prompt, lose), beta);
}

template <typename T>
std::vector<RefLogProbs> reference_log_probs(const LMParams<T>& ref,
                                             std::span<const WeightedPreferencePair> batch) {
  std::vector<RefLogProbs> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    out[i].win = conditional_log_prob(ref, batch[i].prompt, batch[i].win);
    out[i].lose = conditional_log_prob(ref, batch[i].prompt, batch[i].lose);
  });
  return out;
}

namespace {

void check_batch(std::span<const WeightedPreferencePair> batch, double beta) {
  if (batch.empty()) throw ConfigError("weighted_dpo_loss: empty batch");
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  for (const auto& p : batch) {
    if (!(p.weight >= 0.0) || !std::isfinite(p.weight)) {
      throw ConfigError("preference weights must be finite and >= 0");
    }
  }
}

}  // namespace

template <typename T>
double weighted_dpo_loss(const LMParams<T>& theta, const LMParams<T>& ref,
                         std::span<const WeightedPreferencePair> batch, double beta) {
  check_batch(batch, beta);
  const auto ref_lp = reference_log_probs(ref, batch);
  std::vector<double> terms(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    const auto& p = batch[i];
    const double z = margin_from_log_probs(conditional_log_prob(theta, p.prompt, p.win),
                                           conditional_log_prob(theta, p.prompt, p.lose),
                                           ref_lp[i].win, ref_lp[i].lose, beta);
    terms[i] = -p.weight * log_sigmoid(z);
  });
  return pairwise_sum(std::span<const double>(terms)) / static_cast<double>(batch.size());
}

template <typename T>
double weighted_dpo_loss_and_grad(const LMParams<T>& theta,
                                  std::span<const WeightedPreferencePair> batch,
                                  std::span<const RefLogProbs> ref_log_probs, double beta,
                                  std::span<T> grad) {
  check_batch(batch, beta);
  if (ref_log_probs.size() != batch.size()) throw ConfigError("reference log-prob count mismatch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double total = accumulate_items<T>(batch.size(), grad, [&](std::size_t i, std::span<T> g) {
    const auto& p = batch[i];
    LogProbPass<T> win, lose;
    log_prob_forward(theta, p.prompt, p.win, win);
    log_prob_forward(theta, p.prompt, p.lose, lose);
    const double z = margin_from_log_probs(win.log_prob, lose.log_prob, ref_log_probs[i].win,
                                           ref_log_probs[i].lose, beta);
    // d(-w log sigma(z))/dz = -w sigma(-z)
    const double coeff = -p.weight * sigmoid(-z) * beta * inv_b;
    if (coeff != 0.0) {
      log_prob_backward(theta, win, coeff, g);
      log_prob_backward(theta, lose, -coeff, g);
    }
    return -p.weight * log_sigmoid(z);
  });
  return total * inv_b;
}

GradientCheckReport check_gradient(const LMParams<double>& theta, const LMParams<double>& ref,
                                   std::span<const WeightedPreferencePair> batch, double beta,
                                   const GradientCheckOptions& options) {
  check_batch(batch, beta);
  if (options.probe_count < 1) throw ConfigError("probe_count must be >= 1");
  const std::size_t n = theta.parameter_count();
  const auto ref_lp = reference_log_probs(ref, batch);
  AlignedVector<double> grad(n, 0.0);
  weighted_dpo_loss_and_grad<double>(theta, batch, ref_lp, beta, grad);
  if (options.corrupt_gradient) options.corrupt_gradient(grad);

  GradientCheckReport rep;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  // Per-pair decomposition into winner / loser log-likelihood gradients.
  std::vector<double> assembled(n, 0.0), assembled_plus(n, 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& p = batch[i];
    LogProbPass<double> win, lose;
    log_prob_forward(theta, p.prompt, p.win, win);
    log_prob_forward(theta, p.prompt, p.lose, lose);
    std::vector<double> g_win(n, 0.0), g_lose(n, 0.0);
    log_prob_backward(theta, win, 1.0, std::span<double>(g_win));
    log_prob_backward(theta, lose, 1.0, std::span<double>(g_lose));
    const double z = margin_from_log_probs(win.log_prob, lose.log_prob, ref_lp[i].win,
                                           ref_lp[i].lose, beta);
    const double c_win = -beta * p.weight * sigmoid(-z) * inv_b;
    const double c_win_plus = -beta * p.weight * sigmoid(z) * inv_b;
    if (c_win > 0.0) rep.descent_direction_ok = false;
    for (std::size_t k = 0; k < n; ++k) {
      assembled[k] += c_win * (g_win[k] - g_lose[k]);
      assembled_plus[k] += c_win_plus * (g_win[k] - g_lose[k]);
    }
  }
  double max_abs = 0.0, max_diff = 0.0;
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < n; ++k) {
    max_abs = std::max(max_abs, std::abs(grad[k]));
    max_diff = std::max(max_diff, std::abs(assembled[k] - grad[k]));
    if (grad[k] != 0.0 || assembled[k] != 0.0) active.push_back(k);
  }
  rep.decomposition_error = max_abs > 0.0 ? max_diff / max_abs : max_diff;

  if (active.empty()) {
    // Zero weights: nothing to probe, the analytic gradient must be exactly 0.
    rep.passed = rep.decomposition_error == 0.0;
    return rep;
  }

  Rng rng(derive_seed({options.seed, 0x70726f6265ULL}));
  const std::size_t probes = std::min<std::size_t>(options.probe_count, active.size());
  for (std::size_t i = 0; i < probes; ++i) {
    const std::size_t j =
        i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(active.size() - i));
    std::swap(active[i], active[std::min(j, active.size() - 1)]);
  }
  active.resize(probes);
  std::sort(active.begin(), active.end());

  auto loss_at = [&](const LMParams<double>& th) {
    std::vector<double> terms(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& p = batch[i];
      const double z = margin_from_log_probs(conditional_log_prob(th, p.prompt, p.win),
                                             conditional_log_prob(th, p.prompt, p.lose),
                                             ref_lp[i].win, ref_lp[i].lose, beta);
      terms[i] = -p.weight * log_sigmoid(z);
    }
    return pairwise_sum(std::span<const double>(terms)) * inv_b;
  };

  const auto rel = [&](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), options.floor});
  };

  LMParams<double> probe = theta;
  for (std::size_t k : active) {
    const double orig = probe.values()[k];
    probe.values()[k] = orig + options.step;
    const double up = loss_at(probe);
    probe.values()[k] = orig - options.step;
    const double down = loss_at(probe);
    probe.values()[k] = orig;
    const double numeric = (up - down) / (2.0 * options.step);
    const double err = rel(grad[k], numeric);
    if (rep.worst_index < 0 || err > rep.max_relative_error) {
      rep.max_relative_error = err;
      rep.worst_index = static_cast<long>(k);
    }
    rep.sigma_plus_z_error = std::max(rep.sigma_plus_z_error, rel(assembled_plus[k], numeric));
    ++rep.probes;
  }
  rep.passed = rep.max_relative_error < options.tolerance && rep.decomposition_error < 1e-9 &&
               rep.descent_direction_ok;
  return rep;
}

double verify_gradient(const LMParams<double>& theta, const LMParams<double>& ref,
                       std::span<const WeightedPreferencePair> batch, double beta,
                       const GradientCheckOptions& options) {
  const GradientCheckReport rep = check_gradient(theta, ref, batch, beta, options);
  if (!rep.passed) {
    throw VerificationError("gradient check failed: max relative error " +
                                format_real(rep.max_relative_error) + " at parameter " +
                                std::to_string(rep.worst_index) + ", decomposition error " +
                                format_real(rep.decomposition_error),
                            rep.worst_index);
  }
  return rep.max_relative_error;
}

json to_json(const IterationReport& r) {
  json j = {{"iteration", r.iteration},
            {"mean_distance", r.mean_distance},
            {"mean_weight", r.mean_weight},
            {"mean_heldout_margin", nullptr},
            {"heldout_fraction_positive", nullptr},
            {"losses", r.losses},
            {"ref_hash", r.ref_hash},
            {"theta_hash", r.theta_hash}};
  if (r.mean_heldout_margin) j["mean_heldout_margin"] = *r.mean_heldout_margin;
  if (r.heldout_fraction_positive) j["heldout_fraction_positive"] = *r.heldout_fraction_positive;
  return j;
}

IterationReport iteration_report_from_json(const json& j) {
  IterationReport r;
  r.iteration = j.at("iteration").get<int>();
  r.mean_distance = j.at("mean_distance").get<double>();
  r.mean_weight = j.at("mean_weight").get<double>();
  if (!j.at("mean_heldout_margin").is_null()) r.mean_heldout_margin = j["mean_heldout_margin"].get<double>();
  if (!j.at("heldout_fraction_positive").is_null()) {
    r.heldout_fraction_positive = j["heldout_fraction_positive"].get<double>();
  }
  r.losses = j.at("losses").get<std::vector<double>>();
  r.ref_hash = j.value("ref_hash", "");
  r.theta_hash = j.value("theta_hash", "");
  return r;
}

std::vector<GenerationRecord> generate_cohort(const LMParams<float>& theta,
                                              const Dataset& dataset, const DecodeConfig& decode,
                                              std::uint64_t seed, int iteration) {
  std::vector<GenerationRecord> out(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    DecodeConfig dc = decode;
    dc.seed = derive_seed({seed, i, static_cast<std::uint64_t>(iteration)});
    const SampleResult s = sample_response(theta, dataset[i].prompt, dc);
    out[i] = {i, s.tokens, s.truncated, iteration, dc.seed};
  });
  return out;
}

std::vector<double> cohort_distances(const GuideParams<float>& guide, const Dataset& dataset,
                                     std::span<const GenerationRecord> generations) {
  if (generations.size() != dataset.size()) {
    throw ConfigError("cohort must hold exactly one generation per pair");
  }
  std::vector<double> s(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    const auto& g = generations[i];
    if (g.pair_index != i) throw ConfigError("cohort generations out of pair order");
    s[i] = latent_distance(guide, dataset[i].prompt, dataset[i].response, g.generated);
  });
  return s;
}

IterationResult align_iteration(const LMParams<float>& theta_prev,
                                const GuideParams<float>& guide, const Dataset& dataset,
                                const Dataset* heldout, const AlignConfig& config,
                                int iteration) {
  if (dataset.empty()) throw ConfigError("align_iteration: empty dataset");
  if (!(config.beta > 0.0)) throw ConfigError("beta must be > 0");
  if (config.steps_per_iteration < 0) throw ConfigError("steps_per_iteration must be >= 0");

  const std::string ref_hash = content_hash(theta_prev.values());
  const std::string guide_hash = content_hash(guide.values());

  // (a) sample the cohort from theta_{t-1}
  auto gens = generate_cohort(theta_prev, dataset, config.decode, config.seed, iteration);

  // (b) distances and cohort-normalized weights under the frozen guide
  const auto s = cohort_distances(guide, dataset, gens);
  auto records = make_distance_records(s, iteration);

  std::vector<WeightedPreferencePair> pairs(dataset.size());
  std::vector<double> weights(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    pairs[i] = {dataset[i].prompt, dataset[i].response, gens[i].generated, records[i].weight};
    weights[i] = records[i].weight;
  }
  const std::string weights_hash = content_hash(std::span<const double>(weights));

  IterationReport report;
  report.iteration = iteration;
  report.mean_distance = pairwise_sum(std::span<const double>(s)) / static_cast<double>(s.size());
  report.mean_weight =
      pairwise_sum(std::span<const double>(weights)) / static_cast<double>(weights.size());
  report.ref_hash = ref_hash;

  // (c) optimize the weighted objective with ref = theta_{t-1}
  const auto ref_lp = reference_log_probs(theta_prev, std::span<const WeightedPreferencePair>(pairs));
  LMParams<float> theta = theta_prev;
  if (config.steps_per_iteration > 0) {
    Adam opt(theta.parameter_count(), {config.lr, 0.9, 0.999, 1e-8, config.grad_clip});
    BatchSampler sampler(pairs.size(), static_cast<std::size_t>(config.batch_size),
                         derive_seed({config.seed, static_cast<std::uint64_t>(iteration), 0x616c6967ULL}));
    AlignedVector<float> grad(theta.parameter_count());
    std::vector<WeightedPreferencePair> batch;
    std::vector<RefLogProbs> batch_ref;
    for (int step = 0; step < config.steps_per_iteration; ++step) {
      batch.clear();
      batch_ref.clear();
      for (std::size_t i : sampler.next()) {
        batch.push_back(pairs[i]);
        batch_ref.push_back(ref_lp[i]);
      }
      const double loss =
          weighted_dpo_loss_and_grad<float>(theta, batch, batch_ref, config.beta, grad);
      if (!std::isfinite(loss) || !all_finite(grad)) {
        throw NonFiniteError("align iteration " + std::to_string(iteration) +
                             ": non-finite loss at step " + std::to_string(step));
      }
      opt.step(theta.values(), grad);
      report.losses.push_back(loss);
    }
  }

  if (content_hash(theta_prev.values()) != ref_hash ||
      content_hash(std::span<const double>(weights)) != weights_hash ||
      content_hash(guide.values()) != guide_hash) {
    throw VerificationError("reference model, guide or weights changed during iteration " +
                            std::to_string(iteration));
  }
  report.theta_hash = content_hash(theta.values());

  if (heldout && !heldout->empty()) {
    Dataset subset = *heldout;
    if (config.heldout_eval_pairs > 0 &&
        subset.pairs.size() > static_cast<std::size_t>(config.heldout_eval_pairs)) {
      subset.pairs.resize(static_cast<std::size_t>(config.heldout_eval_pairs));
    }
    DecodeConfig dc = config.decode;
    dc.seed = derive_seed({config.seed, static_cast<std::uint64_t>(iteration), 0x68656c64ULL});
    const MarginReport m = reward_margin_eval(theta, theta_prev, subset, config.beta, dc);
    report.mean_heldout_margin = m.mean_margin;
    report.heldout_fraction_positive = m.fraction_positive;
  }

  return {std::move(theta), std::move(report), std::move(gens), std::move(records)};
}

namespace {

// Re-raises the active exception with the iteration index prepended, keeping
// its type so callers can still tell error classes apart.
[[noreturn]] void rethrow_with_iteration(int t) {
  const std::string prefix = "LD-Align iteration " + std::to_string(t) + " failed: ";
  try {
    throw;
  } catch (const VerificationError& e) {
    throw VerificationError(prefix + e.what(), e.offending_index());
  } catch (const DegenerateCohortError& e) {
    throw DegenerateCohortError(prefix + e.what());
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(prefix + e.what());
  } catch (const LengthError& e) {
    throw LengthError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const IoError& e) {
    throw IoError(prefix + e.what());
  } catch (const std::exception& e) {
    throw Error(prefix + e.what());
  }
}

void persist_iteration(const std::string& out_dir, const IterationResult& r) {
  if (out_dir.empty()) return;
  const fs::path root(out_dir);
  const int t = r.report.iteration;
  for (const char* sub : {"checkpoints", "reports", "metrics"}) fs::create_directories(root / sub);
  save_lm((root / "checkpoints" / ("align_iter_" + std::to_string(t))).string(), r.theta);
  {
    const fs::path p = root / "reports" / ("iteration_" + std::to_string(t) + ".json");
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    out << to_json(r.report).dump(2) << '\n';
  }
  write_distance_csv((root / "metrics" / "distances.csv").string(), r.distances);
  std::vector<MetricRecord> losses;
  for (std::size_t i = 0; i < r.report.losses.size(); ++i) {
    losses.push_back({"align", t, static_cast<int>(i), r.report.losses[i]});
  }
  emit_metrics(losses, (root / "metrics" / "align_loss.csv").string());
}

}  // namespace

LdAlignResult run_ld_align_with_guide(const LMParams<float>& theta0,
                                      const GuideParams<float>& guide, const Dataset& dataset,
                                      const Dataset* heldout, const AlignConfig& config,
                                      const std::string& out_dir) {
  if (config.iterations < 0) throw ConfigError("iterations must be >= 0");
  LdAlignResult result{theta0, guide, {}, {}, std::nullopt};
  for (int t = 1; t <= config.iterations; ++t) {
    try {
      IterationResult it = align_iteration(result.theta, guide, dataset, heldout, config, t);
      persist_iteration(out_dir, it);
      result.theta = std::move(it.theta);
      result.reports.push_back(std::move(it.report));
    } catch (...) {
      rethrow_with_iteration(t);
    }
  }
  if (config.iterations > 0) {
    const auto closing = generate_cohort(result.theta, dataset, config.decode, config.seed,
                                         config.iterations + 1);
    const auto s = cohort_distances(guide, dataset, closing);
    result.final_mean_distance =
        pairwise_sum(std::span<const double>(s)) / static_cast<double>(s.size());
  }
  return result;
}

LdAlignResult run_ld_align(const LMParams<float>& theta0, const Dataset& dataset,
                           const Dataset* heldout, const AlignConfig& config,
                           const LdAlignOptions& options) {
  if (config.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (config.iterations == 0) return {theta0, GuideParams<float>(options.guide_config), {}, {}, {}};
  auto gens = generate_cohort(theta0, dataset, config.decode, config.seed, 0);
  const auto init = GuideParams<float>::random(options.guide_config, options.guide_hyper.seed);
  GuideParams<float> guide = train_guide(init, dataset, gens, options.guide_hyper);
  if (!options.out_dir.empty()) {
    fs::create_directories(fs::path(options.out_dir) / "checkpoints");
    save_guide((fs::path(options.out_dir) / "checkpoints" / "guide").string(), guide);
    save_generations(gens, (fs::path(options.out_dir) / "generations_iter0.jsonl").string());
  }
  LdAlignResult result =
      run_ld_align_with_guide(theta0, guide, dataset, heldout, config, options.out_dir);
  result.initial_generations = std::move(gens);
  return result;
}

#define LDALIGN_INSTANTIATE_ALIGN(T)                                                           \
  template double implicit_reward_margin<T>(const LMParams<T>&, const LMParams<T>&,           \
                                            std::span<const Token>, std::span<const Token>,   \
                                            std::span<const Token>, double);                  \
  template std::vector<RefLogProbs> reference_log_probs<T>(                                   \
      const LMParams<T>&, std::span<const WeightedPreferencePair>);                           \
  template double weighted_dpo_loss<T>(const LMParams<T>&, const LMParams<T>&,                \
                                       std::span<const WeightedPreferencePair>, double);      \
  template double weighted_dpo_loss_and_grad<T>(const LMParams<T>&,                           \
                                                std::span<const WeightedPreferencePair>,      \
                                                std::span<const RefLogProbs>, double,         \
                                                std::span<T>);

LDALIGN_INSTANTIATE_ALIGN(float)
LDALIGN_INSTANTIATE_ALIGN(double)

}  // namespace ldalign
