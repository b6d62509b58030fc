// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance [--out DIR]
//
// DIR receives the pipeline artifacts (checkpoints, reports, metrics) and a
// summary acceptance.json.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldalign/align.hpp"
#include "ldalign/analysis.hpp"
#include "ldalign/checkpoint.hpp"
#include "ldalign/guide.hpp"
#include "ldalign/lm.hpp"
#include "ldalign/model_io.hpp"
#include "ldalign/parallel.hpp"
#include "ldalign/toy_tasks.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ldalign;

namespace {

// Tolerances and thresholds.
constexpr double kGradTol = 1e-4;
constexpr double kGradRuntimeS = 60.0;
constexpr std::size_t kGradMaxParams = 50000;
constexpr double kDpoTol = 1e-10;
constexpr double kRefPointTol = 1e-10;
constexpr double kWeightTol = 1e-9;
constexpr double kTriangleTol = 1e-5;
constexpr int kTriples = 1000;
constexpr std::size_t kMinGuidePairs = 512;
constexpr std::size_t kMinGapPairs = 64;
constexpr double kGuideRuntimeS = 600.0;
constexpr double kMinFractionPositive = 0.6;
constexpr double kMinDistanceDrop = 0.10;
constexpr double kAlignRuntimeS = 900.0;
constexpr double kRandomJudgeTol = 0.05;
constexpr std::size_t kRandomJudgePrompts = 1000;
constexpr double kNormTol = 1e-6;

// Toy pipeline.
const std::vector<std::string> kTasks{"reverse", "uppercase", "copy"};
constexpr std::size_t kCorpusPairs = 2048;
constexpr std::uint64_t kCorpusSeed = 11;
const ToyTaskOptions kToy{4, 7, 2, 3};
constexpr double kHeldoutFraction = 0.125;
constexpr std::uint64_t kSplitSeed = 3;
const LMConfig kLm{2, 4, 64, 64, kVocabSize};
constexpr std::uint64_t kInitSeed = 1;
const SftHyper kSft{3e-3, 1500, 16, 3, 1.0};
const GuideConfig kGuide{8, {1, 4, 64, 64, kVocabSize}, {1, 4, 64, 65, kVocabSize}};
const GuideHyper kGuideHyper{3e-3, 400, 16, 4, 1.0};
const AlignConfig kAlign{0.5, 2, 1e-4, 60, 16, 1.0, {1.0, 40, 5}, 9, 64};
const DecodeConfig kMarginDecode{1.0, 40, 77};
const DecodeConfig kJudgeDecodeA{1.0, 40, 100};
const DecodeConfig kJudgeDecodeB{1.0, 40, 200};

const LMConfig kTinyLm{1, 2, 16, 32, kVocabSize};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

std::vector<WeightedPreferencePair> random_pairs(std::size_t n, std::uint64_t seed,
                                                 bool unit_weights) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> w(0.05, 2.5);
  std::vector<WeightedPreferencePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({oracle::random_tokens(rng, 1 + i % 4), oracle::random_tokens(rng, i % 5),
                   oracle::random_tokens(rng, 1 + (i + 1) % 4), unit_weights ? 1.0 : w(rng)});
  }
  return out;
}

// Weighted DPO loss from the plain-loop transformer.
double naive_weighted_dpo(const LMParams<double>& theta, const LMParams<double>& ref,
                          const std::vector<WeightedPreferencePair>& batch, double beta) {
  long double total = 0;
  for (const auto& p : batch) {
    const long double z =
        static_cast<long double>(beta) *
        ((static_cast<long double>(oracle::naive_log_prob(theta, p.prompt, p.win)) -
          oracle::naive_log_prob(ref, p.prompt, p.win)) -
         (static_cast<long double>(oracle::naive_log_prob(theta, p.prompt, p.lose)) -
          oracle::naive_log_prob(ref, p.prompt, p.lose)));
    const long double sp = z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
    total += static_cast<long double>(p.weight) * sp;
  }
  return static_cast<double>(total / static_cast<long double>(batch.size()));
}

// ---- 1 -------------------------------------------------------------------

Outcome gradient_fidelity() {
  Outcome o{1, "gradient fidelity"};
  const auto t0 = Clock::now();
  const auto theta = LMParams<float>::random(kTinyLm, 101).cast<double>();
  const auto ref = LMParams<float>::random(kTinyLm, 102).cast<double>();
  const auto batch = random_pairs(6, 103, false);
  const double beta = 0.1;
  GradientCheckOptions opt;
  opt.probe_count = 64;
  opt.seed = 104;
  opt.tolerance = kGradTol;
  const double lib_err = verify_gradient(theta, ref, batch, beta, opt);

  // Independent finite differences of the plain-loop loss at 64 parameters
  // with nonzero analytic gradient.
  const auto lps = reference_log_probs(ref, std::span<const WeightedPreferencePair>(batch));
  std::vector<double> grad(theta.parameter_count());
  weighted_dpo_loss_and_grad(theta, std::span<const WeightedPreferencePair>(batch),
                             std::span<const RefLogProbs>(lps), beta, std::span<double>(grad));
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (grad[i] != 0.0) candidates.push_back(i);
  }
  std::mt19937_64 rng(105);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(std::min<std::size_t>(64, candidates.size()));
  double oracle_err = 0.0;
  const double h = 1e-5;
  for (std::size_t idx : candidates) {
    auto plus = theta, minus = theta;
    plus.values()[idx] += h;
    minus.values()[idx] -= h;
    const double fd = (naive_weighted_dpo(plus, ref, batch, beta) -
                       naive_weighted_dpo(minus, ref, batch, beta)) /
                      (2 * h);
    const double rel = std::abs(fd - grad[idx]) / std::max({std::abs(fd), std::abs(grad[idx]), 1e-8});
    oracle_err = std::max(oracle_err, rel);
  }
  const double secs = seconds_since(t0);
  o.pass = theta.parameter_count() <= kGradMaxParams && candidates.size() == 64 &&
           lib_err < kGradTol && oracle_err < kGradTol && secs < kGradRuntimeS;
  o.detail = std::to_string(theta.parameter_count()) + " params, verify_gradient max rel " +
             fmt(lib_err) + ", plain-loop FD max rel " + fmt(oracle_err) + ", " + fmt(secs) + " s";
  return o;
}

// ---- 2 -------------------------------------------------------------------

Outcome dpo_reduction() {
  Outcome o{2, "DPO reduction"};
  const auto theta = LMParams<float>::random(kTinyLm, 201).cast<double>();
  const auto ref = LMParams<float>::random(kTinyLm, 202).cast<double>();
  const auto batch = random_pairs(32, 203, true);
  std::vector<double> pw, pl, rw, rl;
  for (const auto& p : batch) {
    pw.push_back(oracle::naive_log_prob(theta, p.prompt, p.win));
    pl.push_back(oracle::naive_log_prob(theta, p.prompt, p.lose));
    rw.push_back(oracle::naive_log_prob(ref, p.prompt, p.win));
    rl.push_back(oracle::naive_log_prob(ref, p.prompt, p.lose));
  }
  const double expected = oracle::standard_dpo(pw, pl, rw, rl, 0.1);
  const double got = weighted_dpo_loss(theta, ref, std::span<const WeightedPreferencePair>(batch), 0.1);
  const double err = std::abs(got - expected);
  o.pass = err <= kDpoTol;
  o.detail = "32 pairs, |weighted - standard| = " + fmt(err) + " (loss " + fmt(got) + ")";
  return o;
}

// ---- 3 -------------------------------------------------------------------

Outcome reference_point() {
  Outcome o{3, "reference-point identity"};
  const auto theta = LMParams<float>::random(kTinyLm, 301).cast<double>();
  const auto batch = random_pairs(24, 302, false);
  long double wsum = 0;
  for (const auto& p : batch) wsum += p.weight;
  const double expected =
      static_cast<double>(wsum / batch.size() * std::log(static_cast<long double>(2)));
  const std::span<const WeightedPreferencePair> b(batch);
  const double loss = weighted_dpo_loss(theta, theta, b, 0.1);
  const auto lps = reference_log_probs(theta, b);
  std::vector<double> grad(theta.parameter_count());
  const double loss2 = weighted_dpo_loss_and_grad(theta, b, std::span<const RefLogProbs>(lps), 0.1,
                                                  std::span<double>(grad));
  int nonzero = 0;
  for (const auto& p : batch) {
    if (implicit_reward_margin(theta, theta, p.prompt, p.win, p.lose, 0.1) != 0.0) ++nonzero;
  }
  const double err = std::max(std::abs(loss - expected), std::abs(loss2 - expected));
  o.pass = err <= kRefPointTol && nonzero == 0;
  o.detail = "|loss - mean(w) ln 2| = " + fmt(err) + ", nonzero margins " + std::to_string(nonzero);
  return o;
}

// ---- shared toy pipeline ---------------------------------------------------

struct Pipeline {
  Dataset train, heldout;
  LMParams<float> theta0{kLm};
  GuideParams<float> guide{kGuide};  // trained on theta_0 samples (criterion 6)
  double guide_seconds = 0.0;
  LdAlignResult result{LMParams<float>(kLm), GuideParams<float>(kGuide), {}, {}, {}};
  double align_seconds = 0.0;
  double sft_seconds = 0.0;
  fs::path dir;
};

Pipeline build_pipeline(const fs::path& dir) {
  Pipeline p;
  p.dir = dir;
  const Dataset all = make_corpus(kTasks, kCorpusPairs, kCorpusSeed, kToy);
  std::tie(p.train, p.heldout) = split(all, kHeldoutFraction, kSplitSeed);

  auto t0 = Clock::now();
  p.theta0 = train_sft(LMParams<float>::random(kLm, kInitSeed), p.train, kSft);
  p.sft_seconds = seconds_since(t0);
  std::cerr << "sft: " << fmt(p.sft_seconds) << " s, heldout loss "
            << fmt(sft_loss(p.theta0, std::span(p.heldout.pairs))) << "\n";
  save_lm((dir / "checkpoints" / "sft").string(), p.theta0);

  t0 = Clock::now();
  const auto gens = generate_cohort(p.theta0, p.train, kAlign.decode, kAlign.seed, 0);
  p.guide = train_guide(GuideParams<float>::random(kGuide, kGuideHyper.seed), p.train, gens,
                        kGuideHyper);
  p.guide_seconds = seconds_since(t0);
  std::cerr << "guide: " << fmt(p.guide_seconds) << " s\n";

  t0 = Clock::now();
  p.result = run_ld_align(p.theta0, p.train, &p.heldout, kAlign,
                          {kGuide, kGuideHyper, (dir / "align").string()});
  p.align_seconds = seconds_since(t0);
  std::cerr << "run_ld_align: " << fmt(p.align_seconds) << " s\n";
  return p;
}

// ---- 4 -------------------------------------------------------------------

Outcome weight_normalization(const Pipeline& p) {
  Outcome o{4, "weight normalization"};
  const auto records = read_distance_csv((p.dir / "align" / "metrics" / "distances.csv").string());
  std::map<int, std::pair<long double, std::size_t>> by_iter;
  for (const auto& r : records) {
    by_iter[r.iteration].first += r.weight;
    by_iter[r.iteration].second += 1;
  }
  double worst = 0.0;
  bool sizes_ok = by_iter.size() == static_cast<std::size_t>(kAlign.iterations);
  for (const auto& [it, acc] : by_iter) {
    worst = std::max(worst, static_cast<double>(std::abs(acc.first / acc.second - 1.0L)));
    sizes_ok = sizes_ok && acc.second == p.train.size();
  }
  for (const auto& rep : p.result.reports) {
    worst = std::max(worst, std::abs(rep.mean_weight - 1.0));
  }
  o.pass = sizes_ok && worst <= kWeightTol;
  o.detail = std::to_string(by_iter.size()) + " cohorts of " + std::to_string(p.train.size()) +
             ", max |mean weight - 1| = " + fmt(worst);
  return o;
}

// ---- 5 -------------------------------------------------------------------

Outcome distance_properties(const Pipeline& p) {
  Outcome o{5, "distance metric properties"};
  const GuideParams<float>& g = p.result.guide;
  std::mt19937_64 rng(501);
  std::uniform_int_distribution<std::size_t> pick(0, p.heldout.size() - 1);
  std::uniform_int_distribution<std::size_t> len(1, 10);
  int neg = 0, asym = 0, self = 0, indisc = 0;
  double worst_tri = -INFINITY;
  for (int i = 0; i < kTriples; ++i) {
    const auto& pair = p.heldout[pick(rng)];
    Tokens a = pair.response;
    if (i % 2) a = oracle::random_tokens(rng, len(rng));
    const Tokens b = oracle::random_tokens(rng, len(rng));
    const Tokens c = i % 3 ? oracle::random_tokens(rng, len(rng)) : b;
    const double ab = latent_distance(g, pair.prompt, a, b);
    const double ba = latent_distance(g, pair.prompt, b, a);
    const double bc = latent_distance(g, pair.prompt, b, c);
    const double ac = latent_distance(g, pair.prompt, a, c);
    neg += ab < 0 || bc < 0 || ac < 0;
    asym += ab != ba;
    self += latent_distance(g, pair.prompt, a, a) != 0.0;
    // Zero distance exactly when the latents coincide.
    const bool same = encode(g, pair.prompt, a) == encode(g, pair.prompt, b);
    indisc += (ab == 0.0) != same;
    worst_tri = std::max(worst_tri, ac - (ab + bc));
  }
  o.pass = neg == 0 && asym == 0 && self == 0 && indisc == 0 && worst_tri <= kTriangleTol;
  o.detail = std::to_string(kTriples) + " triples: negative " + std::to_string(neg) +
             ", asymmetric " + std::to_string(asym) + ", d(a,a)!=0 " + std::to_string(self) +
             ", indiscernibles " + std::to_string(indisc) + ", max triangle excess " +
             fmt(worst_tri);
  return o;
}

// ---- 6 -------------------------------------------------------------------

Outcome latent_informativeness(const Pipeline& p) {
  Outcome o{6, "latent informativeness"};
  const GuideParams<float>& g = p.guide;
  const std::size_t n = p.heldout.size();
  std::vector<double> gaps(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& pr = p.heldout[i];
    const LatentVector h = encode(g, pr.prompt, pr.response);
    const LatentVector zero{std::vector<double>(h.dim(), 0.0)};
    // NLL(zero) - NLL(true)
    gaps[i] = decode_log_prob(g, pr.prompt, h, pr.response) -
              decode_log_prob(g, pr.prompt, zero, pr.response);
  });
  double mean = 0.0;
  for (double v : gaps) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : gaps) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  const double t = mean / std::sqrt(var / static_cast<double>(n));
  const auto wins = std::count_if(gaps.begin(), gaps.end(), [](double v) { return v > 0; });
  o.pass = p.train.size() >= kMinGuidePairs && n >= kMinGapPairs && mean > 0.0 &&
           p.guide_seconds < kGuideRuntimeS;
  o.detail = std::to_string(p.train.size()) + " training pairs, " + std::to_string(n) +
             " heldout: mean NLL gap " + fmt(mean) + " nats (paired t " + fmt(t) + ", " +
             std::to_string(wins) + " positive), " + fmt(p.guide_seconds) + " s";
  return o;
}

// ---- 7 -------------------------------------------------------------------

Outcome alignment_direction(const Pipeline& p) {
  Outcome o{7, "alignment direction-of-effect"};
  const MarginReport m =
      reward_margin_eval(p.result.theta, p.theta0, p.heldout, kAlign.beta, kMarginDecode);
  const double d0 = p.result.reports.front().mean_distance;
  const double d2 = p.result.final_mean_distance.value_or(INFINITY);
  const double drop = 1.0 - d2 / d0;
  const bool a = !m.degenerate && m.fraction_positive >= kMinFractionPositive;
  const bool b = drop >= kMinDistanceDrop;
  o.pass = a && b && p.align_seconds < kAlignRuntimeS;
  o.detail = std::string("(a) ") + (a ? "ok" : "FAIL") + " fraction-positive " +
             fmt(m.fraction_positive) + " over " + std::to_string(m.margins.size()) +
             " heldout pairs, mean margin " + fmt(m.mean_margin) + "; (b) " + (b ? "ok" : "FAIL") +
             " mean distance " + fmt(d0) + " -> " + fmt(d2) + " (drop " + fmt(100 * drop) +
             "%); " + fmt(p.align_seconds) + " s";
  return o;
}

// ---- 8 -------------------------------------------------------------------

Outcome consistency(const Pipeline& p) {
  Outcome o{8, "consistency analysis"};
  // Oracle and random judges on 1000 fresh prompts; candidates sampled from theta_0.
  const Dataset prompts = make_corpus(kTasks, kRandomJudgePrompts, 801, kToy);
  std::vector<Tokens> a(prompts.size()), b(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    DecodeConfig da = kJudgeDecodeA, db = kJudgeDecodeB;
    da.seed = derive_seed({kJudgeDecodeA.seed, i});
    db.seed = derive_seed({kJudgeDecodeB.seed, i});
    a[i] = sample_response(p.theta0, prompts[i].prompt, da).tokens;
    b[i] = sample_response(p.theta0, prompts[i].prompt, db).tokens;
  });
  const auto& g = p.result.guide;
  const auto oracle_rep = consistency_from_samples(g, prompts, a, b, DistanceOracleJudge());
  const auto random_rep = consistency_from_samples(g, prompts, a, b, RandomJudge(802));
  const auto task_rep = pairwise_consistency(g, p.result.theta, p.heldout, TaskCheckerJudge(),
                                             kJudgeDecodeA, kJudgeDecodeB);
  const bool ok_oracle = oracle_rep.agreements > 0 && oracle_rep.rate == 1.0;
  const bool ok_random = std::abs(random_rep.rate - 0.5) <= kRandomJudgeTol;
  const bool ok_task = task_rep.agreements + task_rep.disagreements > 0 && task_rep.rate > 0.5;
  o.pass = ok_oracle && ok_random && ok_task;
  const auto counts = [](const ConsistencyReport& r) {
    return " (" + std::to_string(r.agreements) + "/" + std::to_string(r.disagreements) + ", " +
           std::to_string(r.ties) + " ties)";
  };
  o.detail = "oracle " + fmt(oracle_rep.rate) + counts(oracle_rep) + "; random " +
             fmt(random_rep.rate) + counts(random_rep) + "; task-checker " + fmt(task_rep.rate) +
             counts(task_rep);
  return o;
}

// ---- 9 -------------------------------------------------------------------

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Relative path -> bytes for every file under dir/checkpoints.
std::map<std::string, std::string> checkpoint_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir / "checkpoints")) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = file_bytes(e.path());
  }
  return out;
}

Outcome determinism(const fs::path& root) {
  Outcome o{9, "determinism and persistence"};
  const LMConfig lm{1, 2, 32, 48, kVocabSize};
  const GuideConfig gc{4, {1, 2, 32, 48, kVocabSize}, {1, 2, 32, 49, kVocabSize}};
  const Dataset all = make_corpus(kTasks, 192, 901, {3, 5, 2, 2});
  const auto [train, held] = split(all, 0.125, 902);
  AlignConfig ac{0.1, 2, 1e-3, 8, 8, 1.0, {1.0, 16, 0}, 903, 8};

  const auto run = [&](const fs::path& dir, std::size_t threads) {
    set_num_threads(threads);
    fs::remove_all(dir);
    const auto theta0 = train_sft(LMParams<float>::random(lm, 904), train, {3e-3, 40, 8, 905, 1.0});
    save_lm((dir / "checkpoints" / "sft").string(), theta0);
    run_ld_align(theta0, train, &held, ac, {gc, {3e-3, 20, 8, 906, 1.0}, dir.string()});
    set_num_threads(0);
  };
  run(root / "a", 1);
  run(root / "b", 3);
  const auto fa = checkpoint_files(root / "a");
  const auto fb = checkpoint_files(root / "b");
  const bool identical = !fa.empty() && fa == fb;

  // Round trip: load every checkpoint, save it again, compare hashes.
  int roundtrips = 0, mismatches = 0;
  for (const auto& e : fs::directory_iterator(root / "a" / "checkpoints")) {
    const std::string src = e.path().string();
    const std::string dst = (root / "roundtrip" / e.path().filename()).string();
    const Checkpoint c = read_checkpoint(src);
    if (c.kind == "lm") {
      const auto m = load_lm(src);
      save_lm(dst, m);
      mismatches += content_hash(m.values()) != c.content_hash;
    } else {
      const auto m = load_guide(src);
      save_guide(dst, m);
      mismatches += content_hash(m.values()) != c.content_hash;
    }
    mismatches += checkpoint_hash(dst) != c.content_hash;
    mismatches += file_bytes(fs::path(dst) / "params.bin") != file_bytes(e.path() / "params.bin");
    ++roundtrips;
  }
  o.pass = identical && roundtrips >= 4 && mismatches == 0;
  o.detail = std::to_string(fa.size()) + " checkpoint files " +
             (identical ? "bitwise identical" : "DIFFER") + " across runs (1 vs 3 threads); " +
             std::to_string(roundtrips) + " round trips, " + std::to_string(mismatches) +
             " hash mismatches";
  return o;
}

// ---- 10 ------------------------------------------------------------------

Outcome brute_force_normalization() {
  Outcome o{10, "brute-force normalization"};
  // Vocabulary restricted to {a, b, EOS}; after two content tokens EOS is
  // forced, so the complete responses are "", a, b, aa, ab, ba, bb.
  const Tokens symbols{'a', 'b'};
  double worst = 0.0;
  for (std::uint64_t seed : {1001, 1002, 1003}) {
    auto p = LMParams<float>::random(kTinyLm, seed).cast<double>();
    const auto& bias = p.table().find("head.bias");
    for (int v = 0; v < kVocabSize; ++v) {
      if (v != 'a' && v != 'b' && v != kEos) p.values()[bias.offset + v] = -1e4;
    }
    const Tokens x{'q', 'r'};
    long double total = 0;
    for (const Tokens& y : std::vector<Tokens>{{}, {'a'}, {'b'}}) {
      total += std::exp(static_cast<long double>(conditional_log_prob(p, x, y)));
    }
    for (Token u : symbols) {
      for (Token w : symbols) {
        const Tokens y{u, w};
        // Forced EOS: drop the model's own EOS factor at position 3.
        const auto enc = encode_pair(x, y, kTinyLm.context_len);
        const auto logits = forward_logits(p, enc.tokens);
        const auto& row = logits.row(enc.response_end - 2);
        const double log_eos =
            oracle::log_softmax_at(std::vector<double>(row.begin(), row.end()), kEos);
        total += std::exp(static_cast<long double>(conditional_log_prob(p, x, y) - log_eos));
      }
    }
    worst = std::max(worst, static_cast<double>(std::abs(total - 1.0L)));
  }
  o.pass = worst <= kNormTol;
  o.detail = "3 random models, max |sum p(y) - 1| = " + fmt(worst);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path out = "acceptance_run";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) {
      out = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--out DIR]\n";
      return 2;
    }
  }
  fs::remove_all(out);
  fs::create_directories(out);
  const auto t0 = Clock::now();

  std::vector<Outcome> outcomes;
  const auto attempt = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    try {
      outcomes.push_back(fn());
    } catch (const std::exception& e) {
      outcomes.push_back({id, name, false, std::string("exception: ") + e.what()});
    }
    const Outcome& o = outcomes.back();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << o.id << ": " << o.name << " -- "
              << o.detail << std::endl;
  };

  attempt(1, "gradient fidelity", gradient_fidelity);
  attempt(2, "DPO reduction", dpo_reduction);
  attempt(3, "reference-point identity", reference_point);

  std::optional<Pipeline> pipe;
  std::string pipe_error;
  try {
    pipe = build_pipeline(out / "pipeline");
  } catch (const std::exception& e) {
    pipe_error = std::string("pipeline failed: ") + e.what();
  }
  const auto with_pipe = [&](int id, const std::string& name, Outcome (*fn)(const Pipeline&)) {
    attempt(id, name, [&]() -> Outcome {
      if (!pipe) return {id, name, false, pipe_error};
      return fn(*pipe);
    });
  };
  with_pipe(4, "weight normalization", weight_normalization);
  with_pipe(5, "distance metric properties", distance_properties);
  with_pipe(6, "latent informativeness", latent_informativeness);
  with_pipe(7, "alignment direction-of-effect", alignment_direction);
  with_pipe(8, "consistency analysis", consistency);
  attempt(9, "determinism and persistence", [&] { return determinism(out / "determinism"); });
  attempt(10, "brute-force normalization", brute_force_normalization);

  json summary = json::array();
  bool all = true;
  for (const auto& o : outcomes) {
    summary.push_back({{"criterion", o.id}, {"name", o.name}, {"pass", o.pass}, {"detail", o.detail}});
    all = all && o.pass;
  }
  std::ofstream(out / "acceptance.json") << json{{"criteria", summary},
                                                 {"seconds", seconds_since(t0)}}
                                                .dump(2)
                                         << '\n';
  std::cout << (all ? "ALL PASS" : "SOME CRITERIA FAILED") << " (" << fmt(seconds_since(t0))
            << " s)" << std::endl;
  return all ? 0 : 1;
}
