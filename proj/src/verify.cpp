#include "ldalign/verify.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "ldalign/align.hpp"
#include "ldalign/checkpoint.hpp"
#include "ldalign/errors.hpp"
#include "ldalign/guide.hpp"
#include "ldalign/lm.hpp"
#include "ldalign/model_io.hpp"
#include "ldalign/params.hpp"
#include "ldalign/rng.hpp"

namespace ldalign {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const LMConfig kTinyLm{1, 2, 16, 32, kVocabSize};
const GuideConfig kTinyGuide{4, {1, 2, 16, 32, kVocabSize}, {1, 2, 16, 33, kVocabSize}};
constexpr double kBeta = 0.1;

Tokens random_tokens(Rng& rng, std::size_t n) {
  Tokens t(n);
  for (auto& x : t) x = static_cast<Token>(97 + static_cast<int>(uniform01(rng) * 26));
  return t;
}

std::vector<WeightedPreferencePair> random_batch(Rng& rng, std::size_t n, bool unit_weights) {
  std::vector<WeightedPreferencePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = unit_weights ? 1.0 : 2.0 * uniform01(rng);
    out.push_back({random_tokens(rng, 1 + i % 4), random_tokens(rng, 1 + i % 5),
                   random_tokens(rng, 1 + (i + 2) % 4), w});
  }
  return out;
}

CheckResult gradient_check(const VerifyOptions& opt) {
  Rng rng(derive_seed({opt.seed, 1}));
  const auto theta = LMParams<float>::random(kTinyLm, derive_seed({opt.seed, 2})).cast<double>();
  const auto ref = LMParams<float>::random(kTinyLm, derive_seed({opt.seed, 3})).cast<double>();
  const auto batch = random_batch(rng, 6, false);
  GradientCheckOptions g;
  g.probe_count = opt.gradient_probes;
  g.seed = derive_seed({opt.seed, 4});
  if (opt.corrupt_gradient) {
    g.corrupt_gradient = [](std::span<double> grad) {
      for (double& x : grad) x *= 1.5;
    };
  }
  const auto rep = check_gradient(theta, ref, batch, kBeta, g);
  std::ostringstream d;
  d << rep.probes << " probes, worst index " << rep.worst_index << ", decomposition error "
    << rep.decomposition_error;
  return {"gradient", rep.passed, rep.max_relative_error, g.tolerance, d.str()};
}

CheckResult dpo_equivalence(const VerifyOptions& opt) {
  Rng rng(derive_seed({opt.seed, 10}));
  const auto theta = LMParams<float>::random(kTinyLm, derive_seed({opt.seed, 11})).cast<double>();
  const auto ref = LMParams<float>::random(kTinyLm, derive_seed({opt.seed, 12})).cast<double>();
  const auto batch = random_batch(rng, static_cast<std::size_t>(opt.dpo_pairs), true);
  long double plain = 0.0L;
  for (const auto& p : batch) {
    const long double z =
        static_cast<long double>(kBeta) *
        ((conditional_log_prob(theta, p.prompt, p.win) - conditional_log_prob(ref, p.prompt, p.win)) -
         (conditional_log_prob(theta, p.prompt, p.lose) -
          conditional_log_prob(ref, p.prompt, p.lose)));
    plain += std::log1p(std::exp(-z));
  }
  plain /= static_cast<long double>(batch.size());
  const double ours = weighted_dpo_loss(theta, ref, batch, kBeta);
  const double err = std::abs(ours - static_cast<double>(plain));
  return {"dpo_equivalence", err <= 1e-10, err, 1e-10, ""};
}

CheckResult reference_point(const VerifyOptions& opt) {
  Rng rng(derive_seed({opt.seed, 20}));
  const auto theta = LMParams<float>::random(kTinyLm, derive_seed({opt.seed, 21})).cast<double>();
  const auto batch = random_batch(rng, 16, false);
  double mean_w = 0.0;
  for (const auto& p : batch) mean_w += p.weight;
  mean_w /= static_cast<double>(batch.size());
  const double loss = weighted_dpo_loss(theta, theta, batch, kBeta);
  const double err = std::abs(loss - mean_w * std::log(2.0));
  long nonzero = 0;
  for (const auto& p : batch) {
    if (implicit_reward_margin(theta, theta, p.prompt, p.win, p.lose, kBeta) != 0.0) ++nonzero;
  }
  return {"reference_point", err <= 1e-10 && nonzero == 0, err, 1e-10,
          std::to_string(nonzero) + " nonzero margins"};
}

CheckResult distance_properties(const VerifyOptions& opt) {
  Rng rng(derive_seed({opt.seed, 30}));
  const auto guide = GuideParams<float>::random(kTinyGuide, derive_seed({opt.seed, 31}));
  double worst_triangle = 0.0;
  long violations = 0;
  for (int i = 0; i < opt.distance_triples; ++i) {
    const Tokens x = random_tokens(rng, 2 + i % 3);
    const Tokens a = random_tokens(rng, 1 + i % 4);
    const Tokens b = random_tokens(rng, 1 + (i + 1) % 4);
    const Tokens c = random_tokens(rng, 1 + (i + 2) % 4);
    const double ab = latent_distance(guide, x, a, b);
    const double ba = latent_distance(guide, x, b, a);
    const double bc = latent_distance(guide, x, b, c);
    const double ac = latent_distance(guide, x, a, c);
    if (ab < 0.0 || ab != ba || latent_distance(guide, x, a, a) != 0.0) ++violations;
    worst_triangle = std::max(worst_triangle, ac - (ab + bc));
  }
  const bool ok = violations == 0 && worst_triangle <= 1e-5;
  return {"distance_properties", ok, worst_triangle, 1e-5,
          std::to_string(violations) + " axiom violations"};
}

CheckResult checkpoint_roundtrip(const VerifyOptions& opt) {
  const fs::path root = opt.scratch_dir.empty()
                            ? fs::temp_directory_path() /
                                  ("ldalign_verify_" + std::to_string(derive_seed({opt.seed, 40})))
                            : fs::path(opt.scratch_dir);
  const auto lm = LMParams<float>::random(kTinyLm, derive_seed({opt.seed, 41}));
  const auto guide = GuideParams<float>::random(kTinyGuide, derive_seed({opt.seed, 42}));
  save_lm((root / "lm").string(), lm);
  save_guide((root / "guide").string(), guide);
  const auto lm2 = load_lm((root / "lm").string());
  const auto guide2 = load_guide((root / "guide").string());
  const bool ok = content_hash(lm.values()) == content_hash(lm2.values()) &&
                  content_hash(guide.values()) == content_hash(guide2.values()) &&
                  checkpoint_hash((root / "lm").string()) == content_hash(lm.values());
  if (opt.scratch_dir.empty()) fs::remove_all(root);
  return {"checkpoint_roundtrip", ok, ok ? 0.0 : 1.0, 0.0, ""};
}

}  // namespace

bool VerifyReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

json to_json(const VerifyReport& r) {
  json checks = json::array();
  for (const auto& c : r.checks) {
    checks.push_back({{"name", c.name},
                      {"passed", c.passed},
                      {"value", c.value},
                      {"tolerance", c.tolerance},
                      {"detail", c.detail}});
  }
  return {{"passed", r.all_passed()}, {"checks", checks}};
}

VerifyReport run_verify_suite(const VerifyOptions& options) {
  using Check = CheckResult (*)(const VerifyOptions&);
  const std::pair<const char*, Check> suite[] = {{"gradient", gradient_check},
                                                 {"dpo_equivalence", dpo_equivalence},
                                                 {"reference_point", reference_point},
                                                 {"distance_properties", distance_properties},
                                                 {"checkpoint_roundtrip", checkpoint_roundtrip}};
  VerifyReport rep;
  for (const auto& [name, fn] : suite) {
    try {
      rep.checks.push_back(fn(options));
    } catch (const std::exception& e) {
      rep.checks.push_back({name, false, 0.0, 0.0, e.what()});
    }
  }
  return rep;
}

}  // namespace ldalign
