#include "ldalign/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "ldalign/align.hpp"
#include "ldalign/csv.hpp"
#include "ldalign/errors.hpp"
#include "ldalign/parallel.hpp"
#include "ldalign/toy_tasks.hpp"

namespace ldalign {

using json = nlohmann::json;

Histogram distance_histogram(std::span<const double> distances,
                             std::span<const double> bin_edges) {
  if (bin_edges.size() < 2) throw ConfigError("histogram needs at least two edges");
  for (std::size_t i = 1; i < bin_edges.size(); ++i) {
    if (!(bin_edges[i] > bin_edges[i - 1])) throw ConfigError("histogram edges must ascend");
  }
  Histogram h;
  h.bin_edges.assign(bin_edges.begin(), bin_edges.end());
  h.counts.assign(bin_edges.size() - 1, 0);
  for (double s : distances) {
    if (!(s >= bin_edges.front())) {
      throw ConfigError("distance " + format_real(s) + " lies below the first histogram edge");
    }
    if (s >= bin_edges.back()) {
      ++h.overflow;
      continue;
    }
    const auto it = std::upper_bound(bin_edges.begin(), bin_edges.end(), s);
    ++h.counts[static_cast<std::size_t>(it - bin_edges.begin()) - 1];
  }
  return h;
}

std::vector<double> uniform_edges(std::span<const double> distances, int n_bins) {
  if (n_bins < 1) throw ConfigError("n_bins must be >= 1");
  double hi = 0.0;
  for (double s : distances) hi = std::max(hi, s);
  hi = hi > 0.0 ? std::nextafter(hi, INFINITY) : 1.0;
  std::vector<double> edges(static_cast<std::size_t>(n_bins) + 1);
  for (int i = 0; i <= n_bins; ++i) edges[static_cast<std::size_t>(i)] = hi * i / n_bins;
  edges.back() = hi;
  return edges;
}

json to_json(const Histogram& h) {
  return {{"edges", h.bin_edges}, {"counts", h.counts}, {"overflow", h.overflow}};
}

std::size_t edit_distance(std::span<const Token> a, std::span<const Token> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Preferred EditDistanceJudge::judge(const JudgeInput& in) const {
  return edit_distance(in.b, in.gold) < edit_distance(in.a, in.gold) ? Preferred::kB
                                                                      : Preferred::kA;
}

Preferred TaskCheckerJudge::judge(const JudgeInput& in) const {
  const bool ok_a = check_response(in.prompt, in.a);
  const bool ok_b = check_response(in.prompt, in.b);
  if (ok_a != ok_b) return ok_a ? Preferred::kA : Preferred::kB;
  return EditDistanceJudge().judge(in);
}

Preferred DistanceOracleJudge::judge(const JudgeInput& in) const {
  return in.distance_b < in.distance_a ? Preferred::kB : Preferred::kA;
}

Preferred RandomJudge::judge(const JudgeInput& in) const {
  Rng rng(derive_seed({seed_, in.pair_index}));
  return uniform01(rng) < 0.5 ? Preferred::kA : Preferred::kB;
}

std::unique_ptr<Judge> make_judge(const std::string& name, std::uint64_t seed) {
  if (name == "edit_distance") return std::make_unique<EditDistanceJudge>();
  if (name == "task_checker") return std::make_unique<TaskCheckerJudge>();
  if (name == "distance_oracle") return std::make_unique<DistanceOracleJudge>();
  if (name == "random") return std::make_unique<RandomJudge>(seed);
  throw ConfigError("unknown judge: " + name);
}

json to_json(const ConsistencyReport& r) {
  return {{"agreements", r.agreements},
          {"disagreements", r.disagreements},
          {"ties", r.ties},
          {"rate", r.rate}};
}

ConsistencyReport consistency_from_samples(const GuideParams<float>& guide, const Dataset& subset,
                                           std::span<const Tokens> samples_a,
                                           std::span<const Tokens> samples_b, const Judge& judge) {
  if (subset.empty()) throw ConfigError("pairwise_consistency: empty subset");
  if (samples_a.size() != subset.size() || samples_b.size() != subset.size()) {
    throw ConfigError("pairwise_consistency: one sample pair per prompt required");
  }
  const std::size_t n = subset.size();
  std::vector<double> da(n), db(n);
  parallel_for(n, [&](std::size_t i) {
    const LatentVector gold = encode(guide, subset[i].prompt, subset[i].response);
    da[i] = latent_l2(gold, encode(guide, subset[i].prompt, samples_a[i]));
    db[i] = latent_l2(gold, encode(guide, subset[i].prompt, samples_b[i]));
  });
  ConsistencyReport rep;
  for (std::size_t i = 0; i < n; ++i) {
    if (da[i] == db[i]) {
      ++rep.ties;
      continue;
    }
    const Preferred by_guide = da[i] < db[i] ? Preferred::kA : Preferred::kB;
    const JudgeInput in{i, subset[i].prompt, subset[i].response, samples_a[i], samples_b[i],
                        da[i], db[i]};
    const Preferred by_judge = judge.judge(in);
    rep.verdicts.push_back({i, by_judge, judge.name()});
    (by_judge == by_guide ? rep.agreements : rep.disagreements) += 1;
  }
  const long decided = rep.agreements + rep.disagreements;
  rep.rate = decided > 0 ? static_cast<double>(rep.agreements) / static_cast<double>(decided) : 0.0;
  return rep;
}

ConsistencyReport pairwise_consistency(const GuideParams<float>& guide,
                                       const LMParams<float>& theta, const Dataset& subset,
                                       const Judge& judge, const DecodeConfig& decode_a,
                                       const DecodeConfig& decode_b) {
  if (subset.empty()) throw ConfigError("pairwise_consistency: empty subset");
  if (decode_a.seed == decode_b.seed && decode_a.temperature == decode_b.temperature) {
    throw ConfigError("pairwise_consistency: the two decode configs must differ");
  }
  std::vector<Tokens> a(subset.size()), b(subset.size());
  parallel_for(subset.size(), [&](std::size_t i) {
    DecodeConfig da = decode_a, db = decode_b;
    da.seed = derive_seed({decode_a.seed, i});
    db.seed = derive_seed({decode_b.seed, i});
    a[i] = sample_response(theta, subset[i].prompt, da).tokens;
    b[i] = sample_response(theta, subset[i].prompt, db).tokens;
  });
  return consistency_from_samples(guide, subset, a, b, judge);
}

MarginReport reward_margin_eval(const LMParams<float>& theta, const LMParams<float>& ref,
                                const Dataset& subset, double beta, const DecodeConfig& decode,
                                bool swap_roles) {
  if (subset.empty()) throw ConfigError("reward_margin_eval: empty subset");
  MarginReport rep;
  rep.margins.resize(subset.size());
  parallel_for(subset.size(), [&](std::size_t i) {
    DecodeConfig dc = decode;
    dc.seed = derive_seed({decode.seed, i});
    const Tokens gen = sample_response(ref, subset[i].prompt, dc).tokens;
    const auto& gold = subset[i].response;
    rep.margins[i] = swap_roles
                         ? implicit_reward_margin(theta, ref, subset[i].prompt, gen, gold, beta)
                         : implicit_reward_margin(theta, ref, subset[i].prompt, gold, gen, beta);
  });
  rep.mean_margin = pairwise_sum(std::span<const double>(rep.margins)) /
                    static_cast<double>(rep.margins.size());
  const auto positive = std::count_if(rep.margins.begin(), rep.margins.end(),
                                      [](double z) { return z > 0.0; });
  rep.degenerate = std::all_of(rep.margins.begin(), rep.margins.end(),
                               [](double z) { return z == 0.0; });
  rep.fraction_positive =
      rep.degenerate ? 0.0 : static_cast<double>(positive) / static_cast<double>(rep.margins.size());
  return rep;
}

void write_margins_csv(const std::string& path, const MarginReport& report) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < report.margins.size(); ++i) {
    rows.push_back({std::to_string(i), format_real(report.margins[i])});
  }
  append_csv(path, {"pair_index", "margin"}, rows);
}

void emit_metrics(std::span<const MetricRecord> records, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(records.size());
  for (const auto& r : records) {
    rows.push_back({r.phase, std::to_string(r.iteration), std::to_string(r.step),
                    format_real(r.value)});
  }
  append_csv(path, {"phase", "iteration", "step", "value"}, rows);
}

std::vector<MetricRecord> read_metrics(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header != std::vector<std::string>{"phase", "iteration", "step", "value"}) {
    throw IoError("unexpected metrics header in " + path);
  }
  std::vector<MetricRecord> out;
  for (const auto& r : t.rows) {
    out.push_back({r[0], std::stoi(r[1]), std::stoi(r[2]), std::stod(r[3])});
  }
  return out;
}

}  // namespace ldalign
