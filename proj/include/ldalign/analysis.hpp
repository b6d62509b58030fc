#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldalign/corpus.hpp"
#include "ldalign/guide.hpp"
#include "ldalign/lm.hpp"

namespace ldalign {

struct Histogram {
  std::vector<double> bin_edges;
  std::vector<long> counts;
  long overflow = 0;  // values >= the last edge
};

// Half-open bins [e_i, e_{i+1}). Edges must be strictly ascending and no
// distance may fall below the first edge.
Histogram distance_histogram(std::span<const double> distances, std::span<const double> bin_edges);

// n equal-width bins from 0 to just above the largest distance.
std::vector<double> uniform_edges(std::span<const double> distances, int n_bins);

nlohmann::json to_json(const Histogram& h);

enum class Preferred { kA, kB };

struct JudgeInput {
  std::size_t pair_index = 0;
  std::span<const Token> prompt;
  std::span<const Token> gold;
  std::span<const Token> a;
  std::span<const Token> b;
  double distance_a = 0.0;  // latent distance of a to the gold response
  double distance_b = 0.0;
};

struct JudgeVerdict {
  std::size_t pair_index = 0;
  Preferred preferred = Preferred::kA;
  std::string judge_name;
};

// Picks the better of two candidate responses. Implementations must be
// deterministic given their construction arguments.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string name() const = 0;
  virtual Preferred judge(const JudgeInput& input) const = 0;
};

// Prefers the smaller byte-level edit distance to gold; ties go to A.
class EditDistanceJudge : public Judge {
 public:
  std::string name() const override { return "edit_distance"; }
  Preferred judge(const JudgeInput& input) const override;
};

// Prefers the response that solves the toy task. When both or neither do, it
// falls back to edit distance to gold, then to A.
class TaskCheckerJudge : public Judge {
 public:
  std::string name() const override { return "task_checker"; }
  Preferred judge(const JudgeInput& input) const override;
};

// Agrees with the latent-distance ordering by construction.
class DistanceOracleJudge : public Judge {
 public:
  std::string name() const override { return "distance_oracle"; }
  Preferred judge(const JudgeInput& input) const override;
};

// Fair coin per prompt, seeded by (seed, pair_index).
class RandomJudge : public Judge {
 public:
  explicit RandomJudge(std::uint64_t seed) : seed_(seed) {}
  std::string name() const override { return "random"; }
  Preferred judge(const JudgeInput& input) const override;

 private:
  std::uint64_t seed_;
};

std::unique_ptr<Judge> make_judge(const std::string& name, std::uint64_t seed = 0);

std::size_t edit_distance(std::span<const Token> a, std::span<const Token> b);

struct ConsistencyReport {
  long agreements = 0;
  long disagreements = 0;
  long ties = 0;      // equal latent distances, excluded from the rate
  double rate = 0.0;  // agreements / (agreements + disagreements); 0 if none
  std::vector<JudgeVerdict> verdicts;
};

nlohmann::json to_json(const ConsistencyReport& r);

// The guide ranks the candidate farther from gold in latent space as worse;
// counts how often the judge's pick matches.
ConsistencyReport consistency_from_samples(const GuideParams<float>& guide, const Dataset& subset,
                                           std::span<const Tokens> samples_a,
                                           std::span<const Tokens> samples_b, const Judge& judge);

// Samples y'_a and y'_b per prompt with the two decode configs (per-prompt
// seeds derived from each config's seed) and scores them as above.
ConsistencyReport pairwise_consistency(const GuideParams<float>& guide,
                                       const LMParams<float>& theta, const Dataset& subset,
                                       const Judge& judge, const DecodeConfig& decode_a,
                                       const DecodeConfig& decode_b);

struct MarginReport {
  double mean_margin = 0.0;
  double fraction_positive = 0.0;
  bool degenerate = false;  // every margin exactly 0
  std::vector<double> margins;
};

// Samples y' from ref per prompt and evaluates the implicit reward margin of
// theta against ref with gold as winner (or as loser when swap_roles).
MarginReport reward_margin_eval(const LMParams<float>& theta, const LMParams<float>& ref,
                                const Dataset& subset, double beta, const DecodeConfig& decode,
                                bool swap_roles = false);

void write_margins_csv(const std::string& path, const MarginReport& report);

// One scalar time series sample (loss, distance, ...).
struct MetricRecord {
  std::string phase;
  int iteration = 0;
  int step = 0;
  double value = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

// CSV phase,iteration,step,value. Creates the file with a header, then appends.
void emit_metrics(std::span<const MetricRecord> records, const std::string& path);
std::vector<MetricRecord> read_metrics(const std::string& path);

}  // namespace ldalign
