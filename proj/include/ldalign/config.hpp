#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldalign/align.hpp"
#include "ldalign/guide.hpp"
#include "ldalign/lm.hpp"
#include "ldalign/toy_tasks.hpp"

namespace ldalign {

struct CorpusConfig {
  std::string train_path;
  std::string heldout_path;        // empty: carve heldout out of train
  double heldout_fraction = 0.125;
  std::vector<std::string> tasks{"reverse", "uppercase", "copy"};
  int n_pairs = 2048;              // make-corpus size
  ToyTaskOptions toy{4, 7, 2, 3};
};

struct EvalConfig {
  std::string judge = "task_checker";
  int histogram_bins = 10;
  int max_pairs = 0;  // 0 = every heldout pair
};

// Everything a command needs. Sub-config seeds are derived from the master
// seed so that a single number pins a run.
struct RunConfig {
  CorpusConfig corpus;
  LMConfig lm{2, 4, 64, 64, kVocabSize};
  GuideConfig guide{8, {1, 4, 64, 64, kVocabSize}, {1, 4, 64, 65, kVocabSize}};
  SftHyper sft{3e-3, 1500, 16, 0, 1.0};
  GuideHyper guide_train{3e-3, 400, 16, 0, 1.0};
  AlignConfig align{0.5, 2, 1e-4, 60, 16, 1.0, {1.0, 40, 0}, 0, 64};
  EvalConfig eval;
  std::string out_dir;
  std::uint64_t seed = 1;

  // Throws ConfigError when a sub-config is invalid or, with check_paths, a
  // referenced corpus file is missing.
  void validate(bool check_paths) const;

  // Copy with every component seed derived from `seed`.
  RunConfig with_derived_seeds() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

// Reads a JSON document, applies `key.path=value` overrides in order, and
// rejects unknown keys. Values are parsed as JSON when possible, otherwise
// taken as strings.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Hex SHA-256 of the canonical JSON dump.
std::string config_hash(const RunConfig& c);

}  // namespace ldalign
