#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ldalign {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;      // measured error or count
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  int gradient_probes = 64;
  int dpo_pairs = 32;
  int distance_triples = 1000;
  // Scratch directory for the checkpoint round-trip; empty = system temp.
  std::string scratch_dir;
  // Fault injection: scales the analytic gradient so the gradient check fails.
  bool corrupt_gradient = false;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool all_passed() const;
};

nlohmann::json to_json(const VerifyReport& r);

// Invariant suite on fresh tiny random models: gradient check, agreement with
// plain DPO at unit weights, loss value at theta = ref, latent distance metric
// axioms, checkpoint round-trip.
VerifyReport run_verify_suite(const VerifyOptions& options);

}  // namespace ldalign
