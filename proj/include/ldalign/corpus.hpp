#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ldalign {

using Token = std::int32_t;
using Tokens = std::vector<Token>;

// Byte-level vocabulary: ids 0-255 are raw bytes, followed by four specials.
inline constexpr Token kPad = 256;
inline constexpr Token kBos = 257;
inline constexpr Token kSep = 258;
inline constexpr Token kEos = 259;
inline constexpr int kVocabSize = 260;

Tokens tokenize(std::string_view text);

// Inverse of tokenize. Throws ConfigError on special ids.
std::string detokenize(std::span<const Token> tokens);

// Human-readable rendering that prints specials as <PAD>, <EOS>, ...
std::string render_tokens(std::span<const Token> tokens);

// [BOS] x [SEP] y [EOS]. The response range [response_begin, response_end)
// covers y and the closing EOS. y may be empty (a model can emit EOS first).
struct EncodedPair {
  Tokens tokens;
  std::size_t response_begin = 0;
  std::size_t response_end = 0;

  std::size_t response_length() const { return response_end - response_begin; }
};

EncodedPair encode_pair(std::span<const Token> prompt, std::span<const Token> response,
                        std::size_t context_len);

// One gold example. `response` holds content tokens only; the terminating EOS
// is part of the sequence layout and added by encode_pair.
struct PromptResponsePair {
  Tokens prompt;
  Tokens response;

  bool operator==(const PromptResponsePair&) const = default;
};

PromptResponsePair make_pair_from_text(std::string_view prompt, std::string_view response);

enum class SplitTag { kTrain, kHeldout };

struct Dataset {
  std::vector<PromptResponsePair> pairs;
  std::string source_path;
  SplitTag split_tag = SplitTag::kTrain;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  const PromptResponsePair& operator[](std::size_t i) const { return pairs[i]; }
};

// Reads {"prompt": ..., "response": ...} objects, one per line. Blank lines
// are skipped.
Dataset load_jsonl(const std::string& path);
void save_jsonl(const Dataset& dataset, const std::string& path);

// Deterministic shuffled partition. The heldout side gets round(N * fraction)
// pairs, clamped so both sides are nonempty.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double heldout_fraction,
                                  std::uint64_t seed);

// A model-generated response y' for dataset pair `pair_index`.
struct GenerationRecord {
  std::size_t pair_index = 0;
  Tokens generated;  // content tokens, EOS stripped
  bool truncated = false;
  int iteration = 0;
  std::uint64_t rng_seed = 0;

  bool operator==(const GenerationRecord&) const = default;
};

// Generation store: JSONL with keys pair_index, generated (token id array),
// iteration, seed, truncated.
void save_generations(const std::vector<GenerationRecord>& records, const std::string& path);
std::vector<GenerationRecord> load_generations(const std::string& path);

}  // namespace ldalign
