#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ldalign/corpus.hpp"

namespace ldalign {

// Synthetic single-turn instruction tasks with mechanically checkable gold
// answers:
//   "reverse: abc"   -> "cba"
//   "uppercase: abc" -> "ABC"
//   "copy 2: abc"    -> "abcabc"
struct ToyTaskOptions {
  int min_word_len = 3;
  int max_word_len = 6;
  int min_copies = 2;
  int max_copies = 3;
};

const std::vector<std::string>& toy_task_names();

// Deterministic corpus of n_pairs examples drawn uniformly from task_mix.
Dataset make_corpus(std::span<const std::string> task_mix, std::size_t n_pairs,
                    std::uint64_t seed, const ToyTaskOptions& options = {});

// Gold answer for a well-formed toy prompt, nullopt otherwise.
std::optional<std::string> solve_prompt(std::string_view prompt);

bool check_response(std::string_view prompt, std::string_view response);
bool check_response(std::span<const Token> prompt, std::span<const Token> response);

}  // namespace ldalign
