#include "ldalign/toy_tasks.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "ldalign/errors.hpp"
#include "ldalign/rng.hpp"

namespace ldalign {

const std::vector<std::string>& toy_task_names() {
  static const std::vector<std::string> names{"reverse", "uppercase", "copy"};
  return names;
}

namespace {

int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform01(rng) * static_cast<double>(hi - lo + 1));
}

std::string random_word(Rng& rng, const ToyTaskOptions& o) {
  const int len = uniform_int(rng, o.min_word_len, o.max_word_len);
  std::string w;
  for (int i = 0; i < len; ++i) w.push_back(static_cast<char>('a' + uniform_int(rng, 0, 25)));
  return w;
}

}  // namespace

Dataset make_corpus(std::span<const std::string> task_mix, std::size_t n_pairs,
                    std::uint64_t seed, const ToyTaskOptions& options) {
  if (n_pairs < 1) throw ConfigError("make_corpus: n_pairs must be >= 1");
  if (task_mix.empty()) throw ConfigError("make_corpus: empty task mix");
  for (const auto& t : task_mix) {
    const auto& names = toy_task_names();
    if (std::find(names.begin(), names.end(), t) == names.end()) {
      throw ConfigError("unknown task: " + t);
    }
  }
  if (options.min_word_len < 1 || options.max_word_len < options.min_word_len ||
      options.min_copies < 1 || options.max_copies < options.min_copies ||
      options.max_copies > 9) {
    throw ConfigError("make_corpus: invalid task options");
  }
  Rng rng(derive_seed({seed, 0x636f72707573ULL}));
  Dataset ds;
  ds.source_path = "<synthetic>";
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const std::string& task =
        task_mix[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(task_mix.size()) - 1))];
    const std::string word = random_word(rng, options);
    std::string prompt;
    if (task == "reverse") {
      prompt = "reverse: " + word;
    } else if (task == "uppercase") {
      prompt = "uppercase: " + word;
    } else {
      prompt = "copy " + std::to_string(uniform_int(rng, options.min_copies, options.max_copies)) +
               ": " + word;
    }
    ds.pairs.push_back(make_pair_from_text(prompt, *solve_prompt(prompt)));
  }
  return ds;
}

std::optional<std::string> solve_prompt(std::string_view prompt) {
  const auto colon = prompt.find(": ");
  if (colon == std::string_view::npos) return std::nullopt;
  const std::string_view head = prompt.substr(0, colon);
  const std::string_view arg = prompt.substr(colon + 2);
  if (arg.empty()) return std::nullopt;
  if (head == "reverse") return std::string(arg.rbegin(), arg.rend());
  if (head == "uppercase") {
    std::string out(arg);
    for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
  }
  if (head.starts_with("copy ")) {
    int n = 0;
    const auto digits = head.substr(5);
    const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (res.ec != std::errc() || res.ptr != digits.data() + digits.size() || n < 1) {
      return std::nullopt;
    }
    std::string out;
    for (int i = 0; i < n; ++i) out += arg;
    return out;
  }
  return std::nullopt;
}

bool check_response(std::string_view prompt, std::string_view response) {
  const auto gold = solve_prompt(prompt);
  return gold && *gold == response;
}

bool check_response(std::span<const Token> prompt, std::span<const Token> response) {
  const bool bytes_only = std::all_of(response.begin(), response.end(),
                                      [](Token t) { return t >= 0 && t < 256; });
  if (!bytes_only) return false;
  return check_response(detokenize(prompt), detokenize(response));
}

}  // namespace ldalign
