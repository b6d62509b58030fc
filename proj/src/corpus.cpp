#include "ldalign/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ldalign/errors.hpp"
#include "ldalign/rng.hpp"

namespace ldalign {

using json = nlohmann::json;

Tokens tokenize(std::string_view text) {
  Tokens out;
  out.reserve(text.size());
  for (char c : text) out.push_back(static_cast<Token>(static_cast<unsigned char>(c)));
  return out;
}

std::string detokenize(std::span<const Token> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (Token t : tokens) {
    if (t < 0 || t > 255) {
      throw ConfigError("detokenize: non-byte token id " + std::to_string(t));
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

std::string render_tokens(std::span<const Token> tokens) {
  std::string out;
  for (Token t : tokens) {
    switch (t) {
      case kPad: out += "<PAD>"; break;
      case kBos: out += "<BOS>"; break;
      case kSep: out += "<SEP>"; break;
      case kEos: out += "<EOS>"; break;
      default: out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
  }
  return out;
}

EncodedPair encode_pair(std::span<const Token> prompt, std::span<const Token> response,
                        std::size_t context_len) {
  if (prompt.empty()) throw ConfigError("encode_pair: empty prompt");
  const std::size_t total = prompt.size() + response.size() + 3;
  if (total > context_len) {
    throw LengthError("encoded pair has " + std::to_string(total) +
                      " tokens, context window is " + std::to_string(context_len));
  }
  EncodedPair enc;
  enc.tokens.reserve(total);
  enc.tokens.push_back(kBos);
  enc.tokens.insert(enc.tokens.end(), prompt.begin(), prompt.end());
  enc.tokens.push_back(kSep);
  enc.response_begin = enc.tokens.size();
  enc.tokens.insert(enc.tokens.end(), response.begin(), response.end());
  enc.tokens.push_back(kEos);
  enc.response_end = enc.tokens.size();
  return enc;
}

PromptResponsePair make_pair_from_text(std::string_view prompt, std::string_view response) {
  return {tokenize(prompt), tokenize(response)};
}

Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  Dataset ds;
  ds.source_path = path;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (!obj.is_object()) throw ParseError("expected a JSON object", lineno);
    for (const char* key : {"prompt", "response"}) {
      if (!obj.contains(key) || !obj[key].is_string()) {
        throw ParseError(std::string("missing string field \"") + key + "\"", lineno);
      }
    }
    auto pair = make_pair_from_text(obj["prompt"].get<std::string>(),
                                    obj["response"].get<std::string>());
    if (pair.prompt.empty() || pair.response.empty()) {
      throw ParseError("prompt and response must be nonempty", lineno);
    }
    ds.pairs.push_back(std::move(pair));
  }
  if (ds.pairs.empty()) throw ConfigError("empty dataset: " + path);
  return ds;
}

void save_jsonl(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file: " + path);
  for (const auto& p : dataset.pairs) {
    json obj = {{"prompt", detokenize(p.prompt)}, {"response", detokenize(p.response)}};
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double heldout_fraction,
                                  std::uint64_t seed) {
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
    throw ConfigError("heldout fraction must lie in (0, 1)");
  }
  const std::size_t n = dataset.size();
  if (n < 2) throw ConfigError("split needs at least 2 pairs");
  std::size_t n_held = static_cast<std::size_t>(std::llround(heldout_fraction * n));
  n_held = std::clamp<std::size_t>(n_held, 1, n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed({seed, 0x73706c6974ULL}));
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i + 1));
    std::swap(order[i], order[std::min(j, i)]);
  }

  Dataset train, held;
  train.source_path = held.source_path = dataset.source_path;
  train.split_tag = SplitTag::kTrain;
  held.split_tag = SplitTag::kHeldout;
  for (std::size_t k = 0; k < n; ++k) {
    (k < n_held ? held : train).pairs.push_back(dataset.pairs[order[k]]);
  }
  return {std::move(train), std::move(held)};
}

void save_generations(const std::vector<GenerationRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write generation store: " + path);
  for (const auto& r : records) {
    json obj = {{"pair_index", r.pair_index},
                {"generated", r.generated},
                {"iteration", r.iteration},
                {"seed", r.rng_seed},
                {"truncated", r.truncated}};
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<GenerationRecord> load_generations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open generation store: " + path);
  std::vector<GenerationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json obj = json::parse(line);
      GenerationRecord r;
      r.pair_index = obj.at("pair_index").get<std::size_t>();
      r.generated = obj.at("generated").get<Tokens>();
      r.iteration = obj.at("iteration").get<int>();
      r.rng_seed = obj.at("seed").get<std::uint64_t>();
      r.truncated = obj.value("truncated", false);
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return out;
}

}  // namespace ldalign
