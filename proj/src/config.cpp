#include "ldalign/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <tuple>

#include "ldalign/analysis.hpp"
#include "ldalign/errors.hpp"
#include "ldalign/model_io.hpp"
#include "ldalign/params.hpp"
#include "ldalign/rng.hpp"
#include "ldalign/toy_tasks.hpp"

namespace ldalign {

using json = nlohmann::json;

namespace {

json hyper_json(double lr, int steps, int batch, double clip) {
  return {{"lr", lr}, {"steps", steps}, {"batch_size", batch}, {"grad_clip", clip}};
}

// Recursively rejects keys of `user` that the defaults document lacks.
void check_known(const json& user, const json& defaults, const std::string& where) {
  if (!user.is_object() || !defaults.is_object()) return;
  for (const auto& [k, v] : user.items()) {
    const std::string path = where.empty() ? k : where + "." + k;
    if (!defaults.contains(k)) throw ConfigError("unknown config key: " + path);
    check_known(v, defaults.at(k), path);
  }
}

template <typename T>
T get_as(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

void RunConfig::validate(bool check_paths) const {
  lm.validate();
  guide.validate();
  if (lm.vocab_size != kVocabSize) throw ConfigError("lm.vocab_size must be " + std::to_string(kVocabSize));
  if (!(corpus.heldout_fraction > 0.0 && corpus.heldout_fraction < 1.0)) {
    throw ConfigError("corpus.heldout_fraction must lie in (0, 1)");
  }
  if (corpus.n_pairs < 1) throw ConfigError("corpus.n_pairs must be >= 1");
  if (corpus.toy.min_word_len < 1 || corpus.toy.max_word_len < corpus.toy.min_word_len ||
      corpus.toy.min_copies < 1 || corpus.toy.max_copies < corpus.toy.min_copies) {
    throw ConfigError("corpus.toy: need 1 <= min <= max for word length and copies");
  }
  for (const auto& t : corpus.tasks) {
    const auto& names = toy_task_names();
    if (std::find(names.begin(), names.end(), t) == names.end()) {
      throw ConfigError("unknown task name: " + t);
    }
  }
  for (const auto& [name, steps, batch, lr] :
       {std::tuple{"sft", sft.steps, sft.batch_size, sft.lr},
        std::tuple{"guide_train", guide_train.steps, guide_train.batch_size, guide_train.lr},
        std::tuple{"align", align.steps_per_iteration, align.batch_size, align.lr}}) {
    if (steps < 0) throw ConfigError(std::string(name) + ": steps must be >= 0");
    if (batch < 1) throw ConfigError(std::string(name) + ": batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError(std::string(name) + ": lr must be > 0");
  }
  if (!(align.beta > 0.0)) throw ConfigError("align.beta must be > 0");
  if (align.iterations < 0) throw ConfigError("align.iterations must be >= 0");
  if (align.decode.temperature < 0.0) throw ConfigError("align.decode.temperature must be >= 0");
  if (align.decode.max_new_tokens < 1) throw ConfigError("align.decode.max_new_tokens must be >= 1");
  if (eval.histogram_bins < 1) throw ConfigError("eval.histogram_bins must be >= 1");
  make_judge(eval.judge);
  if (check_paths) {
    if (corpus.train_path.empty()) throw ConfigError("corpus.train_path is not set");
    for (const auto& p : {corpus.train_path, corpus.heldout_path}) {
      if (!p.empty() && !std::filesystem::exists(p)) throw ConfigError("missing corpus file: " + p);
    }
  }
}

RunConfig RunConfig::with_derived_seeds() const {
  RunConfig c = *this;
  c.sft.seed = derive_seed({seed, 0x736674});
  c.guide_train.seed = derive_seed({seed, 0x6775696465});
  c.align.seed = derive_seed({seed, 0x616c69676e});
  c.align.decode.seed = derive_seed({seed, 0x6465636f6465});
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["corpus"] = {{"train_path", c.corpus.train_path},
                 {"heldout_path", c.corpus.heldout_path},
                 {"heldout_fraction", c.corpus.heldout_fraction},
                 {"tasks", c.corpus.tasks},
                 {"n_pairs", c.corpus.n_pairs},
                 {"toy",
                  {{"min_word_len", c.corpus.toy.min_word_len},
                   {"max_word_len", c.corpus.toy.max_word_len},
                   {"min_copies", c.corpus.toy.min_copies},
                   {"max_copies", c.corpus.toy.max_copies}}}};
  j["lm"] = c.lm;
  j["guide"] = c.guide;
  j["sft"] = hyper_json(c.sft.lr, c.sft.steps, c.sft.batch_size, c.sft.grad_clip);
  j["guide_train"] = hyper_json(c.guide_train.lr, c.guide_train.steps, c.guide_train.batch_size,
                                c.guide_train.grad_clip);
  j["align"] = {{"beta", c.align.beta},
                {"iterations", c.align.iterations},
                {"lr", c.align.lr},
                {"steps_per_iteration", c.align.steps_per_iteration},
                {"batch_size", c.align.batch_size},
                {"grad_clip", c.align.grad_clip},
                {"heldout_eval_pairs", c.align.heldout_eval_pairs},
                {"decode",
                 {{"temperature", c.align.decode.temperature},
                  {"max_new_tokens", c.align.decode.max_new_tokens}}}};
  j["eval"] = {{"judge", c.eval.judge},
               {"histogram_bins", c.eval.histogram_bins},
               {"max_pairs", c.eval.max_pairs}};
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  return j;
}

RunConfig run_config_from_json(const json& user) {
  json doc = to_json(RunConfig{});
  check_known(user, doc, "");
  doc.merge_patch(user);

  RunConfig c;
  const json& co = doc.at("corpus");
  c.corpus.train_path = get_as<std::string>(co, "train_path");
  c.corpus.heldout_path = get_as<std::string>(co, "heldout_path");
  c.corpus.heldout_fraction = get_as<double>(co, "heldout_fraction");
  c.corpus.tasks = get_as<std::vector<std::string>>(co, "tasks");
  c.corpus.n_pairs = get_as<int>(co, "n_pairs");
  const json& toy = co.at("toy");
  c.corpus.toy = {get_as<int>(toy, "min_word_len"), get_as<int>(toy, "max_word_len"),
                  get_as<int>(toy, "min_copies"), get_as<int>(toy, "max_copies")};
  try {
    c.lm = doc.at("lm").get<LMConfig>();
    c.guide = doc.at("guide").get<GuideConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  const auto read_hyper = [](const json& h, auto& out) {
    out.lr = get_as<double>(h, "lr");
    out.steps = get_as<int>(h, "steps");
    out.batch_size = get_as<int>(h, "batch_size");
    out.grad_clip = get_as<double>(h, "grad_clip");
  };
  read_hyper(doc.at("sft"), c.sft);
  read_hyper(doc.at("guide_train"), c.guide_train);
  const json& al = doc.at("align");
  c.align.beta = get_as<double>(al, "beta");
  c.align.iterations = get_as<int>(al, "iterations");
  c.align.lr = get_as<double>(al, "lr");
  c.align.steps_per_iteration = get_as<int>(al, "steps_per_iteration");
  c.align.batch_size = get_as<int>(al, "batch_size");
  c.align.grad_clip = get_as<double>(al, "grad_clip");
  c.align.heldout_eval_pairs = get_as<int>(al, "heldout_eval_pairs");
  c.align.decode.temperature = get_as<double>(al.at("decode"), "temperature");
  c.align.decode.max_new_tokens = get_as<int>(al.at("decode"), "max_new_tokens");
  const json& ev = doc.at("eval");
  c.eval.judge = get_as<std::string>(ev, "judge");
  c.eval.histogram_bins = get_as<int>(ev, "histogram_bins");
  c.eval.max_pairs = get_as<int>(ev, "max_pairs");
  c.out_dir = get_as<std::string>(doc, "out_dir");
  c.seed = get_as<std::uint64_t>(doc, "seed");
  return c;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key.path=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("empty component in override key: " + key);
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      throw ConfigError("config " + path + " is not a JSON object");
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

std::string config_hash(const RunConfig& c) {
  const std::string dump = to_json(c).dump();
  return sha256_hex(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(dump.data()), dump.size()));
}

}  // namespace ldalign
