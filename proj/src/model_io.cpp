#include "ldalign/model_io.hpp"

#include <algorithm>

#include "ldalign/checkpoint.hpp"
#include "ldalign/errors.hpp"

namespace ldalign {

using json = nlohmann::json;

void to_json(json& j, const LMConfig& c) {
  j = {{"n_layers", c.n_layers}, {"n_heads", c.n_heads},         {"d_model", c.d_model},
       {"context_len", c.context_len}, {"vocab_size", c.vocab_size}};
}

void from_json(const json& j, LMConfig& c) {
  const LMConfig d;
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.d_model = j.value("d_model", d.d_model);
  c.context_len = j.value("context_len", d.context_len);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
}

void to_json(json& j, const GuideConfig& c) {
  j = {{"latent_dim", c.latent_dim}, {"encoder", c.encoder}, {"decoder", c.decoder}};
}

void from_json(const json& j, GuideConfig& c) {
  const GuideConfig d;
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.encoder = j.contains("encoder") ? j.at("encoder").get<LMConfig>() : d.encoder;
  c.decoder = j.contains("decoder") ? j.at("decoder").get<LMConfig>() : d.decoder;
}

void save_lm(const std::string& dir, const LMParams<float>& params) {
  write_checkpoint(dir, "lm", json(params.config()), params.table(), params.values());
}

LMParams<float> load_lm(const std::string& dir) {
  Checkpoint ck = read_checkpoint(dir);
  if (ck.kind != "lm") throw ConfigError(dir + " holds a '" + ck.kind + "' checkpoint, not 'lm'");
  LMParams<float> params(ck.config.get<LMConfig>());
  check_layout(ck.arrays, params.table());
  std::copy(ck.values.begin(), ck.values.end(), params.values().begin());
  return params;
}

void save_guide(const std::string& dir, const GuideParams<float>& guide) {
  write_checkpoint(dir, "guide", json(guide.config()), guide.table(), guide.values());
}

GuideParams<float> load_guide(const std::string& dir) {
  Checkpoint ck = read_checkpoint(dir);
  if (ck.kind != "guide") {
    throw ConfigError(dir + " holds a '" + ck.kind + "' checkpoint, not 'guide'");
  }
  GuideParams<float> guide(ck.config.get<GuideConfig>());
  check_layout(ck.arrays, guide.table());
  std::copy(ck.values.begin(), ck.values.end(), guide.values().begin());
  return guide;
}

}  // namespace ldalign
