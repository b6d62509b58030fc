#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ldalign/align.hpp"
#include "ldalign/analysis.hpp"
#include "ldalign/config.hpp"
#include "ldalign/corpus.hpp"
#include "ldalign/errors.hpp"
#include "ldalign/guide.hpp"
#include "ldalign/lm.hpp"
#include "ldalign/model_io.hpp"
#include "ldalign/toy_tasks.hpp"
#include "ldalign/verify.hpp"

namespace py = pybind11;
using namespace ldalign;

namespace {

Dataset to_dataset(const std::vector<std::pair<std::string, std::string>>& pairs) {
  Dataset d;
  for (const auto& [x, y] : pairs) d.pairs.push_back(make_pair_from_text(x, y));
  return d;
}

std::vector<std::pair<std::string, std::string>> from_dataset(const Dataset& d) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& p : d.pairs) out.emplace_back(detokenize(p.prompt), detokenize(p.response));
  return out;
}

template <typename P>
py::array_t<float> values_array(const P& p) {
  const auto v = p.values();
  return py::array_t<float>(static_cast<py::ssize_t>(v.size()), v.data());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Latent-distance-guided alignment on toy corpora";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<VerificationError>(m, "VerificationError", base.ptr());
  py::register_exception<DegenerateCohortError>(m, "DegenerateCohortError", base.ptr());
  py::register_exception<LengthError>(m, "LengthError", base.ptr());
  py::register_exception<NonFiniteError>(m, "NonFiniteError", base.ptr());

  m.attr("VOCAB_SIZE") = kVocabSize;

  py::class_<LMConfig>(m, "LMConfig")
      .def(py::init([](int n_layers, int n_heads, int d_model, int context_len) {
             return LMConfig{n_layers, n_heads, d_model, context_len, kVocabSize};
           }),
           py::arg("n_layers") = 2, py::arg("n_heads") = 4, py::arg("d_model") = 64,
           py::arg("context_len") = 64)
      .def_readwrite("n_layers", &LMConfig::n_layers)
      .def_readwrite("n_heads", &LMConfig::n_heads)
      .def_readwrite("d_model", &LMConfig::d_model)
      .def_readwrite("context_len", &LMConfig::context_len)
      .def_readonly("vocab_size", &LMConfig::vocab_size);

  py::class_<DecodeConfig>(m, "DecodeConfig")
      .def(py::init([](double t, int n, std::uint64_t seed) { return DecodeConfig{t, n, seed}; }),
           py::arg("temperature") = 1.0, py::arg("max_new_tokens") = 64, py::arg("seed") = 0)
      .def_readwrite("temperature", &DecodeConfig::temperature)
      .def_readwrite("max_new_tokens", &DecodeConfig::max_new_tokens)
      .def_readwrite("seed", &DecodeConfig::seed);

  py::class_<LMParams<float>>(m, "LM")
      .def(py::init<const LMConfig&>())
      .def_static("random", &LMParams<float>::random, py::arg("config"), py::arg("seed"))
      .def_static("load", &load_lm, py::arg("dir"))
      .def("save", [](const LMParams<float>& p, const std::string& dir) { save_lm(dir, p); })
      .def_property_readonly("config", &LMParams<float>::config)
      .def_property_readonly("parameter_count", &LMParams<float>::parameter_count)
      .def("values", &values_array<LMParams<float>>)
      .def("content_hash", [](const LMParams<float>& p) { return content_hash(p.values()); })
      .def("log_prob",
           [](const LMParams<float>& p, const std::string& x, const std::string& y) {
             return conditional_log_prob(p, tokenize(x), tokenize(y));
           })
      .def("sample",
           [](const LMParams<float>& p, const std::string& x, const DecodeConfig& d) {
             std::string out;
             {
               py::gil_scoped_release release;
               out = detokenize(sample_response(p, tokenize(x), d).tokens);
             }
             return py::bytes(out);  // raw bytes: a sample need not be valid UTF-8
           },
           py::arg("prompt"), py::arg("decode") = DecodeConfig{});

  py::class_<GuideParams<float>>(m, "Guide")
      .def_static("load", &load_guide, py::arg("dir"))
      .def_property_readonly("parameter_count", &GuideParams<float>::parameter_count)
      .def("content_hash", [](const GuideParams<float>& g) { return content_hash(g.values()); })
      .def("distance",
           [](const GuideParams<float>& g, const std::string& x, const std::string& a,
              const std::string& b) {
             return latent_distance(g, tokenize(x), tokenize(a), tokenize(b));
           });

  m.def("make_guide", [](int latent_dim, const LMConfig& enc, const LMConfig& dec,
                         std::uint64_t seed) {
    return GuideParams<float>::random(GuideConfig{latent_dim, enc, dec}, seed);
  });

  m.def("tokenize", [](const std::string& s) { return tokenize(s); });
  m.def("detokenize", [](const std::vector<Token>& t) { return detokenize(t); });
  m.def(
      "make_corpus",
      [](const std::vector<std::string>& tasks, std::size_t n, std::uint64_t seed, int min_len,
         int max_len) {
        return from_dataset(make_corpus(tasks, n, seed, ToyTaskOptions{min_len, max_len, 2, 3}));
      },
      py::arg("tasks"), py::arg("n_pairs"), py::arg("seed"), py::arg("min_word_len") = 3,
      py::arg("max_word_len") = 6);
  m.def("check_response", [](const std::string& x, const std::string& y) {
    return check_response(std::string_view(x), std::string_view(y));
  });
  m.def("edit_distance", [](const std::string& a, const std::string& b) {
    return edit_distance(tokenize(a), tokenize(b));
  });

  m.def(
      "train_sft",
      [](const LMParams<float>& init, const std::vector<std::pair<std::string, std::string>>& pairs,
         double lr, int steps, int batch_size, std::uint64_t seed) {
        const Dataset d = to_dataset(pairs);
        py::gil_scoped_release release;
        return train_sft(init, d, SftHyper{lr, steps, batch_size, seed, 1.0});
      },
      py::arg("init"), py::arg("pairs"), py::arg("lr") = 3e-3, py::arg("steps") = 100,
      py::arg("batch_size") = 16, py::arg("seed") = 0);

  m.def("softplus", &softplus);
  m.def("log_sigmoid", &log_sigmoid);
  m.def("bradley_terry", &bradley_terry, py::arg("r_win"), py::arg("r_lose"));
  m.def("margin_from_log_probs", &margin_from_log_probs);
  m.def("distance_expectation",
        [](const std::vector<double>& s) { return distance_expectation(s); });
  m.def("normalized_weights", [](const std::vector<double>& s) { return normalized_weights(s); });

  m.def(
      "verify_json",
      [](std::uint64_t seed, bool corrupt_gradient) {
        VerifyOptions o;
        o.seed = seed;
        o.corrupt_gradient = corrupt_gradient;
        py::gil_scoped_release release;
        return to_json(run_verify_suite(o)).dump();
      },
      py::arg("seed") = 0, py::arg("corrupt_gradient") = false);

  m.def(
      "config_json",
      [](const std::string& path, const std::vector<std::string>& overrides) {
        return to_json(load_run_config(path, overrides)).dump();
      },
      py::arg("path") = "", py::arg("overrides") = std::vector<std::string>{});
  m.def("config_hash", [](const std::string& path, const std::vector<std::string>& overrides) {
    return config_hash(load_run_config(path, overrides));
  }, py::arg("path") = "", py::arg("overrides") = std::vector<std::string>{});
}
