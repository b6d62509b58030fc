#pragma once

// Independent reference implementations used as test oracles. They share no
// code with the library beyond the parameter table (looked up by name).

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ldalign/corpus.hpp"
#include "ldalign/lm.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

// Plain-loop pre-LN transformer: tok+pos embedding, L x [x += attn(ln1 x);
// x += mlp(ln2 x)], final LN, linear head.
template <typename T>
Matrix naive_logits(const ldalign::LMParams<T>& params, std::span<const ldalign::Token> tokens) {
  const auto& cfg = params.config();
  const std::size_t n = tokens.size(), d = cfg.d_model, V = cfg.vocab_size,
                    H = cfg.n_heads, dh = d / H;
  const auto& table = params.table();
  const auto vals = params.values();
  auto at = [&](const std::string& name, std::size_t i) {
    return static_cast<double>(vals[table.find(name).offset + i]);
  };
  auto layer_norm = [&](const Matrix& x, const std::string& p) {
    Matrix y(n, std::vector<double>(d));
    for (std::size_t t = 0; t < n; ++t) {
      double mu = 0, var = 0;
      for (double v : x[t]) mu += v;
      mu /= d;
      for (double v : x[t]) var += (v - mu) * (v - mu);
      var /= d;
      for (std::size_t j = 0; j < d; ++j) {
        y[t][j] = (x[t][j] - mu) / std::sqrt(var + 1e-5) * at(p + ".gain", j) + at(p + ".bias", j);
      }
    }
    return y;
  };
  auto linear = [&](const Matrix& x, const std::string& w, const std::string& b,
                    std::size_t in, std::size_t out) {
    Matrix y(n, std::vector<double>(out));
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t o = 0; o < out; ++o) {
        double acc = at(b, o);
        for (std::size_t i = 0; i < in; ++i) acc += x[t][i] * at(w, i * out + o);
        y[t][o] = acc;
      }
    }
    return y;
  };

  Matrix x(n, std::vector<double>(d));
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      x[t][j] = at("tok_emb", tokens[t] * d + j) + at("pos_emb", t * d + j);
    }
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const Matrix qkv = linear(layer_norm(x, p + "ln1"), p + "attn.w_qkv", p + "attn.b_qkv", d, 3 * d);
    Matrix att(n, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> w(i + 1);
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0;
          for (std::size_t k = 0; k < dh; ++k) s += qkv[i][h * dh + k] * qkv[j][d + h * dh + k];
          w[j] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, w[j]);
        }
        double z = 0;
        for (auto& v : w) z += (v = std::exp(v - mx));
        for (std::size_t j = 0; j <= i; ++j) {
          for (std::size_t k = 0; k < dh; ++k) att[i][h * dh + k] += w[j] / z * qkv[j][2 * d + h * dh + k];
        }
      }
    }
    const Matrix proj = linear(att, p + "attn.w_out", p + "attn.b_out", d, d);
    for (std::size_t t = 0; t < n; ++t) for (std::size_t j = 0; j < d; ++j) x[t][j] += proj[t][j];
    Matrix hid = linear(layer_norm(x, p + "ln2"), p + "mlp.w_in", p + "mlp.b_in", d, 4 * d);
    for (auto& r : hid) {
      for (auto& v : r) v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
    }
    const Matrix out = linear(hid, p + "mlp.w_out", p + "mlp.b_out", 4 * d, d);
    for (std::size_t t = 0; t < n; ++t) for (std::size_t j = 0; j < d; ++j) x[t][j] += out[t][j];
  }
  return linear(layer_norm(x, "lnf"), "head.weight", "head.bias", d, V);
}

inline double log_softmax_at(const std::vector<double>& row, std::size_t k) {
  double mx = -INFINITY;
  for (double v : row) mx = std::max(mx, v);
  double z = 0;
  for (double v : row) z += std::exp(v - mx);
  return row[k] - mx - std::log(z);
}

// log p(y | x) from the naive forward pass.
template <typename T>
double naive_log_prob(const ldalign::LMParams<T>& params, const ldalign::Tokens& x,
                      const ldalign::Tokens& y) {
  ldalign::Tokens seq{ldalign::kBos};
  seq.insert(seq.end(), x.begin(), x.end());
  seq.push_back(ldalign::kSep);
  const std::size_t first = seq.size();
  seq.insert(seq.end(), y.begin(), y.end());
  seq.push_back(ldalign::kEos);
  const Matrix logits = naive_logits(params, seq);
  double lp = 0;
  for (std::size_t t = first; t < seq.size(); ++t) lp += log_softmax_at(logits[t - 1], seq[t]);
  return lp;
}

// Standard (unweighted) DPO: mean of log(1 + exp(-z)) in long double.
inline double standard_dpo(const std::vector<double>& pw, const std::vector<double>& pl,
                           const std::vector<double>& rw, const std::vector<double>& rl,
                           double beta) {
  long double total = 0;
  for (std::size_t i = 0; i < pw.size(); ++i) {
    const long double z = static_cast<long double>(beta) *
                          ((static_cast<long double>(pw[i]) - rw[i]) - (static_cast<long double>(pl[i]) - rl[i]));
    total += z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
  }
  return static_cast<double>(total / pw.size());
}

inline ldalign::Tokens random_tokens(std::mt19937_64& rng, std::size_t n, int lo = 97, int hi = 122) {
  std::uniform_int_distribution<int> u(lo, hi);
  ldalign::Tokens t(n);
  for (auto& v : t) v = u(rng);
  return t;
}

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "ldalign-XXXXXX").string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace oracle
