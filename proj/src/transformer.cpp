#include "ldalign/transformer.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "ldalign/errors.hpp"

namespace ldalign {

void TransformerShape::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || context_len < 1 || vocab_size < 1) {
    throw ConfigError("transformer dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
}

TransformerLayout TransformerLayout::build(const TransformerShape& shape, ParamTable& table,
                                           const std::string& prefix) {
  shape.validate();
  using S = std::size_t;
  const S d = shape.d_model, v = shape.vocab_size, c = shape.context_len;
  TransformerLayout lay;
  lay.shape = shape;
  lay.begin = table.total();
  lay.tok_emb = table.add(prefix + "tok_emb", {v, d});
  lay.pos_emb = table.add(prefix + "pos_emb", {c, d});
  for (int l = 0; l < shape.n_layers; ++l) {
    const std::string p = prefix + "layer" + std::to_string(l) + ".";
    LayerOffsets o{};
    o.ln1_g = table.add(p + "ln1.gain", {d});
    o.ln1_b = table.add(p + "ln1.bias", {d});
    o.w_qkv = table.add(p + "attn.w_qkv", {d, 3 * d});
    o.b_qkv = table.add(p + "attn.b_qkv", {3 * d});
    o.w_o = table.add(p + "attn.w_out", {d, d});
    o.b_o = table.add(p + "attn.b_out", {d});
    o.ln2_g = table.add(p + "ln2.gain", {d});
    o.ln2_b = table.add(p + "ln2.bias", {d});
    o.w_1 = table.add(p + "mlp.w_in", {d, 4 * d});
    o.b_1 = table.add(p + "mlp.b_in", {4 * d});
    o.w_2 = table.add(p + "mlp.w_out", {4 * d, d});
    o.b_2 = table.add(p + "mlp.b_out", {d});
    lay.layers.push_back(o);
  }
  lay.lnf_g = table.add(prefix + "lnf.gain", {d});
  lay.lnf_b = table.add(prefix + "lnf.bias", {d});
  if (shape.with_head) {
    lay.head_w = table.add(prefix + "head.weight", {d, v});
    lay.head_b = table.add(prefix + "head.bias", {v});
  }
  lay.end = table.total();
  return lay;
}

template <typename T>
void init_transformer(const TransformerLayout& layout, std::span<T> params, Rng& rng) {
  const auto& s = layout.shape;
  const std::size_t d = s.d_model;
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill_normal = [&](std::size_t off, std::size_t n, double stddev) {
    for (std::size_t i = 0; i < n; ++i) params[off + i] = static_cast<T>(stddev * normal(rng));
  };
  auto fill_const = [&](std::size_t off, std::size_t n, T value) {
    for (std::size_t i = 0; i < n; ++i) params[off + i] = value;
  };
  const double resid_std = 0.02 / std::sqrt(2.0 * s.n_layers);
  fill_normal(layout.tok_emb, s.vocab_size * d, 0.02);
  fill_normal(layout.pos_emb, s.context_len * d, 0.01);
  for (const auto& o : layout.layers) {
    fill_const(o.ln1_g, d, T(1));
    fill_const(o.ln1_b, d, T(0));
    fill_normal(o.w_qkv, d * 3 * d, 0.02);
    fill_const(o.b_qkv, 3 * d, T(0));
    fill_normal(o.w_o, d * d, resid_std);
    fill_const(o.b_o, d, T(0));
    fill_const(o.ln2_g, d, T(1));
    fill_const(o.ln2_b, d, T(0));
    fill_normal(o.w_1, d * 4 * d, 0.02);
    fill_const(o.b_1, 4 * d, T(0));
    fill_normal(o.w_2, 4 * d * d, resid_std);
    fill_const(o.b_2, d, T(0));
  }
  fill_const(layout.lnf_g, d, T(1));
  fill_const(layout.lnf_b, d, T(0));
  if (s.with_head) {
    fill_normal(layout.head_w, d * s.vocab_size, 0.02);
    fill_const(layout.head_b, s.vocab_size, T(0));
  }
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename T>
using ConstMap = Eigen::Map<const MatR<T>>;
template <typename T>
using MutMap = Eigen::Map<MatR<T>>;
template <typename T>
using ConstRow = Eigen::Map<const RowVec<T>>;
template <typename T>
using MutRow = Eigen::Map<RowVec<T>>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
ConstMap<T> mat(std::span<const T> p, std::size_t off, Eigen::Index r, Eigen::Index c) {
  return ConstMap<T>(p.data() + off, r, c);
}
template <typename T>
ConstRow<T> row(std::span<const T> p, std::size_t off, Eigen::Index n) {
  return ConstRow<T>(p.data() + off, n);
}
template <typename T>
MutMap<T> gmat(std::span<T> g, std::size_t off, Eigen::Index r, Eigen::Index c) {
  return MutMap<T>(g.data() + off, r, c);
}
template <typename T>
MutRow<T> grow(std::span<T> g, std::size_t off, Eigen::Index n) {
  return MutRow<T>(g.data() + off, n);
}

template <typename T>
void layer_norm_forward(const MatR<T>& x, const ConstRow<T>& gain, const ConstRow<T>& bias,
                        MatR<T>& xhat, ColVec<T>& rstd, MatR<T>& y) {
  const Eigen::Index L = x.rows(), d = x.cols();
  xhat.resize(L, d);
  rstd.resize(L);
  y.resize(L, d);
  for (Eigen::Index t = 0; t < L; ++t) {
    const T mean = x.row(t).mean();
    const T var = (x.row(t).array() - mean).square().mean();
    const T r = T(1) / std::sqrt(var + T(kLnEps));
    rstd(t) = r;
    xhat.row(t) = (x.row(t).array() - mean) * r;
    y.row(t) = xhat.row(t).cwiseProduct(gain) + bias;
  }
}

// dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
template <typename T>
MatR<T> layer_norm_backward(const MatR<T>& dy, const MatR<T>& xhat, const ColVec<T>& rstd,
                            const ConstRow<T>& gain, MutRow<T> dgain, MutRow<T> dbias) {
  const Eigen::Index L = dy.rows(), d = dy.cols();
  dgain += dy.cwiseProduct(xhat).colwise().sum();
  dbias += dy.colwise().sum();
  MatR<T> dx(L, d);
  for (Eigen::Index t = 0; t < L; ++t) {
    const RowVec<T> dxhat = dy.row(t).cwiseProduct(gain);
    const T m1 = dxhat.mean();
    const T m2 = dxhat.cwiseProduct(xhat.row(t)).mean();
    dx.row(t) = rstd(t) * (dxhat.array() - m1 - xhat.row(t).array() * m2).matrix();
  }
  return dx;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::tanh(T(kGeluC) * (x + T(kGeluA) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  const T u = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  const T th = std::tanh(u);
  return T(0.5) * (T(1) + th) +
         T(0.5) * x * (T(1) - th * th) * T(kGeluC) * (T(1) + T(3 * kGeluA) * x * x);
}

}  // namespace

template <typename T>
void transformer_forward(const TransformerLayout& layout, std::span<const T> params,
                         std::span<const Token> tokens, const InjectedEmbedding<T>* inject,
                         ForwardCache<T>& cache) {
  const auto& s = layout.shape;
  const int L = static_cast<int>(tokens.size());
  const int d = s.d_model, H = s.n_heads, dh = s.head_dim();
  if (L == 0) throw ConfigError("transformer_forward: empty sequence");
  if (L > s.context_len) {
    throw LengthError("sequence of " + std::to_string(L) + " tokens exceeds context " +
                      std::to_string(s.context_len));
  }
  if (inject && (inject->position < 0 || inject->position >= L ||
                 static_cast<int>(inject->vector.size()) != d)) {
    throw ConfigError("invalid injected embedding");
  }

  cache.length = L;
  cache.injected_position.reset();
  if (inject) cache.injected_position = inject->position;

  const auto tok_emb = mat(params, layout.tok_emb, s.vocab_size, d);
  const auto pos_emb = mat(params, layout.pos_emb, s.context_len, d);
  MatR<T> x(L, d);
  for (int t = 0; t < L; ++t) {
    if (inject && t == inject->position) {
      x.row(t) = ConstRow<T>(inject->vector.data(), d) + pos_emb.row(t);
    } else {
      const Token id = tokens[t];
      if (id < 0 || id >= s.vocab_size) throw ConfigError("token id out of range");
      x.row(t) = tok_emb.row(id) + pos_emb.row(t);
    }
  }

  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  cache.layers.resize(s.n_layers);
  for (int l = 0; l < s.n_layers; ++l) {
    const auto& o = layout.layers[l];
    auto& c = cache.layers[l];
    c.x_in = x;
    layer_norm_forward(c.x_in, row(params, o.ln1_g, d), row(params, o.ln1_b, d), c.xhat1,
                       c.rstd1, c.a);
    c.qkv.noalias() = c.a * mat(params, o.w_qkv, d, 3 * d);
    c.qkv.rowwise() += row(params, o.b_qkv, 3 * d);
    c.o.setZero(L, d);
    c.probs.resize(H);
    for (int h = 0; h < H; ++h) {
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(d + h * dh, dh);
      const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
      MatR<T>& p = c.probs[h];
      p.noalias() = (q * k.transpose()) * scale;
      for (int i = 0; i < L; ++i) {
        auto r = p.row(i);
        const T mx = r.head(i + 1).maxCoeff();
        T sum = 0;
        for (int j = 0; j <= i; ++j) {
          r(j) = std::exp(r(j) - mx);
          sum += r(j);
        }
        r.head(i + 1) /= sum;
        for (int j = i + 1; j < L; ++j) r(j) = T(0);
      }
      c.o.middleCols(h * dh, dh).noalias() = p * v;
    }
    c.x_mid = c.x_in;
    c.x_mid.noalias() += c.o * mat(params, o.w_o, d, d);
    c.x_mid.rowwise() += row(params, o.b_o, d);

    layer_norm_forward(c.x_mid, row(params, o.ln2_g, d), row(params, o.ln2_b, d), c.xhat2,
                       c.rstd2, c.b);
    c.hpre.noalias() = c.b * mat(params, o.w_1, d, 4 * d);
    c.hpre.rowwise() += row(params, o.b_1, 4 * d);
    c.g = c.hpre.unaryExpr([](T v) { return gelu(v); });
    x = c.x_mid;
    x.noalias() += c.g * mat(params, o.w_2, 4 * d, d);
    x.rowwise() += row(params, o.b_2, d);
  }
  cache.x_final = std::move(x);
  layer_norm_forward(cache.x_final, row(params, layout.lnf_g, d), row(params, layout.lnf_b, d),
                     cache.xhatf, cache.rstdf, cache.hidden);
  if (s.with_head) {
    cache.logits.noalias() = cache.hidden * mat(params, layout.head_w, d, s.vocab_size);
    cache.logits.rowwise() += row(params, layout.head_b, s.vocab_size);
  } else {
    cache.logits.resize(0, 0);
  }
}

template <typename T>
void transformer_backward(const TransformerLayout& layout, std::span<const T> params,
                          std::span<const Token> tokens, const ForwardCache<T>& cache,
                          const MatR<T>* d_logits, const MatR<T>* d_hidden, std::span<T> grad,
                          RowVec<T>* d_injected) {
  const auto& s = layout.shape;
  const int L = cache.length;
  const int d = s.d_model, H = s.n_heads, dh = s.head_dim(), V = s.vocab_size;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  MatR<T> dh_final = MatR<T>::Zero(L, d);
  if (d_logits) {
    if (!s.with_head) throw ConfigError("logit gradient given for a headless transformer");
    gmat(grad, layout.head_w, d, V).noalias() += cache.hidden.transpose() * (*d_logits);
    grow(grad, layout.head_b, V) += d_logits->colwise().sum();
    dh_final.noalias() += (*d_logits) * mat(params, layout.head_w, d, V).transpose();
  }
  if (d_hidden) dh_final += *d_hidden;

  MatR<T> dx = layer_norm_backward(dh_final, cache.xhatf, cache.rstdf,
                                   row(params, layout.lnf_g, d), grow(grad, layout.lnf_g, d),
                                   grow(grad, layout.lnf_b, d));

  for (int l = s.n_layers - 1; l >= 0; --l) {
    const auto& o = layout.layers[l];
    const auto& c = cache.layers[l];

    // MLP branch: x_out = x_mid + gelu(ln2(x_mid) W1 + b1) W2 + b2
    gmat(grad, o.w_2, 4 * d, d).noalias() += c.g.transpose() * dx;
    grow(grad, o.b_2, d) += dx.colwise().sum();
    MatR<T> dhpre = dx * mat(params, o.w_2, 4 * d, d).transpose();
    dhpre.array() *= c.hpre.unaryExpr([](T v) { return gelu_grad(v); }).array();
    gmat(grad, o.w_1, d, 4 * d).noalias() += c.b.transpose() * dhpre;
    grow(grad, o.b_1, 4 * d) += dhpre.colwise().sum();
    const MatR<T> db = dhpre * mat(params, o.w_1, d, 4 * d).transpose();
    MatR<T> dx_mid = dx + layer_norm_backward(db, c.xhat2, c.rstd2, row(params, o.ln2_g, d),
                                              grow(grad, o.ln2_g, d), grow(grad, o.ln2_b, d));

    // Attention branch: x_mid = x_in + attn(ln1(x_in)) Wo + bo
    gmat(grad, o.w_o, d, d).noalias() += c.o.transpose() * dx_mid;
    grow(grad, o.b_o, d) += dx_mid.colwise().sum();
    const MatR<T> d_o = dx_mid * mat(params, o.w_o, d, d).transpose();
    MatR<T> dqkv(L, 3 * d);
    for (int h = 0; h < H; ++h) {
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(d + h * dh, dh);
      const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
      const MatR<T>& p = c.probs[h];
      const auto doh = d_o.middleCols(h * dh, dh);
      MatR<T> dp = doh * v.transpose();
      dqkv.middleCols(2 * d + h * dh, dh).noalias() = p.transpose() * doh;
      const ColVec<T> rowdot = dp.cwiseProduct(p).rowwise().sum();
      MatR<T> ds = p.cwiseProduct((dp.colwise() - rowdot)) * scale;
      dqkv.middleCols(h * dh, dh).noalias() = ds * k;
      dqkv.middleCols(d + h * dh, dh).noalias() = ds.transpose() * q;
    }
    gmat(grad, o.w_qkv, d, 3 * d).noalias() += c.a.transpose() * dqkv;
    grow(grad, o.b_qkv, 3 * d) += dqkv.colwise().sum();
    const MatR<T> da = dqkv * mat(params, o.w_qkv, d, 3 * d).transpose();
    dx = dx_mid + layer_norm_backward(da, c.xhat1, c.rstd1, row(params, o.ln1_g, d),
                                      grow(grad, o.ln1_g, d), grow(grad, o.ln1_b, d));
  }

  auto dtok = gmat(grad, layout.tok_emb, s.vocab_size, d);
  auto dpos = gmat(grad, layout.pos_emb, s.context_len, d);
  for (int t = 0; t < L; ++t) {
    dpos.row(t) += dx.row(t);
    if (cache.injected_position && *cache.injected_position == t) {
      if (d_injected) *d_injected = dx.row(t);
    } else {
      dtok.row(tokens[t]) += dx.row(t);
    }
  }
}

template <typename T>
IncrementalDecoder<T>::IncrementalDecoder(const TransformerLayout& layout,
                                          std::span<const T> params)
    : layout_(layout), params_(params) {
  if (!layout.shape.with_head) throw ConfigError("incremental decoding needs an output head");
  keys_.resize(layout.shape.n_layers);
  values_.resize(layout.shape.n_layers);
  for (int l = 0; l < layout.shape.n_layers; ++l) {
    keys_[l].resize(layout.shape.context_len, layout.shape.d_model);
    values_[l].resize(layout.shape.context_len, layout.shape.d_model);
  }
}

template <typename T>
const RowVec<T>& IncrementalDecoder<T>::step(Token token) {
  const auto& s = layout_.shape;
  const int d = s.d_model, H = s.n_heads, dh = s.head_dim();
  if (pos_ >= s.context_len) throw LengthError("incremental decoder ran past the context window");
  if (token < 0 || token >= s.vocab_size) throw ConfigError("token id out of range");
  const auto& p = params_;
  auto ln = [d](const RowVec<T>& x, const ConstRow<T>& g, const ConstRow<T>& b) {
    const T mean = x.mean();
    const T var = (x.array() - mean).square().mean();
    const T r = T(1) / std::sqrt(var + T(kLnEps));
    return RowVec<T>(((x.array() - mean) * r).matrix().cwiseProduct(g) + b);
  };

  RowVec<T> x = mat(p, layout_.tok_emb, s.vocab_size, d).row(token) +
                mat(p, layout_.pos_emb, s.context_len, d).row(pos_);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const int n = pos_ + 1;
  for (int l = 0; l < s.n_layers; ++l) {
    const auto& o = layout_.layers[l];
    const RowVec<T> a = ln(x, row(p, o.ln1_g, d), row(p, o.ln1_b, d));
    RowVec<T> qkv = a * mat(p, o.w_qkv, d, 3 * d) + row(p, o.b_qkv, 3 * d);
    keys_[l].row(pos_) = qkv.segment(d, d);
    values_[l].row(pos_) = qkv.segment(2 * d, d);
    RowVec<T> att(d);
    for (int h = 0; h < H; ++h) {
      const auto q = qkv.segment(h * dh, dh);
      const auto k = keys_[l].block(0, h * dh, n, dh);
      const auto v = values_[l].block(0, h * dh, n, dh);
      RowVec<T> sc = (q * k.transpose()) * scale;
      const T mx = sc.maxCoeff();
      sc = (sc.array() - mx).exp().matrix();
      sc /= sc.sum();
      att.segment(h * dh, dh).noalias() = sc * v;
    }
    x += att * mat(p, o.w_o, d, d) + row(p, o.b_o, d);
    const RowVec<T> b = ln(x, row(p, o.ln2_g, d), row(p, o.ln2_b, d));
    RowVec<T> hid = b * mat(p, o.w_1, d, 4 * d) + row(p, o.b_1, 4 * d);
    hid = hid.unaryExpr([](T v) { return gelu(v); });
    x += hid * mat(p, o.w_2, 4 * d, d) + row(p, o.b_2, d);
  }
  const RowVec<T> f = ln(x, row(p, layout_.lnf_g, d), row(p, layout_.lnf_b, d));
  logits_ = f * mat(p, layout_.head_w, d, s.vocab_size) + row(p, layout_.head_b, s.vocab_size);
  ++pos_;
  return logits_;
}

template void init_transformer<float>(const TransformerLayout&, std::span<float>, Rng&);
template void init_transformer<double>(const TransformerLayout&, std::span<double>, Rng&);
template void transformer_forward<float>(const TransformerLayout&, std::span<const float>,
                                         std::span<const Token>,
                                         const InjectedEmbedding<float>*, ForwardCache<float>&);
template void transformer_forward<double>(const TransformerLayout&, std::span<const double>,
                                          std::span<const Token>,
                                          const InjectedEmbedding<double>*,
                                          ForwardCache<double>&);
template void transformer_backward<float>(const TransformerLayout&, std::span<const float>,
                                          std::span<const Token>, const ForwardCache<float>&,
                                          const MatR<float>*, const MatR<float>*,
                                          std::span<float>, RowVec<float>*);
template void transformer_backward<double>(const TransformerLayout&, std::span<const double>,
                                           std::span<const Token>, const ForwardCache<double>&,
                                           const MatR<double>*, const MatR<double>*,
                                           std::span<double>, RowVec<double>*);
template class IncrementalDecoder<float>;
template class IncrementalDecoder<double>;

}  // namespace ldalign
