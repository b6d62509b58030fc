#include "ldalign/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ldalign/errors.hpp"
#include "ldalign/parallel.hpp"

namespace ldalign {

Adam::Adam(std::size_t n_params, AdamConfig config)
    : cfg_(config), m_(n_params, 0.0), v_(n_params, 0.0) {
  if (!(cfg_.lr > 0.0)) throw ConfigError("learning rate must be positive");
}

void Adam::step(std::span<float> params, std::span<float> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw ConfigError("optimizer size mismatch");
  }
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (float g : grad) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) {
      const auto s = static_cast<float>(cfg_.grad_clip / norm);
      for (float& g : grad) g *= s;
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
  }
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_size_(batch_size), rng_(derive_seed({seed, 0x6261746368ULL})), order_(n) {
  if (n == 0) throw ConfigError("cannot sample batches from an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::iota(order_.begin(), order_.end(), 0);
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = n_ - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng_) * static_cast<double>(i + 1));
    std::swap(order_[i], order_[std::min(j, i)]);
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> batch;
  batch.reserve(batch_size_);
  while (batch.size() < batch_size_) {
    if (cursor_ == n_) reshuffle();
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

template <typename T>
double accumulate_items(std::size_t n_items, std::span<T> grad,
                        const std::function<double(std::size_t, std::span<T>)>& fn) {
  std::vector<AlignedVector<T>> grads(n_items, AlignedVector<T>(grad.size(), T(0)));
  std::vector<double> losses(n_items, 0.0);
  parallel_for(n_items, [&](std::size_t i) { losses[i] = fn(i, grads[i]); });
  AlignedVector<T> total(grad.size(), T(0));
  pairwise_sum(grads, total);
  std::copy(total.begin(), total.end(), grad.begin());
  return pairwise_sum(std::span<const double>(losses));
}

template double accumulate_items<float>(std::size_t, std::span<float>,
                                        const std::function<double(std::size_t, std::span<float>)>&);
template double accumulate_items<double>(
    std::size_t, std::span<double>, const std::function<double(std::size_t, std::span<double>)>&);

}  // namespace ldalign
