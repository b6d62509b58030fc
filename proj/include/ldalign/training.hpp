#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ldalign/rng.hpp"

namespace ldalign {

// Receives (step, loss) after every optimizer step.
using StepCallback = std::function<void(int, double)>;

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
};

class Adam {
 public:
  Adam(std::size_t n_params, AdamConfig config);

  // Clips `grad` in place, then updates `params`.
  void step(std::span<float> params, std::span<float> grad);
  long steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

// Epoch-wise shuffled minibatches of indices in [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  void reshuffle();
  std::size_t n_, batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Evaluates fn(i, grad_i) for every item with a private zeroed gradient
// buffer, then sums losses and gradients with a fixed pairwise tree. Returns
// the summed loss; `grad` receives the summed gradient.
template <typename T>
double accumulate_items(std::size_t n_items, std::span<T> grad,
                        const std::function<double(std::size_t, std::span<T>)>& fn);

}  // namespace ldalign
