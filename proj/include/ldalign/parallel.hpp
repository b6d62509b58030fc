#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ldalign/params.hpp"

namespace ldalign {

// Worker count used by parallel_for. 0 selects hardware concurrency.
void set_num_threads(std::size_t n);
std::size_t num_threads();

// Runs fn(i) for i in [0, n). Work items must write only to their own slots;
// callers reduce the slots afterwards in a fixed order, so results never
// depend on scheduling. Exceptions from workers are rethrown (first index
// wins).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Sums equally sized vectors with a fixed pairwise tree: ((0+1)+(2+3))+...
// The inputs are consumed (used as scratch). Result lands in out.
template <typename T>
void pairwise_sum(std::vector<AlignedVector<T>>& parts, AlignedVector<T>& out);

// Scalar variant of the same tree.
double pairwise_sum(std::span<const double> values);

}  // namespace ldalign
