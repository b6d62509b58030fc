#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ldalign {

// Flat buffers with a fixed base alignment. Eigen picks its vectorized
// reduction order from the address of each mapped block, so an unaligned heap
// buffer would make results vary from run to run in the last bits.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

struct ParamEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Named views into one flat parameter buffer. Optimizers, checkpoints and
// gradient checks all work on the flat buffer; model code uses the offsets.
class ParamTable {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t total() const { return total_; }
  const ParamEntry& find(const std::string& name) const;

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

// SHA-256 over the raw little-endian image of the values. Used for
// checkpoint manifests and immutability assertions.
std::string content_hash(std::span<const float> values);
std::string content_hash(std::span<const double> values);
std::string sha256_hex(std::span<const std::uint8_t> bytes);

template <typename To, typename From>
std::vector<To> cast_values(std::span<const From> from) {
  return std::vector<To>(from.begin(), from.end());
}

bool all_finite(std::span<const float> values);
bool all_finite(std::span<const double> values);

}  // namespace ldalign
