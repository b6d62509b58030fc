#include "ldalign/params.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "ldalign/errors.hpp"

namespace ldalign {

static_assert(std::endian::native == std::endian::little,
              "checkpoint images assume a little-endian host");

std::size_t ParamTable::add(std::string name, std::vector<std::size_t> shape) {
  const std::size_t size = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                           std::multiplies<>());
  ParamEntry e{std::move(name), std::move(shape), total_, size};
  entries_.push_back(std::move(e));
  total_ += size;
  return entries_.back().offset;
}

const ParamEntry& ParamTable::find(const std::string& name) const {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const ParamEntry& e) { return e.name == name; });
  if (it == entries_.end()) throw ConfigError("unknown parameter array: " + name);
  return *it;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string content_hash(std::span<const float> values) {
  return sha256_hex({reinterpret_cast<const std::uint8_t*>(values.data()),
                     values.size() * sizeof(float)});
}

std::string content_hash(std::span<const double> values) {
  return sha256_hex({reinterpret_cast<const std::uint8_t*>(values.data()),
                     values.size() * sizeof(double)});
}

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace ldalign
