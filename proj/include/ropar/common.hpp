#pragma once

#include <cstddef>
#include <cstdio>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <ATen/core/Generator.h>

namespace ropar {

/// Failure categories. The CLI maps these onto its exit codes.
enum class ErrorKind { Config, Data, Divergence };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_data(const std::string& msg) {
  throw Error(ErrorKind::Data, msg);
}
[[noreturn]] inline void fail_config(const std::string& msg) {
  throw Error(ErrorKind::Config, msg);
}

/// Dense row-major 2-D array.
template <typename T>
struct Array2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Array2() = default;
  Array2(std::size_t r, std::size_t c, T fill = T{})
      : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  bool operator==(const Array2&) const = default;
};

/// Bool arrays are stored as bytes so that element references work.
using BoolArray2 = Array2<std::uint8_t>;

/// 64-bit FNV-1a; used for seed derivation and config hashing.
constexpr std::uint64_t fnv1a(std::string_view s,
                              std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Seed of the named substream `name` under `root`.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view name) {
  return splitmix64(fnv1a(name, splitmix64(root)));
}
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  return splitmix64(splitmix64(root) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Seeded random source. Scalar draws come from a Mersenne twister; tensor
/// draws from a torch CPU generator seeded off the same root.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  Rng substream(std::string_view name) const { return Rng(derive_seed(seed_, name)); }
  Rng substream(std::uint64_t index) const { return Rng(derive_seed(seed_, index)); }

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }
  at::Generator& torch() { return torch_; }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  at::Generator torch_;
};

}  // namespace ropar
