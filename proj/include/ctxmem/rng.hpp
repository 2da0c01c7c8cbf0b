#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

namespace ctxmem {

constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// SplitMix64 stream. Portable and deterministic across standard libraries,
/// which is why the library does not use <random> distributions.
class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed) : state_(seed) {}

  /// Independent stream for (seed, key); keys are frame ids, draw indices, ...
  static constexpr Rng keyed(std::uint64_t seed, std::uint64_t key) {
    return Rng(splitmix64_mix(seed ^ splitmix64_mix(key + 0x9e3779b97f4a7c15ULL)));
  }

  constexpr std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return splitmix64_mix(state_);
  }

  /// Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform in [0, n); n > 0. Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = next();
    while (v >= limit) v = next();
    return v % n;
  }

 private:
  std::uint64_t state_;
};

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[rng.below(i)]);
  }
}

/// `count` distinct elements chosen uniformly, returned in ascending order
/// of their position in `items`.
template <typename T>
std::vector<T> sample_without_replacement(std::span<const T> items, std::size_t count, Rng& rng) {
  if (count >= items.size()) return {items.begin(), items.end()};
  std::vector<std::size_t> idx(items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  std::vector<T> out;
  out.reserve(count);
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

}  // namespace ctxmem
