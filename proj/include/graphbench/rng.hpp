#pragma once

// Deterministic random streams. Everything downstream (generators, init,
// dropout, attacks, defenses) draws from an Rng handed to it by the caller;
// nothing touches global state, so a run is a pure function of its seeds.
//
// The generator is splitmix64 used in counter mode. Distributions are
// implemented here rather than taken from <random> because libstdc++ does
// not pin the bit-level behaviour of its distributions and we want output
// that is stable across compilers, not just across runs.

#include <cstdint>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

namespace graphbench {

namespace detail {

inline std::uint64_t splitmix_finalize(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    return detail::splitmix_finalize(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second draw of each pair is cached
  // so consecutive calls stay cheap and the stream layout stays fixed.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  // Uniform integer in [0, n). Lemire's multiply-shift; the tiny modulo bias
  // (< 2^-64 * n) is irrelevant here and the call is branch-free.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), in random order.
  std::vector<std::uint32_t> sample_without_replacement(std::uint32_t n, std::uint32_t k) {
    std::vector<std::uint32_t> pool(n);
    for (std::uint32_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::uint32_t> out;
    out.reserve(k);
    for (std::uint32_t i = 0; i < k && i < n; ++i) {
      std::uint32_t j = static_cast<std::uint32_t>(i + below(n - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Labelled seed derivation. Child streams are keyed by path-like labels
// ("attack/MEA0/seed=1/train"), so adding new grid dimensions or running
// cells in a different order never perturbs the draws of existing cells.
class SeedTree {
 public:
  explicit SeedTree(std::uint64_t root = 0) : seed_(root) {}

  std::uint64_t seed() const { return seed_; }

  SeedTree child(std::string_view label) const {
    std::uint64_t h = detail::fnv1a64(label, seed_ ^ 0xCBF29CE484222325ull);
    return SeedTree(detail::splitmix_finalize(detail::splitmix_finalize(h)));
  }

  SeedTree child(std::string_view label, std::uint64_t index) const {
    return child(std::string(label) + "/" + std::to_string(index));
  }

  Rng rng(std::string_view label) const { return Rng(child(label).seed()); }

 private:
  std::uint64_t seed_;
};

}  // namespace graphbench
