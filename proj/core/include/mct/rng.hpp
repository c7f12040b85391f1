#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace mct {

// 64-bit FNV-1a, used for labelled RNG substreams and config hashes.
std::uint64_t fnv1a(std::string_view s);

std::uint64_t splitmix64(std::uint64_t x);

// Seedable, portable random source. The core generator is std::mt19937_64,
// whose output sequence is pinned by the standard, and every distribution
// below is implemented on top of its raw 64-bit output so that draws are
// identical across platforms and standard libraries.
//
// Stream splitting: child(tag) derives an independent substream by hashing
// (root seed, tag) through splitmix64. Each logical consumer (pi draw,
// transition noise, emissions, sequence sampling, model init, shuffling,
// clustering, ...) takes its own child so per-seed artifacts are stable no
// matter how much randomness the other consumers use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  Rng child(std::uint64_t tag) const;
  Rng child(std::string_view label) const { return child(fnv1a(label)); }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; the spare draw is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Gamma(shape, 1) via Marsaglia-Tsang, boosted for shape < 1.
  double gamma(double shape);

  // Dirichlet draw: independent gammas normalized to the simplex.
  std::vector<double> dirichlet(const std::vector<double>& alpha);

  // Index in [0, n) with probability proportional to weights[i].
  int categorical(const double* weights, int n);

  // Uniform integer in [0, n).
  int randint(int n);

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(randint(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  double spare_normal_ = 0.0;
  bool has_spare_normal_ = false;
};

}  // namespace mct
