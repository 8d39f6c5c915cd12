#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace drivefix {

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// A labelled deterministic random stream. All randomness in the pipeline is
// drawn from streams derived as seed x label, so every stochastic choice can
// be replayed from the manifest.
class RngStream {
 public:
  RngStream() : gen_(0) {}
  RngStream(uint64_t seed, std::string_view label) {
    uint64_t s = seed ^ fnv1a64(label);
    // decorrelate nearby seeds before seeding the engine
    uint64_t a = splitmix64(s);
    uint64_t b = splitmix64(s);
    std::seed_seq seq{static_cast<uint32_t>(a), static_cast<uint32_t>(a >> 32),
                      static_cast<uint32_t>(b), static_cast<uint32_t>(b >> 32)};
    gen_.seed(seq);
  }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }
  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
    return std::uniform_int_distribution<int64_t>(lo, hi)(gen_);
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

// Root of a seed hierarchy: fan out labelled sub-streams from one seed.
class SeedBank {
 public:
  explicit SeedBank(uint64_t seed) : seed_(seed) {}
  RngStream stream(std::string_view label) const { return RngStream(seed_, label); }
  uint64_t derive(std::string_view label) const { return seed_ ^ fnv1a64(label); }
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
};

}  // namespace drivefix
