#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace rkb {

// Sample mean with its standard error, accumulated in index order so results
// do not depend on how the samples were produced.
struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t count = 0;
};

inline Estimate estimate(std::span<const double> samples) {
  Estimate e;
  e.count = samples.size();
  if (samples.empty()) return e;
  double sum = 0.0;
  for (double s : samples) sum += s;
  e.mean = sum / static_cast<double>(samples.size());
  if (samples.size() > 1) {
    double ss = 0.0;
    for (double s : samples) ss += (s - e.mean) * (s - e.mean);
    e.std_error = std::sqrt(ss / static_cast<double>(samples.size() - 1) / static_cast<double>(samples.size()));
  }
  return e;
}

// splitmix64 finalizer, used to spread (seed, stream) pairs over the seed space.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Independent generator per (seed, stream) pair. Path k always draws from
// stream k, so adding paths never changes earlier ones.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(mix64(mix64(seed) ^ mix64(stream + 0x6b62u)));
}

enum class Execution { serial, parallel };

}  // namespace rkb
