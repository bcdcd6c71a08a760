#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace dferc {

// Deterministic, serializable PRNG (splitmix64 core). Every run derives all
// of its randomness from one root seed through named substreams so that the
// data, init, dropout and shuffle streams can be perturbed independently.
// State is a single u64, which keeps checkpoint serialization trivial and
// results bit-stable across platforms (no libstdc++ distribution internals).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the sine mate is discarded so the
  // generator state stays a single u64.
  double normal();

  // Uniform integer in [0, n), n > 0. Lemire's unbiased method.
  std::uint64_t below(std::uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

  static std::uint64_t mix(std::uint64_t x);
  static std::uint64_t hash_name(std::string_view name);

  // Seed for the substream identified by (root, name, index).
  static std::uint64_t substream_seed(std::uint64_t root, std::string_view name,
                                      std::uint64_t index = 0);
  static Rng substream(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
    return Rng(substream_seed(root, name, index));
  }

 private:
  std::uint64_t state_;
};

}  // namespace dferc
