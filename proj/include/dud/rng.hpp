#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace dud {

/// Seeded random stream. All randomness in the library goes through this type so that
/// runs are reproducible and the state can be checkpointed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  float normal() { return normal_(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
  }
  static Rng deserialize(const std::string& text) {
    Rng rng;
    std::istringstream is(text);
    is >> rng.engine_ >> rng.normal_;
    return rng;
  }

  friend bool operator==(const Rng& a, const Rng& b) {
    return a.engine_ == b.engine_ && a.normal_ == b.normal_;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<float> normal_{0.0f, 1.0f};
};

/// Derive an independent child seed from (master, index); order-independent.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace dud
