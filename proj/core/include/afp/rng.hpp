#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace afp {

// SplitMix64 finaliser; derives independent seeds from (seed, stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// std::mt19937_64 with hand-rolled draws. The standard distributions are
// implementation-defined, so draws are built directly from the raw 64-bit
// output to keep sequences identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Integer in [lo, hi].
  int uniform_int(int lo, int hi);

  std::string state() const;
  void set_state(const std::string& text);

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::mt19937_64 engine_;
};

}  // namespace afp
