#pragma once

#include <cmath>
#include <cstdint>

namespace ccv {

// SplitMix64 (Steele, Lea, Flood 2014). Chosen as the project-wide PRNG
// because the whole generator is a dozen lines that any language can
// reproduce; every dataset, split and context draw is a pure function of
// the seeds fed through this one algorithm. The stream-derivation and
// bounded/real/gaussian mappings below are part of the pinned contract
// (see README) and must not change.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53 random bits.
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [lo,hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0,n). Plain modulo: the bias is irrelevant here and
  // the mapping is trivially portable.
  uint64_t next_below(uint64_t n) { return next() % n; }

  // Standard normal via Box-Muller; draws two uniforms per pair of values.
  double gauss() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    // Avoid log(0).
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream seed from (seed, tag). Used everywhere a
// keyed sub-stream is needed: (master, task_id), (task, instance), ...
inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
  SplitMix64 g(seed ^ (tag * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
  return g.next();
}

}  // namespace ccv
