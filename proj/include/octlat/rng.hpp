#pragma once

// Counter-based deterministic RNG. Every draw is a pure function of
// (seed, stream, draw index), so per-node and per-step noise is reproducible
// no matter what order the callers run in.

#include <cstdint>

#include "octlat/tensor.hpp"

namespace octlat {

namespace rng_detail {

inline uint64_t mix64(uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

inline uint64_t stateless(uint64_t seed, uint64_t stream, uint64_t index) {
  uint64_t h = mix64(seed + 0x9E3779B97F4A7C15ull);
  h = mix64(h ^ (stream * 0xD1342543DE82EF95ull + 0x2545F4914F6CDD1Dull));
  h = mix64(h ^ (index * 0x9E3779B97F4A7C15ull + 0x853C49E6748FEA9Bull));
  return h;
}

}  // namespace rng_detail

class Rng {
 public:
  Rng() = default;
  Rng(uint64_t seed, uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }

  // Independent sub-stream; label folding is collision-resistant enough for
  // the stream counts used here.
  Rng derive(uint64_t label) const {
    return Rng(seed_, rng_detail::mix64(stream_ ^ (label * 0xA24BAED4963EE407ull + 1)));
  }
  Rng derive(uint64_t a, uint64_t b) const { return derive(a).derive(b); }

  uint64_t next_u64() { return rng_detail::stateless(seed_, stream_, counter_++); }

  // [0, 1), 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Box-Muller; consumes two uniforms per pair, caches the second value.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // Keep log's argument away from zero.
    double r = std::sqrt(-2.0 * std::log1p(u1 - 1.0 + 0x1.0p-53));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive range
    uint64_t span = uint64_t(hi - lo + 1);
    return lo + int64_t(next_u64() % span);
  }

  Tensor normal_tensor(Shape shape) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = normal();
    return t;
  }

  Tensor uniform_tensor(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = lo + (hi - lo) * uniform();
    return t;
  }

 private:
  uint64_t seed_ = 0;
  uint64_t stream_ = 0;
  uint64_t counter_ = 0;
  double cached_ = 0;
  bool have_cached_ = false;
};

// i.i.d. standard normal draws for a fresh stream.
inline Tensor rng_normal(const Rng& rng, Shape shape) {
  Rng r = rng;
  return r.normal_tensor(std::move(shape));
}

}  // namespace octlat
