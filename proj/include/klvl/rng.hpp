#ifndef KLVL_RNG_HPP
#define KLVL_RNG_HPP

#include <cmath>
#include <cstdint>

namespace klvl {

// Purpose tag of a random stream. Keying draws by (seed, purpose, level,
// index) keeps dataset generation, index sampling and neighbor replacement
// on disjoint streams, which is what makes coupled reruns reproducible.
enum class stream : std::uint64_t {
  dataset_payload = 1,
  neighbor_draw = 2,
  sample_index = 3,
  init_index = 4,
  base_map = 5,
  planted_target = 6,
  monte_carlo = 7,
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

// Counter-based splittable stream. Every draw is a pure function of the
// key and the draw counter; normal() always consumes exactly two words so
// consumption patterns never depend on drawn values.
class rng_stream {
 public:
  rng_stream(std::uint64_t seed, stream purpose, std::uint64_t level = 0,
             std::uint64_t index = 0) {
    key_ = detail::mix64(seed + 0x9e3779b97f4a7c15ull);
    key_ = detail::mix64(key_ ^
                         (static_cast<std::uint64_t>(purpose) * 0xff51afd7ed558ccdull));
    key_ = detail::mix64(key_ ^ (level + 0x94d049bb133111ebull));
    key_ = detail::mix64(key_ ^ (index + 0x2545f4914f6cdd1dull));
  }

  std::uint64_t next_u64() {
    return detail::mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ull);
  }

  // [0, 1)
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; u1 is kept in (0, 1].
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  // [0, n)
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace klvl

#endif  // KLVL_RNG_HPP
