#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace ufcmil {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Counter-based generator: the stream is a pure function of the key tuple,
/// so any (seed, epoch, sample, layer) combination can be regenerated
/// independently of evaluation order or thread assignment.
class KeyedRng {
 public:
  using result_type = std::uint64_t;

  KeyedRng(std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = 0x243F6A8885A308D3ull;
    for (auto k : keys) h = splitmix64(h ^ splitmix64(k));
    key_ = h;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return splitmix64(key_ + 0xD1B54A32D192ED03ull * ++counter_); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return double((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform in the open interval (0, 1).
  double uniform_open() { return (double((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  std::uint64_t below(std::uint64_t n) { return (*this)() % n; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Stream identifiers used as the trailing key component.
enum class Stream : std::uint64_t {
  kInit = 1,
  kDropout = 2,
  kGumbel = 3,
  kShuffle = 4,
  kSynth = 5,
  kSplit = 6,
};

}  // namespace ufcmil
