#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace coag {

/// Philox4x64-10 block function (Salmon et al., counter-based).
std::array<std::uint64_t, 4> philox4x64(std::array<std::uint64_t, 4> ctr,
                                        std::array<std::uint64_t, 2> key);

// Stream tags keep independent uses of one seed apart.
enum class StreamTag : std::uint64_t {
  init_count = 1,
  init_particle = 2,
  diffusion = 3,
  pair = 4,
  priority = 5,
  test = 99,
};

/// Counter-based stream keyed by (seed, tag) with a three-word entity address.
/// Draws depend only on the address, never on scheduling.
class KeyedStream {
 public:
  using result_type = std::uint64_t;

  KeyedStream(std::uint64_t seed, StreamTag tag, std::uint64_t a, std::uint64_t b = 0,
              std::uint64_t c = 0)
      : key_{seed, static_cast<std::uint64_t>(tag)}, ctr_{a, b, c, 0} {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();
  /// Uniform on the open interval (0,1).
  double uniform();
  double normal();

 private:
  std::array<std::uint64_t, 2> key_;
  std::array<std::uint64_t, 4> ctr_;
  std::array<std::uint64_t, 4> block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace coag
