#pragma once

#include <array>
#include <cstdint>

namespace sos {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
class Philox {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      ctr = single_round(ctr, key);
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

  static Key key_from_seed(std::uint64_t seed) {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static Counter single_round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    return {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
            static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
  }
};

/// Uniform variates addressed by (seed, stream, chain, sweep, site). Two
/// chains with the same address see the same number.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(Philox::key_from_seed(seed)), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::array<std::uint32_t, 4> raw(std::uint32_t stream, std::uint32_t chain, std::uint64_t sweep,
                                   std::uint32_t site) const {
    const std::uint32_t hi = static_cast<std::uint32_t>(sweep >> 32) ^ (stream << 16);
    return Philox::generate({site, static_cast<std::uint32_t>(sweep), hi, chain}, key_);
  }

  /// Double in [0, 1) with 53 random bits.
  double uniform(std::uint32_t stream, std::uint32_t chain, std::uint64_t sweep, std::uint32_t site) const {
    const auto r = raw(stream, chain, sweep, site);
    const std::uint64_t bits = (static_cast<std::uint64_t>(r[0]) << 32 | r[1]) >> 11;
    return static_cast<double>(bits) * 0x1.0p-53;
  }

 private:
  Philox::Key key_;
  std::uint64_t seed_;
};

}  // namespace sos
