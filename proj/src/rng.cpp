#include "ktm/rng.hpp"

namespace ktm {

Rng make_rng(std::uint64_t seed, RngStream stream, std::uint64_t index) {
  const auto lo = [](std::uint64_t x) { return static_cast<std::uint32_t>(x); };
  const auto hi = [](std::uint64_t x) { return static_cast<std::uint32_t>(x >> 32); };
  const auto s = static_cast<std::uint64_t>(stream);
  std::seed_seq seq{lo(seed), hi(seed), lo(s), hi(s), lo(index), hi(index)};
  return Rng(seq);
}

}  // namespace ktm
