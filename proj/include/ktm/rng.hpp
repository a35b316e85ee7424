#pragma once

#include <cstdint>
#include <random>

namespace ktm {

/// Independent random streams derived from one run seed.
enum class RngStream : std::uint64_t {
  init = 1,
  shuffle = 2,
  sampler = 3,
  folds = 4,
  generator = 5,
};

using Rng = std::mt19937_64;

/// Deterministically derives an engine for (seed, stream, index). Distinct
/// streams or indices give unrelated sequences.
Rng make_rng(std::uint64_t seed, RngStream stream, std::uint64_t index = 0);

}  // namespace ktm
