#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dna/tensor_store.hpp"

namespace dna {

struct SampleSplit {
  std::vector<std::size_t> train;    // ascending sample indices
  std::vector<std::size_t> holdout;  // ascending sample indices
};

/// Seeded stratified split: each class contributes round(n_c * holdout_fraction)
/// samples to the holdout side. Throws InputError when either side would miss
/// a class.
SampleSplit stratified_split(std::span<const Label> labels, double holdout_fraction, std::uint64_t seed);

}  // namespace dna
