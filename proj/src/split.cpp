#include "dna/split.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dna/error.hpp"
#include "dna/rng.hpp"

namespace dna {

SampleSplit stratified_split(std::span<const Label> labels, double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw InputError("holdout_fraction must lie in (0, 1)");
  }
  Rng rng(seed);
  SampleSplit split;
  for (Label cls : {Label{0}, Label{1}}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) {
        members.push_back(i);
      }
    }
    const auto n_holdout = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(members.size())));
    if (n_holdout == 0 || n_holdout >= members.size()) {
      throw InputError("split leaves class " + std::to_string(cls) + " (" + std::to_string(members.size()) +
                       " samples) absent from one partition");
    }
    rng.shuffle(std::span(members));
    split.holdout.insert(split.holdout.end(), members.begin(), members.begin() + static_cast<long>(n_holdout));
    split.train.insert(split.train.end(), members.begin() + static_cast<long>(n_holdout), members.end());
  }
  std::ranges::sort(split.train);
  std::ranges::sort(split.holdout);
  return split;
}

}  // namespace dna
