#pragma once

#include <cstdint>

#include "forms/model.hpp"

namespace forms {

// Synthetic image classification task: each class is a fixed mixture of
// Gaussian blobs; samples are shifted, rescaled, noisy copies clamped to [0, 1].
struct SyntheticSpec {
  Shape3 shape{1, 8, 8};
  std::size_t classes = 10;
  std::size_t train = 2000;
  std::size_t test = 1000;
  double noise = 0.3;
  int max_shift = 1;
  std::uint64_t seed = 1;
  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

struct SplitDataset {
  Dataset train;
  Dataset test;
};

SplitDataset make_synthetic(const SyntheticSpec& spec);

// First n samples of a dataset.
Dataset head(const Dataset& data, std::size_t n);

}  // namespace forms
