#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "difsel/dataset.hpp"
#include "difsel/probing.hpp"

namespace difsel {

// Dense features of one dataset sample, by index.
using FeatureSource = std::function<Tensor3(std::size_t sample)>;

struct LabelScarceConfig {
  int splits = 5;
  int train_size = 30;
  std::uint64_t seed = 0;
  bool reseed_probe = true;  // a different probe seed per split
};

struct LabelScarceResult {
  std::vector<double> scores;  // one mIoU per split
  double mean = 0;
  double stddev = 0;  // sample standard deviation; 0 for a single split
};

// Each split draws `train_size` images from the training split, trains the
// probe ensemble on them and scores it on the test split.
LabelScarceResult label_scarce_protocol(const FeatureSource& features, const SegmentationDataset& dataset,
                                        const ProbeConfig& probe, const LabelScarceConfig& config = {});

}  // namespace difsel
