#include "difsel/protocols.hpp"

#include <algorithm>
#include <cmath>

#include "difsel/error.hpp"

namespace difsel {

LabelScarceResult label_scarce_protocol(const FeatureSource& features, const SegmentationDataset& dataset,
                                        const ProbeConfig& probe, const LabelScarceConfig& config) {
  validate(dataset);
  if (config.splits < 1 || config.train_size < 1) throw ConfigError("splits and train size must be positive");
  if (dataset.train.size() < static_cast<std::size_t>(config.train_size)) {
    throw DataError("dataset '" + dataset.name + "' has " + std::to_string(dataset.train.size()) +
                    " training images, the protocol needs " + std::to_string(config.train_size));
  }
  if (dataset.test.empty()) throw DataError("dataset '" + dataset.name + "' has no test images");

  PixelSet test;
  for (auto i : dataset.test) append_pixels(test, features(i), dataset.labels[i]);

  LabelScarceResult result;
  for (int s = 0; s < config.splits; ++s) {
    auto pool = dataset.train;
    stable_shuffle(pool, config.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(s));
    pool.resize(static_cast<std::size_t>(config.train_size));
    std::sort(pool.begin(), pool.end());
    PixelSet train;
    for (auto i : pool) append_pixels(train, features(i), dataset.labels[i]);
    ProbeConfig c = probe;
    if (c.num_classes == 0) c.num_classes = dataset.num_classes;
    if (config.reseed_probe) c.seed = probe.seed + static_cast<std::uint64_t>(s);
    result.scores.push_back(evaluate_probe(train_probe(train, c), test).score);
  }
  // Shifted by the first score so that equal scores give exactly zero spread.
  const double x0 = result.scores.front();
  double sum = 0, sq = 0;
  for (double v : result.scores) {
    sum += v - x0;
    sq += (v - x0) * (v - x0);
  }
  const auto n = static_cast<double>(result.scores.size());
  result.mean = x0 + sum / n;
  if (result.scores.size() > 1) result.stddev = std::sqrt(std::max(0.0, (sq - sum * sum / n) / (n - 1)));
  return result;
}

}  // namespace difsel
