#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "difsel/catalog.hpp"
#include "difsel/dataset.hpp"
#include "difsel/mlp.hpp"
#include "difsel/ranking.hpp"
#include "difsel/tensor.hpp"

namespace difsel {

struct ProbeConfig {
  int ensemble_size = 10;
  std::vector<int> hidden{128, 128};
  int epochs = 8;
  int batch_size = 4096;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int num_classes = 0;                // 0: taken from the dataset
  std::int64_t max_train_pixels = 0;  // 0: every labelled training pixel
};

// Throws ConfigError. Class count is checked only when set.
void validate(const ProbeConfig& config);

// `probe ensemble=10 hidden=128,128 epochs=8 batch=4096 lr=0.001 seed=0
//  classes=N max-train-pixels=N`; unspecified keys keep `base`.
ProbeConfig parse_probe_config(std::string_view text, ProbeConfig base = {});
std::string format_probe_config(const ProbeConfig& config);

struct PixelSet {
  PixelMatrix features;  // pixels x channels
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

// Upsamples `features` bilinearly to the label resolution and appends every
// labelled pixel.
void append_pixels(PixelSet& set, const Tensor3& features, const LabelMap& labels);

struct Standardizer {
  Eigen::RowVectorXf mean;
  Eigen::RowVectorXf inv_std;  // zero-variance channels map to 0

  static Standardizer fit(const PixelMatrix& x);
  PixelMatrix apply(const PixelMatrix& x) const;
};

class ProbeModel {
 public:
  ProbeModel(Standardizer standardizer, std::vector<Mlp> members, int classes, std::uint64_t seed);

  int channels() const noexcept { return static_cast<int>(standardizer_.mean.size()); }
  int classes() const noexcept { return classes_; }
  std::size_t ensemble_size() const noexcept { return members_.size(); }
  std::uint64_t seed() const noexcept { return seed_; }

  // Per-pixel majority vote of the members; ties go to the lowest class.
  std::vector<int> predict(const PixelMatrix& features) const;

 private:
  Standardizer standardizer_;
  std::vector<Mlp> members_;
  int classes_;
  std::uint64_t seed_;
};

// Throws ShapeError on inconsistent sizes, DataError when the training labels
// hold a single class.
ProbeModel train_probe(const PixelSet& train, const ProbeConfig& config);
ProbeResult evaluate_probe(const ProbeModel& model, const PixelSet& test);

// Seed of the probe for one (activation, dataset) job; independent of job order.
std::uint64_t probe_job_seed(std::uint64_t base, std::string_view activation, std::string_view dataset);

// Trains and scores one probe per (pool entry, dataset) from features in
// `<store_root>/<pool.architecture>/<dataset.name>`, then ranks them.
// Missing records are reported all at once before any training.
RankingReport run_comparison(const CandidatePool& pool, const std::filesystem::path& store_root,
                             const std::vector<const SegmentationDataset*>& datasets, const ProbeConfig& config,
                             int workers = 1);

}  // namespace difsel
