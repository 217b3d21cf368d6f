#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "difsel/correspondence.hpp"
#include "difsel/extraction.hpp"
#include "difsel/image.hpp"

namespace difsel {

struct SegmentationDataset {
  std::string name;
  int num_classes = 0;
  std::vector<Sample> samples;
  std::vector<LabelMap> labels;  // aligned with samples
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Throws DataError when labels are unaligned, out of range or splits overlap.
void validate(const SegmentationDataset& dataset);

enum class SyntheticKind {
  Simple,   // background and discs, separable by colour
  Complex,  // background, discs, boxes and striped regions with shared colours
};

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::Simple;
  int count = 30;
  int size = 64;
  int test_count = 10;  // the last `test_count` samples form the test split
  std::uint64_t seed = 0;
};

SegmentationDataset make_synthetic(const SyntheticSpec& spec);

// Planted correspondences: each target image is a cyclic shift of its source
// image, keypoints follow the shift.
struct CorrespondenceDataset {
  std::string name;
  std::vector<Sample> samples;
  std::vector<PairAnnotation> pairs;
};

CorrespondenceDataset make_synthetic_pairs(int pairs, int size, int keypoints, std::uint64_t seed);

// "synthetic:<n>[:seed]", "synthetic-complex:<n>[:seed]", or a directory with
// images/ and labels/ (same file stems), optional train.txt / test.txt (one
// stem per line) and optional classes.txt (class count).
SegmentationDataset load_segmentation_dataset(const std::string& source);

// "synthetic-pairs:<n>[:seed]", or a directory with images/ and pairs/*.json
// in the SPair-71k layout.
CorrespondenceDataset load_correspondence_dataset(const std::string& source);

}  // namespace difsel
