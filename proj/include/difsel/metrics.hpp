#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "difsel/image.hpp"

namespace difsel {

struct MiouResult {
  double score = 0;  // mean over classes with a non-empty union
  std::vector<std::optional<double>> per_class;  // nullopt: absent from both prediction and ground truth
  int counted_classes = 0;
};

// Pixels whose ground truth equals `ignore` are skipped. Throws ShapeError on
// size mismatch, DataError on out-of-range labels or when no class is scored.
MiouResult miou(std::span<const int> pred, std::span<const int> gt, int num_classes, int ignore = kIgnoreLabel);
MiouResult miou(const LabelMap& pred, const LabelMap& gt, int num_classes, int ignore = kIgnoreLabel);

struct Keypoint {
  double x = 0;
  double y = 0;
  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

// Box in pixels: origin and extent.
struct BBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;
};

struct KeypointPair {
  int src_width = 0;
  int src_height = 0;
  int trg_width = 0;
  int trg_height = 0;
  BBox trg_bbox;
  std::vector<Keypoint> src_kps;
  std::vector<Keypoint> trg_kps;  // aligned with src_kps
};

// Throws DataError when the lists are unaligned or a keypoint lies outside its image.
void validate(const KeypointPair& pair);

enum class PckVariant { Img, Bbox };

struct PckCounts {
  std::int64_t correct = 0;
  std::int64_t total = 0;
  std::vector<int> pair_correct;
  std::vector<int> pair_total;

  double pooled() const;          // correct / total over all keypoints
  double per_image_mean() const;  // mean of per-pair ratios, pairs without keypoints skipped
};

struct PCKResult {
  PckCounts img;
  PckCounts bbox;
};

// A prediction is correct iff its distance to the ground truth is at most
// alpha * max(h, w) of the target image (Img) or bounding box (Bbox).
// Throws DataError when there are no keypoints at all.
PckCounts pck(const std::vector<std::vector<Keypoint>>& predicted, const std::vector<KeypointPair>& pairs,
              PckVariant variant, double alpha = 0.1);
PCKResult pck_both(const std::vector<std::vector<Keypoint>>& predicted, const std::vector<KeypointPair>& pairs,
                   double alpha = 0.1);

}  // namespace difsel
