#include "difsel/metrics.hpp"

#include <algorithm>
#include <string>

#include "difsel/error.hpp"

namespace difsel {

MiouResult miou(std::span<const int> pred, std::span<const int> gt, int num_classes, int ignore) {
  if (pred.size() != gt.size()) throw ShapeError("prediction and ground truth differ in size");
  if (num_classes < 1) throw DataError("class count must be positive");
  std::vector<std::int64_t> inter(num_classes, 0), pred_count(num_classes, 0), gt_count(num_classes, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore) continue;
    if (gt[i] < 0 || gt[i] >= num_classes) throw DataError("ground-truth label " + std::to_string(gt[i]) + " out of range");
    if (pred[i] < 0 || pred[i] >= num_classes) throw DataError("predicted label " + std::to_string(pred[i]) + " out of range");
    ++gt_count[gt[i]];
    ++pred_count[pred[i]];
    if (pred[i] == gt[i]) ++inter[gt[i]];
  }
  MiouResult r;
  r.per_class.resize(num_classes);
  double sum = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto uni = gt_count[c] + pred_count[c] - inter[c];
    if (uni == 0) continue;
    r.per_class[c] = static_cast<double>(inter[c]) / static_cast<double>(uni);
    sum += *r.per_class[c];
    ++r.counted_classes;
  }
  if (r.counted_classes == 0) throw DataError("no evaluated pixels");
  r.score = sum / r.counted_classes;
  return r;
}

MiouResult miou(const LabelMap& pred, const LabelMap& gt, int num_classes, int ignore) {
  if (pred.width != gt.width || pred.height != gt.height) throw ShapeError("prediction and ground truth differ in size");
  return miou(pred.labels, gt.labels, num_classes, ignore);
}

void validate(const KeypointPair& pair) {
  if (pair.src_kps.size() != pair.trg_kps.size()) throw DataError("source and target keypoints are not aligned");
  auto inside = [](const Keypoint& k, int w, int h) { return k.x >= 0 && k.y >= 0 && k.x <= w && k.y <= h; };
  for (const auto& k : pair.src_kps) {
    if (!inside(k, pair.src_width, pair.src_height)) throw DataError("source keypoint outside the image");
  }
  for (const auto& k : pair.trg_kps) {
    if (!inside(k, pair.trg_width, pair.trg_height)) throw DataError("target keypoint outside the image");
  }
}

double PckCounts::pooled() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }

double PckCounts::per_image_mean() const {
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < pair_total.size(); ++i) {
    if (pair_total[i] == 0) continue;
    sum += static_cast<double>(pair_correct[i]) / pair_total[i];
    ++n;
  }
  return n ? sum / n : 0.0;
}

PckCounts pck(const std::vector<std::vector<Keypoint>>& predicted, const std::vector<KeypointPair>& pairs,
              PckVariant variant, double alpha) {
  if (predicted.size() != pairs.size()) throw DataError("one prediction list per pair expected");
  if (!(alpha > 0)) throw DataError("alpha must be positive");
  PckCounts out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (predicted[i].size() != p.trg_kps.size()) throw DataError("prediction count differs from keypoint count");
    const double extent = variant == PckVariant::Img ? std::max(p.trg_width, p.trg_height)
                                                     : std::max(p.trg_bbox.w, p.trg_bbox.h);
    const double r = alpha * extent;
    int ok = 0;
    for (std::size_t k = 0; k < p.trg_kps.size(); ++k) {
      const double dx = predicted[i][k].x - p.trg_kps[k].x;
      const double dy = predicted[i][k].y - p.trg_kps[k].y;
      if (dx * dx + dy * dy <= r * r) ++ok;
    }
    out.pair_correct.push_back(ok);
    out.pair_total.push_back(static_cast<int>(p.trg_kps.size()));
    out.correct += ok;
    out.total += static_cast<std::int64_t>(p.trg_kps.size());
  }
  if (out.total == 0) throw DataError("PCK is undefined without keypoints");
  return out;
}

PCKResult pck_both(const std::vector<std::vector<Keypoint>>& predicted, const std::vector<KeypointPair>& pairs,
                   double alpha) {
  return {pck(predicted, pairs, PckVariant::Img, alpha), pck(predicted, pairs, PckVariant::Bbox, alpha)};
}

}  // namespace difsel
