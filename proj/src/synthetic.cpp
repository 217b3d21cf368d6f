#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>

#include "difsel/dataset.hpp"
#include "difsel/error.hpp"

namespace difsel {

namespace {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double range(double lo, double hi) { return lo + (hi - lo) * unit(); }
  int below(int n) { return static_cast<int>(engine_() % static_cast<std::uint64_t>(n)); }
  double normal() {
    const double u = unit() + 0x1.0p-54;
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586 * unit());
  }

 private:
  std::mt19937_64 engine_;
};

using Rgb = std::array<double, 3>;

std::string key(const char* prefix, int i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s-%04d", prefix, i);
  return buf;
}

void paint(Image& img, LabelMap& lab, Rng& rng, int y, int x, int cls, const Rgb& base, double noise) {
  for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(std::clamp(base[c] + noise * rng.normal(), 0.0, 1.0));
  lab.at(y, x) = cls;
}

struct Drawn {
  Image image;
  LabelMap labels;
};

Drawn draw(SyntheticKind kind, int size, Rng& rng) {
  Drawn d{Image(size, size, 3), LabelMap(size, size, 0)};
  const double jitter = kind == SyntheticKind::Simple ? 0.05 : 0.12;
  auto tint = [&](Rgb c) {
    for (auto& v : c) v += jitter * rng.normal();
    return c;
  };
  const Rgb background = tint(kind == SyntheticKind::Simple ? Rgb{0.15, 0.2, 0.45} : Rgb{0.45, 0.45, 0.45});
  const Rgb disc = tint(kind == SyntheticKind::Simple ? Rgb{0.9, 0.6, 0.2} : Rgb{0.6, 0.35, 0.3});
  const Rgb box = tint({0.35, 0.55, 0.35});
  const Rgb stripe_a = tint({0.6, 0.6, 0.6});
  const Rgb stripe_b = tint({0.25, 0.25, 0.3});
  const double noise = kind == SyntheticKind::Simple ? 0.04 : 0.1;

  std::vector<int> cls(static_cast<std::size_t>(size) * size, 0);
  auto at = [&](int y, int x) -> int& { return cls[static_cast<std::size_t>(y) * size + x]; };
  if (kind == SyntheticKind::Complex) {
    const int y0 = rng.below(size / 2), x0 = rng.below(size / 2);
    const int h = size / 4 + rng.below(size / 4), w = size / 4 + rng.below(size / 4);
    for (int y = y0; y < std::min(size, y0 + h); ++y) {
      for (int x = x0; x < std::min(size, x0 + w); ++x) at(y, x) = 3;
    }
    const int boxes = 1 + rng.below(2);
    for (int b = 0; b < boxes; ++b) {
      const int by = rng.below(size - size / 4), bx = rng.below(size - size / 4);
      const int bh = size / 8 + rng.below(size / 6), bw = size / 8 + rng.below(size / 6);
      for (int y = by; y < std::min(size, by + bh); ++y) {
        for (int x = bx; x < std::min(size, bx + bw); ++x) at(y, x) = 2;
      }
    }
  }
  const int discs = 1 + rng.below(3);
  for (int k = 0; k < discs; ++k) {
    const double r = rng.range(size / 10.0, size / 5.0);
    const double cy = rng.range(r, size - r), cx = rng.range(r, size - r);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if ((y + 0.5 - cy) * (y + 0.5 - cy) + (x + 0.5 - cx) * (x + 0.5 - cx) <= r * r) at(y, x) = 1;
      }
    }
  }
  const int period = 2 + rng.below(3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      switch (at(y, x)) {
        case 0: paint(d.image, d.labels, rng, y, x, 0, background, noise); break;
        case 1: paint(d.image, d.labels, rng, y, x, 1, disc, noise); break;
        case 2: paint(d.image, d.labels, rng, y, x, 2, box, noise); break;
        default: paint(d.image, d.labels, rng, y, x, 3, (y / period) % 2 ? stripe_a : stripe_b, noise); break;
      }
    }
  }
  return d;
}

}  // namespace

SegmentationDataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.count < 1 || spec.size < 8) throw ConfigError("synthetic dataset needs at least one image of 8x8 or more");
  if (spec.test_count < 0 || spec.test_count >= spec.count) throw ConfigError("test split must leave training images");
  SegmentationDataset ds;
  ds.name = spec.kind == SyntheticKind::Simple ? "synthetic" : "synthetic-complex";
  ds.num_classes = spec.kind == SyntheticKind::Simple ? 2 : 4;
  Rng rng(spec.seed * 0x9e3779b97f4a7c15ULL + (spec.kind == SyntheticKind::Simple ? 1 : 2));
  for (int i = 0; i < spec.count; ++i) {
    auto d = draw(spec.kind, spec.size, rng);
    ds.samples.push_back({key(ds.name.c_str(), i), std::move(d.image)});
    ds.labels.push_back(std::move(d.labels));
    (i < spec.count - spec.test_count ? ds.train : ds.test).push_back(static_cast<std::size_t>(i));
  }
  return ds;
}

CorrespondenceDataset make_synthetic_pairs(int pairs, int size, int keypoints, std::uint64_t seed) {
  if (pairs < 1 || size < 8 || keypoints < 1) throw ConfigError("synthetic pairs need positive counts and size >= 8");
  CorrespondenceDataset ds;
  ds.name = "synthetic-pairs";
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 3);
  for (int i = 0; i < pairs; ++i) {
    auto d = draw(SyntheticKind::Complex, size, rng);
    const int dx = rng.below(size), dy = rng.below(size);
    Image shifted(size, size, 3);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        for (int c = 0; c < 3; ++c) shifted.at((y + dy) % size, (x + dx) % size, c) = d.image.at(y, x, c);
      }
    }
    PairAnnotation a;
    a.source_image = key("pair-src", i);
    a.target_image = key("pair-trg", i);
    a.category = "synthetic";
    a.pair.src_width = a.pair.src_height = a.pair.trg_width = a.pair.trg_height = size;
    a.pair.trg_bbox = {0, 0, static_cast<double>(size), static_cast<double>(size)};
    for (int k = 0; k < keypoints; ++k) {
      const int x = rng.below(size), y = rng.below(size);
      a.pair.src_kps.push_back({x + 0.5, y + 0.5});
      a.pair.trg_kps.push_back({(x + dx) % size + 0.5, (y + dy) % size + 0.5});
    }
    ds.samples.push_back({a.source_image, std::move(d.image)});
    ds.samples.push_back({a.target_image, std::move(shifted)});
    ds.pairs.push_back(std::move(a));
  }
  return ds;
}

}  // namespace difsel
