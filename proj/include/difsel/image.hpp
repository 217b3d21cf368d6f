#pragma once

#include <filesystem>
#include <vector>

namespace difsel {

// Interleaved H x W x C image with values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  friend bool operator==(const Image&, const Image&) = default;
};

inline constexpr int kIgnoreLabel = 255;

// Per-pixel class indices; kIgnoreLabel marks unlabeled pixels.
struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(int w, int h, int fill = 0) : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {}

  int& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// PNG (8-bit gray/RGB/RGBA) or binary Netpbm (P5/P6).
Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

// Single-channel class-index image (PNG or P5).
LabelMap read_label_map(const std::filesystem::path& path);
void write_label_png(const std::filesystem::path& path, const LabelMap& labels);

}  // namespace difsel
