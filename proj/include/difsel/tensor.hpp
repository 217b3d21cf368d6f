#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace difsel {

// Dense channels x height x width float array, row-major (C, H, W).
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Tensor3() = default;
  Tensor3(int c, int h, int w, float fill = 0.0f);

  std::size_t size() const noexcept { return values.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  bool empty() const noexcept { return values.empty(); }

  float& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  std::span<float> channel(int c) { return {values.data() + c * plane(), plane()}; }
  std::span<const float> channel(int c) const { return {values.data() + c * plane(), plane()}; }

  bool same_shape(const Tensor3& other) const noexcept {
    return channels == other.channels && height == other.height && width == other.width;
  }
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor3&, const Tensor3&) = default;
};

enum class ResizeMode { Bilinear, Nearest };

// Half-pixel-centre resampling (align_corners = false). Same-size input is
// returned unchanged.
Tensor3 resize(const Tensor3& input, int height, int width, ResizeMode mode = ResizeMode::Bilinear);

// Bilinear sample of every channel at continuous grid coordinates (clamped to the border).
std::vector<float> sample_bilinear(const Tensor3& input, double y, double x);

// Concatenates along channels; all inputs must share height and width.
Tensor3 concat_channels(std::span<const Tensor3> parts);

}  // namespace difsel
