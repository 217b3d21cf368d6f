#include "difsel/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "difsel/error.hpp"

namespace difsel {

Tensor3::Tensor3(int c, int h, int w, float fill)
    : channels(c), height(h), width(w), values(static_cast<std::size_t>(c) * h * w, fill) {
  if (c < 0 || h < 0 || w < 0) throw ShapeError("negative tensor extent");
}

bool Tensor3::all_finite() const noexcept {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

namespace {

struct AxisTap {
  int lo;
  int hi;
  float frac;
};

std::vector<AxisTap> bilinear_taps(int in, int out) {
  std::vector<AxisTap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, static_cast<float>(src - lo)};
  }
  return taps;
}

}  // namespace

Tensor3 resize(const Tensor3& input, int height, int width, ResizeMode mode) {
  if (height <= 0 || width <= 0) throw ShapeError("resize target must be positive");
  if (input.height == height && input.width == width) return input;
  if (input.height == 0 || input.width == 0) throw ShapeError("cannot resize an empty tensor");

  Tensor3 out(input.channels, height, width);
  if (mode == ResizeMode::Nearest) {
    for (int c = 0; c < input.channels; ++c) {
      for (int y = 0; y < height; ++y) {
        const int sy = std::min(static_cast<int>(std::floor((y + 0.5) * input.height / height)), input.height - 1);
        for (int x = 0; x < width; ++x) {
          const int sx = std::min(static_cast<int>(std::floor((x + 0.5) * input.width / width)), input.width - 1);
          out.at(c, y, x) = input.at(c, sy, sx);
        }
      }
    }
    return out;
  }

  const auto ys = bilinear_taps(input.height, height);
  const auto xs = bilinear_taps(input.width, width);
  for (int c = 0; c < input.channels; ++c) {
    for (int y = 0; y < height; ++y) {
      const auto& ty = ys[y];
      for (int x = 0; x < width; ++x) {
        const auto& tx = xs[x];
        const float top = input.at(c, ty.lo, tx.lo) * (1 - tx.frac) + input.at(c, ty.lo, tx.hi) * tx.frac;
        const float bottom = input.at(c, ty.hi, tx.lo) * (1 - tx.frac) + input.at(c, ty.hi, tx.hi) * tx.frac;
        out.at(c, y, x) = top * (1 - ty.frac) + bottom * ty.frac;
      }
    }
  }
  return out;
}

std::vector<float> sample_bilinear(const Tensor3& input, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(input.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(input.width - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, input.height - 1);
  const int x1 = std::min(x0 + 1, input.width - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  std::vector<float> out(input.channels);
  for (int c = 0; c < input.channels; ++c) {
    const double top = input.at(c, y0, x0) * (1 - fx) + input.at(c, y0, x1) * fx;
    const double bottom = input.at(c, y1, x0) * (1 - fx) + input.at(c, y1, x1) * fx;
    out[c] = static_cast<float>(top * (1 - fy) + bottom * fy);
  }
  return out;
}

Tensor3 concat_channels(std::span<const Tensor3> parts) {
  if (parts.empty()) return {};
  int total = 0;
  for (const auto& p : parts) {
    if (p.height != parts.front().height || p.width != parts.front().width) {
      throw ShapeError("concat_channels: spatial extents differ");
    }
    total += p.channels;
  }
  Tensor3 out(total, parts.front().height, parts.front().width);
  auto it = out.values.begin();
  for (const auto& p : parts) it = std::copy(p.values.begin(), p.values.end(), it);
  return out;
}

}  // namespace difsel
