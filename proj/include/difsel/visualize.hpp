#pragma once

#include "difsel/image.hpp"
#include "difsel/tensor.hpp"

namespace difsel {

// Projects the channels of every pixel onto the three leading principal
// components and min-max scales each component to [0, 1]. Components with no
// spread (constant maps, fewer than three channels) render as 0.5.
Image pca_rgb(const Tensor3& features);

}  // namespace difsel
