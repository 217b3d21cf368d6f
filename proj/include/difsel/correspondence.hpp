#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "difsel/metrics.hpp"
#include "difsel/tensor.hpp"

namespace difsel {

// Nearest-neighbour keypoint transfer. Each source keypoint (image pixels) is
// mapped to the feature grid at pixel centres, sampled bilinearly, and matched
// to the target cell of highest cosine similarity; ties go to the smallest
// row-major index. Predictions are target cell centres in target pixels.
std::vector<Keypoint> nn_correspond(const Tensor3& source, const Tensor3& target, const std::vector<Keypoint>& src_kps,
                                    int src_width, int src_height, int trg_width, int trg_height);

// Target cell (row-major) holding a keypoint given in target pixels.
int cell_of(const Keypoint& kp, int image_width, int image_height, int grid_width, int grid_height);

struct RefinerConfig {
  int epochs = 2;
  int pairs_per_epoch = 5000;
  double learning_rate = 1e-3;
  double temperature = 0.05;
  std::uint64_t seed = 0;
};

struct CorrespondenceExample {
  const Tensor3* source = nullptr;
  const Tensor3* target = nullptr;
  KeypointPair pair;
};

// A learned 1x1 convolution applied to both features before matching.
class Refiner {
 public:
  static Refiner identity(int channels);
  static Refiner random(int channels, std::uint64_t seed);

  int channels() const noexcept { return channels_; }
  const std::vector<float>& weights() const noexcept { return weights_; }  // (in x out), row-major

  Tensor3 apply(const Tensor3& features) const;

  // Trains with softmax cross-entropy over target cells (cosine logits / temperature).
  // Returns the mean loss of the last epoch.
  double train(const std::vector<CorrespondenceExample>& examples, const RefinerConfig& config);

 private:
  explicit Refiner(int channels) : channels_(channels), weights_(static_cast<std::size_t>(channels) * channels, 0.0f) {}
  int channels_ = 0;
  std::vector<float> weights_;
};

// One SPair-71k pair annotation.
struct PairAnnotation {
  std::string source_image;
  std::string target_image;
  std::string category;
  KeypointPair pair;
};

// Reads src_imsize / trg_imsize ([w, h, c]), src_bndbox / trg_bndbox
// ([x1, y1, x2, y2]) and src_kps / trg_kps. Throws ParseError or DataError.
PairAnnotation parse_spair_pair(std::string_view json_text);
// Every *.json file under `directory`, sorted by file name.
std::vector<PairAnnotation> load_spair_pairs(const std::filesystem::path& directory);

}  // namespace difsel
