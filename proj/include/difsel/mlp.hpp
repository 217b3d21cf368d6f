#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace difsel {

using PixelMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;  // pixels x features

struct MlpTraining {
  int epochs = 8;
  int batch_size = 4096;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

// Pixel classifier: (Linear -> BatchNorm -> ReLU) per hidden layer, then a
// linear read-out, trained with Adam on softmax cross-entropy.
class Mlp {
 public:
  Mlp(int inputs, const std::vector<int>& hidden, int classes, std::uint64_t seed);

  int inputs() const noexcept { return inputs_; }
  int classes() const noexcept { return classes_; }

  // Returns the mean loss of the last epoch. Batch-norm statistics are
  // recomputed over the whole training set afterwards.
  double train(const PixelMatrix& x, const std::vector<int>& y, const MlpTraining& config);
  PixelMatrix logits(const PixelMatrix& x) const;
  std::vector<int> predict(const PixelMatrix& x) const;

 private:
  struct Layer {
    PixelMatrix w;  // in x out
    Eigen::RowVectorXf b;
    Eigen::RowVectorXf gamma, beta, mean, var;  // batch norm (hidden layers)
  };
  int inputs_;
  int classes_;
  std::vector<Layer> layers_;  // hidden layers followed by the read-out
};

// Fisher-Yates with a 64-bit Mersenne Twister; identical on every platform.
void stable_shuffle(std::vector<std::size_t>& items, std::uint64_t seed);

}  // namespace difsel
