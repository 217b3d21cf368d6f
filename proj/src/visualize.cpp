#include "difsel/visualize.hpp"

#include <Eigen/Dense>
#include <algorithm>

#include "difsel/error.hpp"

namespace difsel {

Image pca_rgb(const Tensor3& t) {
  if (t.empty()) throw ShapeError("nothing to visualize");
  const auto n = static_cast<Eigen::Index>(t.plane());
  Eigen::MatrixXd x(n, t.channels);
  for (int c = 0; c < t.channels; ++c) {
    for (Eigen::Index p = 0; p < n; ++p) x(p, c) = t.values[c * t.plane() + p];
  }
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(std::max<Eigen::Index>(1, n - 1));
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues ascend; take the last three.
  Image out(t.width, t.height, 3, 0.5f);
  const double scale = std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
  for (int k = 0; k < std::min(3, t.channels); ++k) {
    const int col = t.channels - 1 - k;
    if (eig.eigenvalues()[col] <= 1e-12 * scale) continue;
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    // Fix the sign so the largest-magnitude loading is positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    const Eigen::VectorXd proj = x * v;
    const double lo = proj.minCoeff(), hi = proj.maxCoeff();
    if (!(hi - lo > 0)) continue;
    for (Eigen::Index p = 0; p < n; ++p) out.pixels[static_cast<std::size_t>(p) * 3 + k] = static_cast<float>((proj[p] - lo) / (hi - lo));
  }
  return out;
}

}  // namespace difsel
