#include "difsel/mlp.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "difsel/error.hpp"
#include "difsel/extraction.hpp"

namespace difsel {

namespace {

constexpr float kBnEps = 1e-5f;

PixelMatrix he_normal(int in, int out, std::uint64_t seed) {
  const auto n = gaussian_noise(1, in, out, seed);
  PixelMatrix w(in, out);
  const float scale = std::sqrt(2.0f / static_cast<float>(in));
  for (int i = 0; i < in * out; ++i) w.data()[i] = n.values[i] * scale;
  return w;
}

struct Adam {
  std::vector<PixelMatrix> m, v;
  int step = 0;
};

}  // namespace

void stable_shuffle(std::vector<std::size_t>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng() % i]);
}

Mlp::Mlp(int inputs, const std::vector<int>& hidden, int classes, std::uint64_t seed)
    : inputs_(inputs), classes_(classes) {
  if (inputs < 1 || classes < 2) throw ConfigError("MLP needs at least one input and two classes");
  int in = inputs;
  std::uint64_t s = seed * 0x9e3779b97f4a7c15ULL + 1;
  for (int width : hidden) {
    if (width < 1) throw ConfigError("hidden layer widths must be positive");
    Layer l{he_normal(in, width, s++), Eigen::RowVectorXf::Zero(width), Eigen::RowVectorXf::Ones(width),
            Eigen::RowVectorXf::Zero(width), Eigen::RowVectorXf::Zero(width), Eigen::RowVectorXf::Ones(width)};
    layers_.push_back(std::move(l));
    in = width;
  }
  Layer out{he_normal(in, classes, s) * std::sqrt(0.5f), Eigen::RowVectorXf::Zero(classes), {}, {}, {}, {}};
  layers_.push_back(std::move(out));
}

PixelMatrix Mlp::logits(const PixelMatrix& x) const {
  if (x.cols() != inputs_) throw ShapeError("MLP expects " + std::to_string(inputs_) + " features");
  PixelMatrix a = x;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    const auto& l = layers_[i];
    PixelMatrix z = a * l.w;
    const Eigen::RowVectorXf scale = l.gamma.array() / (l.var.array() + kBnEps).sqrt();
    const Eigen::RowVectorXf shift = l.beta.array() - l.mean.array() * scale.array();
    z.array().rowwise() *= scale.array();
    z.rowwise() += shift;
    a = z.cwiseMax(0.0f);
  }
  PixelMatrix out = a * layers_.back().w;
  out.rowwise() += layers_.back().b;
  return out;
}

std::vector<int> Mlp::predict(const PixelMatrix& x) const {
  const auto z = logits(x);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < z.cols(); ++c) {
      if (z(i, c) > z(i, best)) best = c;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

double Mlp::train(const PixelMatrix& x, const std::vector<int>& y, const MlpTraining& config) {
  if (x.cols() != inputs_) throw ShapeError("MLP expects " + std::to_string(inputs_) + " features");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw ShapeError("feature and label counts differ");
  if (x.rows() < 2) throw DataError("need at least two training pixels");
  if (config.epochs < 1 || config.batch_size < 2 || !(config.learning_rate > 0)) {
    throw ConfigError("invalid MLP training configuration");
  }
  for (int v : y) {
    if (v < 0 || v >= classes_) throw DataError("training label out of range");
  }

  const std::size_t hidden = layers_.size() - 1;
  // Adam slots per hidden layer: w, gamma, beta; read-out: w, b.
  Adam adam;
  auto add = [&](const PixelMatrix& shape) {
    adam.m.push_back(PixelMatrix::Zero(shape.rows(), shape.cols()));
    adam.v.push_back(PixelMatrix::Zero(shape.rows(), shape.cols()));
  };
  for (std::size_t i = 0; i < hidden; ++i) {
    add(layers_[i].w);
    add(layers_[i].gamma);
    add(layers_[i].beta);
  }
  add(layers_.back().w);
  add(layers_.back().b);

  const float lr = static_cast<float>(config.learning_rate);
  constexpr float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
  auto update = [&](std::size_t slot, auto& param, const auto& grad) {
    adam.m[slot] = b1 * adam.m[slot] + (1 - b1) * grad;
    adam.v[slot] = b2 * adam.v[slot] + (1 - b2) * grad.cwiseProduct(grad);
    const float c1 = 1 - std::pow(b1, static_cast<float>(adam.step));
    const float c2 = 1 - std::pow(b2, static_cast<float>(adam.step));
    param.array() -= lr * (adam.m[slot].array() / c1) / ((adam.v[slot].array() / c2).sqrt() + eps);
  };

  std::vector<std::size_t> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  double last_loss = 0;
  std::vector<PixelMatrix> acts(layers_.size()), normed(hidden), pre_relu(hidden);
  std::vector<Eigen::RowVectorXf> inv_std(hidden);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    stable_shuffle(order, config.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch));
    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, order.size() - start);
      if (n < 2) continue;
      PixelMatrix xb(n, inputs_);
      std::vector<int> yb(n);
      for (std::size_t i = 0; i < n; ++i) {
        xb.row(i) = x.row(order[start + i]);
        yb[i] = y[order[start + i]];
      }
      const float inv_n = 1.0f / static_cast<float>(n);

      acts[0] = std::move(xb);
      for (std::size_t i = 0; i < hidden; ++i) {
        const auto& l = layers_[i];
        PixelMatrix z = acts[i] * l.w;
        const Eigen::RowVectorXf mu = z.colwise().mean();
        z.rowwise() -= mu;
        const Eigen::RowVectorXf var = z.array().square().colwise().sum() * inv_n;
        inv_std[i] = (var.array() + kBnEps).rsqrt();
        z.array().rowwise() *= inv_std[i].array();
        normed[i] = z;
        z.array().rowwise() *= l.gamma.array();
        z.rowwise() += l.beta;
        pre_relu[i] = z;
        acts[i + 1] = z.cwiseMax(0.0f);
      }
      PixelMatrix logits = acts[hidden] * layers_.back().w;
      logits.rowwise() += layers_.back().b;

      PixelMatrix grad = PixelMatrix::Zero(n, classes_);
      for (std::size_t i = 0; i < n; ++i) {
        const float mx = logits.row(i).maxCoeff();
        Eigen::RowVectorXf e = (logits.row(i).array() - mx).exp();
        const float z = e.sum();
        loss_sum += std::log(z) - (logits(i, yb[i]) - mx);
        grad.row(i) = e / z;
        grad(i, yb[i]) -= 1.0f;
      }
      seen += n;
      grad *= inv_n;

      ++adam.step;
      std::size_t slot = 3 * hidden;
      PixelMatrix grad_w = acts[hidden].transpose() * grad;
      PixelMatrix grad_b = grad.colwise().sum();
      PixelMatrix back = grad * layers_.back().w.transpose();
      update(slot, layers_.back().w, grad_w);
      update(slot + 1, layers_.back().b, grad_b);
      for (std::size_t i = hidden; i-- > 0;) {
        auto& l = layers_[i];
        PixelMatrix dy = back.array() * (pre_relu[i].array() > 0.0f).cast<float>();
        const PixelMatrix grad_gamma = (dy.cwiseProduct(normed[i])).colwise().sum();
        const PixelMatrix grad_beta = dy.colwise().sum();
        PixelMatrix dxhat = dy.array().rowwise() * l.gamma.array();
        const Eigen::RowVectorXf sum_dxhat = dxhat.colwise().sum();
        const Eigen::RowVectorXf sum_dxhat_xhat = dxhat.cwiseProduct(normed[i]).colwise().sum();
        PixelMatrix dz = dxhat * static_cast<float>(n);
        dz.rowwise() -= sum_dxhat;
        dz -= (normed[i].array().rowwise() * sum_dxhat_xhat.array()).matrix();
        dz.array().rowwise() *= (inv_std[i] * inv_n).array();
        const PixelMatrix gw = acts[i].transpose() * dz;
        if (i > 0) back = dz * l.w.transpose();
        update(3 * i, l.w, gw);
        update(3 * i + 1, l.gamma, grad_gamma);
        update(3 * i + 2, l.beta, grad_beta);
      }
    }
    last_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
  }

  // Population statistics for inference, layer by layer.
  PixelMatrix a = x;
  for (std::size_t i = 0; i < hidden; ++i) {
    auto& l = layers_[i];
    PixelMatrix z = a * l.w;
    l.mean = z.cast<double>().colwise().mean().cast<float>();
    z.rowwise() -= l.mean;
    l.var = (z.cast<double>().array().square().colwise().sum() / static_cast<double>(z.rows())).cast<float>();
    z.array().rowwise() *= (l.gamma.array() / (l.var.array() + kBnEps).sqrt());
    z.rowwise() += l.beta;
    a = z.cwiseMax(0.0f);
  }
  return last_loss;
}

}  // namespace difsel
