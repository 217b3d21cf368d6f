#include "difsel/correspondence.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <random>

#include "difsel/error.hpp"
#include "difsel/extraction.hpp"
#include "difsel/text_format.hpp"

namespace difsel {

namespace {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Cells as rows.
Mat cells(const Tensor3& t) {
  Mat m(t.height * t.width, t.channels);
  for (int c = 0; c < t.channels; ++c) {
    for (std::size_t p = 0; p < t.plane(); ++p) m(static_cast<Eigen::Index>(p), c) = t.values[c * t.plane() + p];
  }
  return m;
}

void normalize_rows(Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const float n = m.row(i).norm();
    if (n > 0) m.row(i) /= n;
  }
}

Eigen::VectorXf source_vector(const Tensor3& source, const Keypoint& kp, int w, int h) {
  const double fx = kp.x * source.width / w - 0.5;
  const double fy = kp.y * source.height / h - 0.5;
  const auto v = sample_bilinear(source, fy, fx);
  return Eigen::Map<const Eigen::VectorXf>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

int cell_of(const Keypoint& kp, int image_width, int image_height, int grid_width, int grid_height) {
  const int x = std::clamp(static_cast<int>(std::floor(kp.x * grid_width / image_width)), 0, grid_width - 1);
  const int y = std::clamp(static_cast<int>(std::floor(kp.y * grid_height / image_height)), 0, grid_height - 1);
  return y * grid_width + x;
}

std::vector<Keypoint> nn_correspond(const Tensor3& source, const Tensor3& target, const std::vector<Keypoint>& src_kps,
                                    int src_width, int src_height, int trg_width, int trg_height) {
  if (source.channels != target.channels) throw ShapeError("source and target features differ in channels");
  if (src_kps.empty()) return {};
  if (target.empty() || source.empty()) throw ShapeError("empty feature map");
  Mat t = cells(target);
  normalize_rows(t);
  std::vector<Keypoint> out;
  out.reserve(src_kps.size());
  for (const auto& kp : src_kps) {
    if (kp.x < 0 || kp.y < 0 || kp.x > src_width || kp.y > src_height) throw DataError("source keypoint outside the image");
    Eigen::VectorXf s = source_vector(source, kp, src_width, src_height);
    const float n = s.norm();
    if (n > 0) s /= n;
    const Eigen::VectorXf sim = t * s;
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < sim.size(); ++j) {
      if (sim[j] > sim[best]) best = j;
    }
    const int bx = static_cast<int>(best % target.width);
    const int by = static_cast<int>(best / target.width);
    out.push_back({(bx + 0.5) * trg_width / target.width, (by + 0.5) * trg_height / target.height});
  }
  return out;
}

Refiner Refiner::identity(int channels) {
  if (channels < 1) throw ShapeError("refiner needs at least one channel");
  Refiner r(channels);
  for (int i = 0; i < channels; ++i) r.weights_[static_cast<std::size_t>(i) * channels + i] = 1.0f;
  return r;
}

Refiner Refiner::random(int channels, std::uint64_t seed) {
  if (channels < 1) throw ShapeError("refiner needs at least one channel");
  Refiner r(channels);
  const auto n = gaussian_noise(1, channels, channels, seed);
  const float scale = 1.0f / std::sqrt(static_cast<float>(channels));
  for (std::size_t i = 0; i < r.weights_.size(); ++i) r.weights_[i] = n.values[i] * scale;
  return r;
}

Tensor3 Refiner::apply(const Tensor3& features) const {
  if (features.channels != channels_) throw ShapeError("refiner channel mismatch");
  const Eigen::Map<const Mat> w(weights_.data(), channels_, channels_);
  const Mat y = cells(features) * w;
  Tensor3 out(channels_, features.height, features.width);
  for (int c = 0; c < channels_; ++c) {
    for (std::size_t p = 0; p < out.plane(); ++p) out.values[c * out.plane() + p] = y(static_cast<Eigen::Index>(p), c);
  }
  return out;
}

double Refiner::train(const std::vector<CorrespondenceExample>& examples, const RefinerConfig& config) {
  if (examples.empty()) throw DataError("refiner training needs at least one pair");
  if (config.epochs < 1 || config.pairs_per_epoch < 1 || !(config.temperature > 0) || !(config.learning_rate > 0)) {
    throw ConfigError("invalid refiner configuration");
  }
  struct Prepared {
    Mat target;
    Mat source;  // one row per keypoint
    std::vector<int> label;
  };
  std::vector<Prepared> data;
  for (const auto& ex : examples) {
    if (!ex.source || !ex.target) throw DataError("example without features");
    if (ex.source->channels != channels_ || ex.target->channels != channels_) throw ShapeError("refiner channel mismatch");
    validate(ex.pair);
    Prepared p{cells(*ex.target), Mat(static_cast<Eigen::Index>(ex.pair.src_kps.size()), channels_), {}};
    for (std::size_t k = 0; k < ex.pair.src_kps.size(); ++k) {
      p.source.row(static_cast<Eigen::Index>(k)) =
          source_vector(*ex.source, ex.pair.src_kps[k], ex.pair.src_width, ex.pair.src_height).transpose();
      p.label.push_back(
          cell_of(ex.pair.trg_kps[k], ex.pair.trg_width, ex.pair.trg_height, ex.target->width, ex.target->height));
    }
    data.push_back(std::move(p));
  }

  Eigen::Map<Mat> w(weights_.data(), channels_, channels_);
  Mat m1 = Mat::Zero(channels_, channels_), m2 = Mat::Zero(channels_, channels_);
  const float lr = static_cast<float>(config.learning_rate);
  const float inv_tau = static_cast<float>(1.0 / config.temperature);
  constexpr float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
  std::mt19937_64 rng(config.seed);
  int step = 0;
  double last_epoch_loss = 0;

  const auto normalize_backward = [](const Mat& raw, const Mat& unit, const Mat& grad_unit) {
    Mat g(raw.rows(), raw.cols());
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      const float n = raw.row(i).norm();
      if (n <= 0) {
        g.row(i).setZero();
        continue;
      }
      g.row(i) = (grad_unit.row(i) - unit.row(i) * unit.row(i).dot(grad_unit.row(i))) / n;
    }
    return g;
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0;
    std::int64_t loss_terms = 0;
    for (int it = 0; it < config.pairs_per_epoch; ++it) {
      const auto& p = data[rng() % data.size()];
      if (p.label.empty()) continue;
      const Mat b_raw = p.target * w;
      Mat b = b_raw;
      normalize_rows(b);
      const Mat a_raw = p.source * w;
      Mat a = a_raw;
      normalize_rows(a);
      Mat logits = (a * b.transpose()) * inv_tau;  // keypoints x cells
      Mat grad_logits(logits.rows(), logits.cols());
      for (Eigen::Index k = 0; k < logits.rows(); ++k) {
        const float mx = logits.row(k).maxCoeff();
        Eigen::RowVectorXf e = (logits.row(k).array() - mx).exp();
        const float z = e.sum();
        loss_sum += std::log(z) - (logits(k, p.label[k]) - mx);
        ++loss_terms;
        grad_logits.row(k) = e / z;
        grad_logits(k, p.label[k]) -= 1.0f;
      }
      grad_logits /= static_cast<float>(logits.rows());
      const Mat grad_a = grad_logits * b * inv_tau;
      const Mat grad_b = grad_logits.transpose() * a * inv_tau;
      const Mat grad_w = p.source.transpose() * normalize_backward(a_raw, a, grad_a) +
                         p.target.transpose() * normalize_backward(b_raw, b, grad_b);
      ++step;
      m1 = b1 * m1 + (1 - b1) * grad_w;
      m2 = b2 * m2 + (1 - b2) * grad_w.cwiseProduct(grad_w);
      const float c1 = 1 - std::pow(b1, static_cast<float>(step));
      const float c2 = 1 - std::pow(b2, static_cast<float>(step));
      w.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    }
    last_epoch_loss = loss_terms ? loss_sum / static_cast<double>(loss_terms) : 0.0;
  }
  return last_epoch_loss;
}

namespace {

using nlohmann::json;

std::vector<Keypoint> read_kps(const json& j, const char* key) {
  std::vector<Keypoint> out;
  for (const auto& kp : j.at(key)) {
    if (!kp.is_array() || kp.size() < 2) throw ParseError(std::string(key) + " entries must be [x, y]", key);
    out.push_back({kp[0].get<double>(), kp[1].get<double>()});
  }
  return out;
}

}  // namespace

PairAnnotation parse_spair_pair(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed pair annotation: ") + e.what(), std::string(json_text.substr(0, 16)));
  }
  try {
    PairAnnotation a;
    a.source_image = j.value("src_imname", "");
    a.target_image = j.value("trg_imname", "");
    a.category = j.value("category", "");
    const auto& ssz = j.at("src_imsize");
    const auto& tsz = j.at("trg_imsize");
    a.pair.src_width = ssz.at(0).get<int>();
    a.pair.src_height = ssz.at(1).get<int>();
    a.pair.trg_width = tsz.at(0).get<int>();
    a.pair.trg_height = tsz.at(1).get<int>();
    const auto& box = j.at("trg_bndbox");
    const double x1 = box.at(0).get<double>(), y1 = box.at(1).get<double>();
    a.pair.trg_bbox = {x1, y1, box.at(2).get<double>() - x1, box.at(3).get<double>() - y1};
    a.pair.src_kps = read_kps(j, "src_kps");
    a.pair.trg_kps = read_kps(j, "trg_kps");
    validate(a.pair);
    return a;
  } catch (const json::exception& e) {
    throw ParseError(std::string("pair annotation: ") + e.what(), "");
  }
}

std::vector<PairAnnotation> load_spair_pairs(const std::filesystem::path& directory) {
  if (!std::filesystem::is_directory(directory)) throw NotFoundError("no pair directory " + directory.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(directory)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<PairAnnotation> out;
  for (const auto& f : files) out.push_back(parse_spair_pair(text::read_file(f)));
  return out;
}

}  // namespace difsel
