#include "difsel/extraction.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include "difsel/catalog.hpp"
#include "difsel/error.hpp"

namespace difsel {

void validate(const ExtractionConfig& config) {
  if (config.schedule_length <= 0) throw ConfigError("schedule length must be positive");
  if (config.timestep < 0 || config.timestep >= config.schedule_length) {
    throw ConfigError("timestep " + std::to_string(config.timestep) + " outside [0, " +
                      std::to_string(config.schedule_length) + ")");
  }
  if (config.capture_set.empty() && !config.capture_attention_maps) {
    throw ConfigError("nothing to capture: empty capture set and attention maps disabled");
  }
  if (config.input_width < 0 || config.input_height < 0) throw ConfigError("negative input size");
}

NoiseSchedule::NoiseSchedule(int length, double beta_start, double beta_end) {
  if (length <= 0) throw ConfigError("schedule length must be positive");
  alpha_bar_.resize(length);
  double prod = 1.0;
  for (int t = 0; t < length; ++t) {
    const double beta = length == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (length - 1);
    prod *= 1.0 - beta;
    alpha_bar_[t] = prod;
  }
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t >= length()) throw ConfigError("timestep outside schedule");
  return alpha_bar_[t];
}

Tensor3 NoiseSchedule::add_noise(const Tensor3& x0, int t, const Tensor3& noise) const {
  if (!x0.same_shape(noise)) throw ShapeError("noise shape differs from x0");
  const double ab = alpha_bar(t);
  const float a = static_cast<float>(std::sqrt(ab));
  const float b = static_cast<float>(std::sqrt(1.0 - ab));
  Tensor3 out = x0;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = a * x0.values[i] + b * noise.values[i];
  return out;
}

Tensor3 gaussian_noise(int channels, int height, int width, std::uint64_t seed) {
  // Box-Muller over mt19937_64 so the stream does not depend on the
  // standard library's distribution implementation.
  std::mt19937_64 rng(seed);
  auto uniform = [&] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  Tensor3 out(channels, height, width);
  for (std::size_t i = 0; i < out.values.size(); i += 2) {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    out.values[i] = static_cast<float>(r * std::cos(theta));
    if (i + 1 < out.values.size()) out.values[i + 1] = static_cast<float>(r * std::sin(theta));
  }
  return out;
}

int PromptTokens::retained_count() const {
  return static_cast<int>(std::count(retained.begin(), retained.end(), true));
}

namespace {

ExtractionConfig sized_for(const ExtractionConfig& config, const Image& image) {
  ExtractionConfig c = config;
  if (c.input_width == 0) c.input_width = image.width;
  if (c.input_height == 0) c.input_height = image.height;
  return c;
}

}  // namespace

Tensor3 average_attention_maps(const std::vector<AttentionLayerScores>& layers, const PromptTokens& tokens,
                               bool use_logits) {
  if (layers.empty()) throw ConfigError("backbone reported no up-stage cross-attention layers");
  std::vector<int> keep;
  for (std::size_t i = 0; i < tokens.retained.size(); ++i) {
    if (tokens.retained[i]) keep.push_back(static_cast<int>(i));
  }
  if (keep.empty()) throw DataError("prompt has no retained tokens");

  int height = 0;
  int width = 0;
  for (const auto& l : layers) {
    if (l.height * l.width > height * width) {
      height = l.height;
      width = l.width;
    }
  }
  const int kept = static_cast<int>(keep.size());
  Tensor3 sum(kept, height, width);
  for (const auto& l : layers) {
    if (l.tokens != static_cast<int>(tokens.retained.size())) throw ShapeError("attention token count mismatch");
    const auto& scores = use_logits ? l.logits : l.probabilities;
    if (scores.size() != static_cast<std::size_t>(l.height) * l.width * l.tokens) throw ShapeError("attention size mismatch");
    Tensor3 maps(kept, l.height, l.width);
    for (int p = 0; p < l.height * l.width; ++p) {
      const float* row = scores.data() + static_cast<std::size_t>(p) * l.tokens;
      double norm = 0;
      for (int k : keep) norm += row[k];
      for (int j = 0; j < kept; ++j) {
        float v = row[keep[j]];
        if (!use_logits) v = norm > 0 ? static_cast<float>(v / norm) : 1.0f / kept;
        maps.values[static_cast<std::size_t>(j) * l.height * l.width + p] = v;
      }
    }
    const auto resized = resize(maps, height, width, ResizeMode::Bilinear);
    for (std::size_t i = 0; i < sum.values.size(); ++i) sum.values[i] += resized.values[i];
  }
  const float inv = 1.0f / static_cast<float>(layers.size());
  for (auto& v : sum.values) v *= inv;
  return sum;
}

FeatureRecord capture_attention_maps(BackboneAdapter& adapter, const Image& image, const ExtractionConfig& config,
                                     const std::string& sample_key) {
  if (config.prompt.empty()) throw DataError("attention maps need a non-empty prompt");
  auto c = sized_for(config, image);
  c.capture_attention_maps = true;
  validate(c);
  const auto capture = adapter.run(image, c, CaptureRequest{{}, true, false});
  return {adapter.architecture().name, std::string(kAttentionMapsKey), sample_key,
          average_attention_maps(capture.attention, capture.tokens, c.attention_logits)};
}

ExtractionSummary extract_features(const std::vector<Sample>& dataset, BackboneAdapter& adapter,
                                   const ExtractionConfig& config, FeatureStore& store) {
  validate(config);
  const auto& arch = adapter.architecture();
  for (const auto& id : config.capture_set) {
    if (!is_addressable(arch, id)) {
      throw ConfigError("capture set: " + id.str() + " is not addressable in '" + arch.name + "'");
    }
  }
  if (config.capture_attention_maps && config.prompt.empty()) throw DataError("attention maps need a non-empty prompt");

  ExtractionSummary summary;
  for (const auto& sample : dataset) {
    const auto start = std::chrono::steady_clock::now();
    const auto c = sized_for(config, sample.image);
    const auto capture = adapter.run(sample.image, c, CaptureRequest{c.capture_set, c.capture_attention_maps, false});
    bool flagged = false;
    for (const auto& id : c.capture_set) {
      const auto it = capture.activations.find(id);
      if (it == capture.activations.end()) throw Error("adapter did not return " + id.str());
      const auto expected = expected_shape(arch, describe(arch, id), c.input_width, c.input_height,
                                           static_cast<int>(capture.tokens.ids.size()));
      if (it->second.channels != expected.channels || it->second.height != expected.height ||
          it->second.width != expected.width) {
        throw ShapeError("adapter returned a wrongly shaped tensor for " + id.str());
      }
      if (!it->second.all_finite()) {
        flagged = true;
        continue;
      }
      store.write({arch.name, id.str(), sample.key, it->second});
      ++summary.records_written;
    }
    if (c.capture_attention_maps) {
      auto maps = average_attention_maps(capture.attention, capture.tokens, c.attention_logits);
      if (maps.all_finite()) {
        store.write({arch.name, std::string(kAttentionMapsKey), sample.key, std::move(maps)});
        ++summary.records_written;
      } else {
        flagged = true;
      }
    }
    if (flagged) summary.flagged_samples.push_back(sample.key);
    ++summary.samples;
    summary.wall_seconds.emplace_back(
        sample.key, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return summary;
}

}  // namespace difsel
