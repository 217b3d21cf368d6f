#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "difsel/activation_id.hpp"
#include "difsel/architecture.hpp"
#include "difsel/feature_store.hpp"
#include "difsel/image.hpp"
#include "difsel/tensor.hpp"

namespace difsel {

struct ExtractionConfig {
  int timestep = 50;
  int schedule_length = 1000;
  std::string prompt;  // condition c; empty means unconditioned
  std::uint64_t noise_seed = 0;
  std::vector<ActivationId> capture_set;
  bool capture_attention_maps = false;
  bool attention_logits = false;  // average pre-softmax scores instead of probabilities
  int input_width = 0;   // 0: use the image size
  int input_height = 0;
};

// Throws ConfigError on an out-of-range timestep or an empty capture request.
void validate(const ExtractionConfig& config);

// Variance-preserving forward noising with a linear beta schedule:
// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(int length = 1000, double beta_start = 1e-4, double beta_end = 0.02);

  int length() const noexcept { return static_cast<int>(alpha_bar_.size()); }
  double alpha_bar(int t) const;
  Tensor3 add_noise(const Tensor3& x0, int t, const Tensor3& noise) const;

 private:
  std::vector<double> alpha_bar_;
};

// Standard normal noise of the given shape, reproducible from `seed` on any platform.
Tensor3 gaussian_noise(int channels, int height, int width, std::uint64_t seed);

// Post-normalisation cross-attention scores of one layer.
struct AttentionLayerScores {
  ActivationId layer;  // the cross-attention query of the layer
  int height = 0;
  int width = 0;
  int tokens = 0;
  std::vector<float> probabilities;  // (height*width) x tokens, row-major
  std::vector<float> logits;         // same layout, pre-softmax
};

struct PromptTokens {
  std::vector<int> ids;
  std::vector<bool> retained;  // true for content tokens (not BOS/EOS/padding)
  int retained_count() const;
};

// One residual connection: output = residual + increment.
struct ResidualSite {
  std::string name;
  Tensor3 residual;
  Tensor3 increment;
  Tensor3 output;
};

struct CaptureRequest {
  std::vector<ActivationId> activations;
  bool attention_scores = false;
  bool residual_sites = false;
};

struct ForwardCapture {
  std::map<ActivationId, Tensor3> activations;
  std::vector<AttentionLayerScores> attention;  // up-stage cross-attention layers, forward order
  PromptTokens tokens;
  std::vector<ResidualSite> residuals;  // optional, when requested and supported
};

// A frozen backbone: noises the image to timestep t, runs one denoising step
// and reports the requested intermediate tensors. Identical (image, config)
// must give identical output.
class BackboneAdapter {
 public:
  virtual ~BackboneAdapter() = default;
  virtual const ArchitectureSpec& architecture() const = 0;
  virtual ForwardCapture run(const Image& image, const ExtractionConfig& config, const CaptureRequest& request) = 0;
};

struct Sample {
  std::string key;
  Image image;
};

struct ExtractionSummary {
  std::size_t samples = 0;
  std::size_t records_written = 0;
  std::vector<std::string> flagged_samples;  // samples with rejected (non-finite) records
  std::vector<std::pair<std::string, double>> wall_seconds;  // per sample
};

// Writes one record per (sample, capture ID), plus one attention-maps record
// per sample when requested. Un-addressable IDs fail before any inference.
ExtractionSummary extract_features(const std::vector<Sample>& dataset, BackboneAdapter& adapter,
                                   const ExtractionConfig& config, FeatureStore& store);

// Cross-attention maps averaged over all up-stage layers: one channel per
// retained prompt token at the largest layer resolution.
FeatureRecord capture_attention_maps(BackboneAdapter& adapter, const Image& image, const ExtractionConfig& config,
                                     const std::string& sample_key = "sample");

// Pure part of capture_attention_maps, usable on any captured scores.
Tensor3 average_attention_maps(const std::vector<AttentionLayerScores>& layers, const PromptTokens& tokens,
                               bool use_logits);

}  // namespace difsel
