#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "difsel/catalog.hpp"
#include "difsel/dataset.hpp"
#include "difsel/error.hpp"
#include "difsel/extraction.hpp"
#include "difsel/filtering.hpp"
#include "difsel/toy_backbone.hpp"
#include "test_util.hpp"

using namespace difsel;

namespace {

std::vector<Sample> images(int n, int size = 64) {
  return make_synthetic({SyntheticKind::Simple, n, size, 0, 7}).samples;
}

// Forwards to the toy backbone but advertises a layout without a down stage.
class UpOnlyAdapter : public BackboneAdapter {
 public:
  UpOnlyAdapter() : arch_(inner_.architecture()) {
    std::erase_if(arch_.stages, [](const StageLayout& s) { return s.stage == Stage::Down; });
  }
  const ArchitectureSpec& architecture() const override { return arch_; }
  ForwardCapture run(const Image& image, const ExtractionConfig& config, const CaptureRequest& request) override {
    ++runs;
    return inner_.run(image, config, request);
  }
  int runs = 0;

 private:
  ToyBackbone inner_;
  ArchitectureSpec arch_;
};

// Produces a NaN in every activation of the sample keyed "bad".
class PoisoningAdapter : public BackboneAdapter {
 public:
  const ArchitectureSpec& architecture() const override { return inner_.architecture(); }
  ForwardCapture run(const Image& image, const ExtractionConfig& config, const CaptureRequest& request) override {
    auto out = inner_.run(image, config, request);
    if (image.at(0, 0, 0) == 0.123f) {
      for (auto& [id, t] : out.activations) t.values[0] = std::numeric_limits<float>::quiet_NaN();
    }
    return out;
  }

 private:
  ToyBackbone inner_;
};

}  // namespace

TEST(Extraction, FourImagesThreeIdsTwelveRecordsWithCatalogShapes) {
  testutil::TempDir dir("extract");
  FeatureStore store(dir.path(), "syn");
  ToyBackbone toy;
  ExtractionConfig config;
  config.capture_set = {parse_activation_id("up-level0-repeat0-res-out"),
                        parse_activation_id("up-level1-repeat1-vit-block0-cross-q"),
                        parse_activation_id("up-level2-repeat2-vit-block0-self-k")};
  const auto samples = images(4);
  const auto summary = extract_features(samples, toy, config, store);
  EXPECT_EQ(summary.records_written, 12u);
  EXPECT_EQ(store.manifest("toy").size(), 12u);
  for (const auto& s : samples) {
    for (const auto& id : config.capture_set) {
      const auto r = store.read("toy", id.str(), s.key);
      const auto want = expected_shape(toy.architecture(), describe(toy.architecture(), id), 64, 64);
      EXPECT_EQ((Shape3{r.data.channels, r.data.height, r.data.width}), want) << id.str();
    }
  }
}

TEST(Extraction, EmptyDatasetWritesNothing) {
  testutil::TempDir dir("extract");
  FeatureStore store(dir.path(), "syn");
  ToyBackbone toy;
  ExtractionConfig config;
  config.capture_set = {parse_activation_id("up-level0-repeat0-res-out")};
  const auto summary = extract_features({}, toy, config, store);
  EXPECT_EQ(summary.records_written, 0u);
  EXPECT_TRUE(store.manifest("toy").empty());
}

TEST(Extraction, UnaddressableIdFailsBeforeInference) {
  testutil::TempDir dir("extract");
  FeatureStore store(dir.path(), "syn");
  UpOnlyAdapter adapter;
  ExtractionConfig config;
  config.capture_set = {parse_activation_id("up-level0-repeat0-res-out"),
                        parse_activation_id("down-level0-repeat0-res-out")};
  EXPECT_THROW(extract_features(images(2), adapter, config, store), ConfigError);
  EXPECT_EQ(adapter.runs, 0);
  EXPECT_TRUE(store.manifest("toy").empty());
}

TEST(Extraction, NonFiniteRecordsAreFlaggedNotStored) {
  testutil::TempDir dir("extract");
  FeatureStore store(dir.path(), "syn");
  PoisoningAdapter adapter;
  auto samples = images(3);
  samples[1].key = "bad";
  for (auto& v : samples[1].image.pixels) v = 0.123f;
  ExtractionConfig config;
  config.capture_set = {parse_activation_id("up-level0-repeat0-res-out")};
  const auto summary = extract_features(samples, adapter, config, store);
  EXPECT_EQ(summary.flagged_samples, std::vector<std::string>{"bad"});
  EXPECT_EQ(summary.records_written, 2u);
  EXPECT_FALSE(store.contains("toy", "up-level0-repeat0-res-out", "bad"));
}

TEST(Extraction, ConfigValidation) {
  ExtractionConfig c;
  c.capture_set = {parse_activation_id("up-level0-repeat0-res-out")};
  c.timestep = 1000;
  EXPECT_THROW(validate(c), ConfigError);
  c.timestep = -1;
  EXPECT_THROW(validate(c), ConfigError);
  c.timestep = 0;
  EXPECT_NO_THROW(validate(c));
  c.capture_set.clear();
  EXPECT_THROW(validate(c), ConfigError);
  c.capture_attention_maps = true;
  EXPECT_NO_THROW(validate(c));
}

TEST(Extraction, NoiseScheduleIsMonotoneAndNoiseIsSeeded) {
  NoiseSchedule s;
  for (int t = 1; t < s.length(); ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  EXPECT_NEAR(s.alpha_bar(0), 1 - 1e-4, 1e-12);
  EXPECT_EQ(gaussian_noise(2, 3, 4, 9), gaussian_noise(2, 3, 4, 9));
  EXPECT_NE(gaussian_noise(2, 3, 4, 9), gaussian_noise(2, 3, 4, 10));
  const auto n = gaussian_noise(1, 100, 100, 1);
  double mean = 0, sq = 0;
  for (float v : n.values) mean += v, sq += double(v) * v;
  mean /= n.values.size();
  EXPECT_NEAR(mean, 0, 0.05);
  EXPECT_NEAR(sq / n.values.size(), 1, 0.05);
  // x_t = sqrt(ab) x0 + sqrt(1-ab) eps
  const Tensor3 x0(1, 1, 1, 2.0f), eps(1, 1, 1, 1.0f);
  const double ab = s.alpha_bar(50);
  EXPECT_NEAR(s.add_noise(x0, 50, eps).values[0], std::sqrt(ab) * 2 + std::sqrt(1 - ab), 1e-6);
}

TEST(AttentionMaps, ShapeIsRetainedTokensAtLargestLayer) {
  ToyBackbone toy;
  ExtractionConfig config;
  config.prompt = "a horse on grass";
  const auto sample = images(1).front();
  const auto r = capture_attention_maps(toy, sample.image, config, sample.key);
  EXPECT_EQ(r.activation, "attention-maps");
  EXPECT_EQ(r.data.channels, 4);
  EXPECT_EQ(r.data.height, 16);
  EXPECT_EQ(r.data.width, 16);
  EXPECT_EQ(capture_attention_maps(toy, sample.image, config, sample.key), r);
}

TEST(AttentionMaps, ThreeTokenPromptGivesThreeChannels) {
  ToyBackbone toy;
  ExtractionConfig config;
  config.prompt = "cat dog bird";
  const auto r = capture_attention_maps(toy, images(1).front().image, config);
  EXPECT_EQ(r.data.channels, 3);
}

TEST(AttentionMaps, EmptyPromptIsError) {
  ToyBackbone toy;
  ExtractionConfig config;
  EXPECT_THROW(capture_attention_maps(toy, images(1).front().image, config), DataError);
}

TEST(AttentionMaps, AveragedProbabilitiesStayInUnitRange) {
  ToyBackbone toy;
  ExtractionConfig config;
  config.prompt = "one two";
  const auto r = capture_attention_maps(toy, images(1).front().image, config);
  for (float v : r.data.values) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f + 1e-6f);
  }
  // Two retained tokens renormalized per pixel before averaging: channel sums are 1.
  const std::size_t plane = static_cast<std::size_t>(r.data.height) * r.data.width;
  for (std::size_t p = 0; p < plane; p += 17) {
    EXPECT_NEAR(r.data.values[p] + r.data.values[plane + p], 1.0, 1e-4);
  }
}

TEST(AttentionMaps, HandBuiltAverage) {
  // Two layers: 1x1 and 2x2, three tokens of which the middle is padding.
  PromptTokens tokens{{0, 7, 2}, {true, false, true}};
  AttentionLayerScores a{parse_activation_id("up-level0-repeat0-vit-block0-cross-q"), 1, 1, 3, {0.2f, 0.6f, 0.2f}, {}};
  AttentionLayerScores b{parse_activation_id("up-level1-repeat0-vit-block0-cross-q"), 2, 2, 3,
                         {0.5f, 0.0f, 0.5f, 0.9f, 0.0f, 0.1f, 0.1f, 0.0f, 0.9f, 0.3f, 0.4f, 0.3f},
                         {}};
  a.logits = a.probabilities;
  b.logits = b.probabilities;
  const auto m = average_attention_maps({a, b}, tokens, false);
  ASSERT_EQ(m.channels, 2);
  ASSERT_EQ(m.height, 2);
  // Layer a renormalized to (0.5, 0.5) everywhere after resizing.
  EXPECT_NEAR(m.values[0], (0.5 + 0.5) / 2, 1e-6);
  EXPECT_NEAR(m.values[1], (0.5 + 0.9) / 2, 1e-6);
  EXPECT_NEAR(m.values[2], (0.5 + 0.1) / 2, 1e-6);
  EXPECT_NEAR(m.values[3], (0.5 + 0.5) / 2, 1e-6);
  EXPECT_NEAR(m.values[4 + 1], (0.5 + 0.1) / 2, 1e-6);
  PromptTokens none{{0, 1}, {false, false}};
  EXPECT_THROW(average_attention_maps({a}, none, false), DataError);
}
