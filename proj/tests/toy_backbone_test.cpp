#include <gtest/gtest.h>

#include <cmath>

#include "difsel/catalog.hpp"
#include "difsel/dataset.hpp"
#include "difsel/error.hpp"
#include "difsel/toy_backbone.hpp"

using namespace difsel;

namespace {

Image test_image(int size = 64) { return make_synthetic({SyntheticKind::Complex, 1, size, 0, 3}).samples[0].image; }

CaptureRequest everything(const ArchitectureSpec& arch) {
  CaptureRequest r;
  r.activations = all_activations(arch);
  return r;
}

}  // namespace

TEST(ToyBackbone, EnumeratesMoreThanFiftyUpStageCandidates) {
  const auto arch = toy_architecture(ToySpec{});
  EXPECT_GT(enumerate_candidates(arch, builtin_policy("up-universe")).size(), 50u);
  EXPECT_NO_THROW(validate(arch));
}

TEST(ToyBackbone, EveryAddressableActivationHasCatalogShape) {
  ToyBackbone toy;
  const auto& arch = toy.architecture();
  ExtractionConfig config;
  config.prompt = "red square";
  const auto out = toy.run(test_image(), config, everything(arch));
  ASSERT_EQ(out.activations.size(), all_activations(arch).size());
  for (const auto& [id, t] : out.activations) {
    const auto want = expected_shape(arch, describe(arch, id), 64, 64, ToySpec{}.context_tokens);
    EXPECT_EQ((Shape3{t.channels, t.height, t.width}), want) << id.str();
    EXPECT_TRUE(t.all_finite()) << id.str();
  }
}

TEST(ToyBackbone, RectangularInputs) {
  ToyBackbone toy;
  const auto& arch = toy.architecture();
  const auto img = make_synthetic({SyntheticKind::Simple, 1, 32, 0, 1}).samples[0].image;
  ExtractionConfig config;
  config.input_width = 48;
  config.input_height = 32;
  CaptureRequest r;
  r.activations = {parse_activation_id("up-level2-repeat2-res-out"), parse_activation_id("up-level0-repeat0-res-out")};
  const auto out = toy.run(img, config, r);
  for (const auto& [id, t] : out.activations) {
    const auto want = expected_shape(arch, describe(arch, id), 48, 32);
    EXPECT_EQ((Shape3{t.channels, t.height, t.width}), want) << id.str();
  }
  config.input_width = 40;
  EXPECT_THROW(toy.run(img, config, r), ConfigError);
}

TEST(ToyBackbone, DeterministicForFixedSeeds) {
  ToyBackbone a, b;
  ExtractionConfig config;
  config.prompt = "a photo";
  config.noise_seed = 4;
  const auto req = everything(a.architecture());
  const auto x = a.run(test_image(), config, req);
  const auto y = b.run(test_image(), config, req);
  EXPECT_EQ(x.activations, y.activations);
  config.noise_seed = 5;
  EXPECT_NE(a.run(test_image(), config, req).activations, x.activations);
}

TEST(ToyBackbone, TimestepChangesActivations) {
  ToyBackbone toy;
  CaptureRequest req;
  req.activations = {parse_activation_id("up-level1-repeat0-res-out")};
  ExtractionConfig early, late;
  early.timestep = 0;
  late.timestep = 900;
  EXPECT_NE(toy.run(test_image(), early, req).activations, toy.run(test_image(), late, req).activations);
}

TEST(ToyBackbone, UnaddressableRequestIsConfigError) {
  ToyBackbone toy;
  CaptureRequest req;
  req.activations = {parse_activation_id("up-level5-repeat0-res-out")};
  EXPECT_THROW(toy.run(test_image(), ExtractionConfig{}, req), ConfigError);
  req.activations = {parse_activation_id("up-level2-repeat0-vit-block3-out")};
  EXPECT_THROW(toy.run(test_image(), ExtractionConfig{}, req), ConfigError);
}

TEST(ToyBackbone, AttentionRowsAreDistributions) {
  ToyBackbone toy;
  ExtractionConfig config;
  config.prompt = "a cat";
  CaptureRequest req;
  req.attention_scores = true;
  const auto out = toy.run(test_image(), config, req);
  ASSERT_FALSE(out.attention.empty());
  for (const auto& layer : out.attention) {
    ASSERT_EQ(layer.probabilities.size(), static_cast<std::size_t>(layer.height * layer.width * layer.tokens));
    for (int p = 0; p < layer.height * layer.width; ++p) {
      double sum = 0;
      double zmax = -1e30;
      for (int k = 0; k < layer.tokens; ++k) {
        sum += layer.probabilities[p * layer.tokens + k];
        zmax = std::max<double>(zmax, layer.logits[p * layer.tokens + k]);
      }
      EXPECT_NEAR(sum, 1.0, 1e-5);
      // Probabilities are the softmax of the logits.
      double z = 0;
      for (int k = 0; k < layer.tokens; ++k) z += std::exp(layer.logits[p * layer.tokens + k] - zmax);
      EXPECT_NEAR(layer.probabilities[p * layer.tokens], std::exp(layer.logits[p * layer.tokens] - zmax) / z, 1e-5);
    }
  }
}

TEST(ToyBackbone, ResidualPlusIncrementEqualsOutput) {
  ToyBackbone toy;
  ExtractionConfig config;
  config.prompt = "stripes";
  CaptureRequest req;
  req.residual_sites = true;
  const auto out = toy.run(test_image(), config, req);
  ASSERT_FALSE(out.residuals.empty());
  for (const auto& site : out.residuals) {
    ASSERT_EQ(site.residual.values.size(), site.output.values.size()) << site.name;
    ASSERT_EQ(site.increment.values.size(), site.output.values.size()) << site.name;
    double worst = 0;
    for (std::size_t i = 0; i < site.output.values.size(); ++i) {
      worst = std::max(worst, std::abs(double(site.residual.values[i]) + site.increment.values[i] - site.output.values[i]));
    }
    EXPECT_LE(worst, 1e-5) << site.name;
  }
}

TEST(ToyBackbone, TokenizerMarksOnlyWordsRetained) {
  const auto t = tokenize_prompt("a b c", 8, 64);
  EXPECT_EQ(t.ids.size(), 8u);
  EXPECT_EQ(t.retained_count(), 3);
  EXPECT_FALSE(t.retained.front());
  EXPECT_EQ(tokenize_prompt("a b c", 8, 64).ids, t.ids);
  EXPECT_EQ(tokenize_prompt("", 8, 64).retained_count(), 0);
  // Long prompts are truncated to fit BOS and EOS.
  EXPECT_EQ(tokenize_prompt("w w w w w w w w w w w", 8, 64).retained_count(), 6);
}

TEST(ToyBackbone, SpecValidation) {
  ToySpec bad;
  bad.up_vit_blocks = {1, 1};
  EXPECT_THROW(validate(bad), ConfigError);
  ToySpec zero;
  zero.widths = {8, 0, 32};
  EXPECT_THROW(validate(zero), ConfigError);
}
