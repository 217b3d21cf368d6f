#include <gtest/gtest.h>

#include <map>

#include "difsel/architecture.hpp"
#include "difsel/catalog.hpp"
#include "difsel/error.hpp"
#include "difsel/toy_backbone.hpp"

using namespace difsel;

namespace {

// Independent shape law: a tensor at level L has that level's width and the
// latent grid times the level scale; samplers move one level.
Shape3 shape_law(const ArchitectureSpec& arch, const ActivationId& id, int w, int h) {
  const auto* level = arch.find_level(id.stage(), id.level());
  Rational scale = level->scale;
  if (id.site() == Site::Upsampler) scale = Rational(scale.num() * 2, scale.den());
  if (id.site() == Site::Downsampler) scale = Rational(scale.num(), scale.den() * 2);
  const auto lw = w / arch.latent_factor, lh = h / arch.latent_factor;
  return {level->width, static_cast<int>(lh * scale.num() / scale.den()), static_cast<int>(lw * scale.num() / scale.den())};
}

}  // namespace

TEST(Catalog, EveryDenseActivationObeysShapeLaw) {
  auto registry = ArchitectureRegistry::with_builtins();
  registry.add(toy_architecture(ToySpec{}));
  for (const auto* name : {"sd15", "sdxl", "toy"}) {
    const auto& arch = registry.get(name);
    const int size = name == std::string("toy") ? 64 : 512;
    const auto all = all_activations(arch);
    ASSERT_FALSE(all.empty());
    for (const auto& id : all) {
      ASSERT_TRUE(is_addressable(arch, id)) << id.str();
      const auto d = describe(arch, id);
      EXPECT_EQ(d.id, id);
      if (!d.dense) continue;
      EXPECT_EQ(expected_shape(arch, d, size, size), shape_law(arch, id, size, size)) << name << ' ' << id.str();
    }
  }
}

TEST(Catalog, SdxlTensorSizes) {
  const auto registry = ArchitectureRegistry::with_builtins();
  const auto& sdxl = registry.get("sdxl");
  const auto s = [&](const char* id) {
    return expected_shape(sdxl, describe(sdxl, parse_activation_id(id)), 1024, 1024);
  };
  EXPECT_EQ(s("up-level0-repeat0-vit-block7-out"), (Shape3{1280, 32, 32}));
  EXPECT_EQ(s("up-level1-repeat0-vit-block0-cross-q"), (Shape3{640, 64, 64}));
  EXPECT_EQ(s("up-level1-upsampler-out"), (Shape3{640, 128, 128}));
  EXPECT_EQ(s("up-level2-repeat2-res-out"), (Shape3{320, 128, 128}));
}

TEST(Catalog, DescriptorFlags) {
  const auto registry = ArchitectureRegistry::with_builtins();
  const auto& sdxl = registry.get("sdxl");
  EXPECT_TRUE(describe(sdxl, parse_activation_id("up-level0-repeat0-res-inc")).is_increment);
  EXPECT_TRUE(describe(sdxl, parse_activation_id("up-level0-repeat0-vit-block0-ff-out")).is_increment);
  EXPECT_TRUE(describe(sdxl, parse_activation_id("up-level0-repeat0-vit-block0-self-v")).is_increment);
  EXPECT_FALSE(describe(sdxl, parse_activation_id("up-level0-repeat0-vit-block0-self-k")).is_increment);
  EXPECT_FALSE(describe(sdxl, parse_activation_id("up-level0-repeat0-vit-block0-cross-k")).dense);
  EXPECT_EQ(describe(sdxl, parse_activation_id("up-level1-repeat2-vit-out")).half, Half::Late);
  EXPECT_EQ(describe(sdxl, parse_activation_id("up-level1-repeat1-vit-out")).half, Half::Early);
  EXPECT_EQ(describe(sdxl, parse_activation_id("down-level1-repeat1-vit-out")).half, Half::NotApplicable);
  EXPECT_TRUE(describe(sdxl, parse_activation_id("up-level2-repeat0-res-out")).is_final_resolution);
}

TEST(Catalog, UnaddressableIdsAreRejected) {
  const auto registry = ArchitectureRegistry::with_builtins();
  const auto& sdxl = registry.get("sdxl");
  for (auto s : {"up-level3-repeat0-res-out", "up-level0-repeat3-res-out", "up-level0-repeat0-vit-block10-out",
                 "up-level2-repeat0-vit-block0-out", "up-level2-upsampler-out", "down-level0-repeat0-vit-out"}) {
    const auto id = parse_activation_id(s);
    EXPECT_FALSE(is_addressable(sdxl, id)) << s;
    EXPECT_THROW(describe(sdxl, id), ConfigError) << s;
  }
}

TEST(Catalog, ReferenceUniverseCount) {
  const auto registry = ArchitectureRegistry::with_builtins();
  EXPECT_EQ(enumerate_candidates(registry.get("sdxl"), builtin_policy("reference-universe")).size(), 279u);
}

TEST(Catalog, PolicyOutsideTheLayoutIsConfigError) {
  const auto registry = ArchitectureRegistry::with_builtins();
  EXPECT_THROW(enumerate_candidates(registry.get("sdxl"), builtin_policy("sd15-tabulated")), ConfigError);
}

TEST(Catalog, EnumerationIsDeterministicForwardOrderedAndUnique) {
  const auto registry = ArchitectureRegistry::with_builtins();
  const std::map<std::string, std::vector<std::string>> policies = {
      {"sd15", {"reference-universe", "up-universe", "sd15-tabulated", "sd15-table", "full"}},
      {"sdxl", {"reference-universe", "up-universe", "sdxl-table", "full"}}};
  for (const auto& [name, names] : policies) {
    for (const auto& policy_name : names) {
      const auto& policy = builtin_policy(policy_name);
      const auto a = enumerate_candidates(registry.get(name), policy);
      EXPECT_EQ(a, enumerate_candidates(registry.get(name), policy));
      auto ids = a.ids();
      std::set<ActivationId> unique(ids.begin(), ids.end());
      EXPECT_EQ(unique.size(), ids.size()) << name << ' ' << policy.name;
      for (const auto& id : ids) EXPECT_TRUE(is_addressable(registry.get(name), id));
    }
  }
}

TEST(Catalog, RenderedPoolListsOneIdPerLine) {
  const auto registry = ArchitectureRegistry::with_builtins();
  const auto pool = enumerate_candidates(registry.get("sd15"), builtin_policy("sd15-table"));
  const auto text = render_pool(pool);
  EXPECT_EQ(pool.size(), 33u);
  EXPECT_NE(text.find("up-level3-repeat0-vit-block0-self-k"), std::string::npos);
}

TEST(Catalog, TablePoliciesReproducePublishedRowSets) {
  const auto registry = ArchitectureRegistry::with_builtins();
  const auto sdxl = enumerate_candidates(registry.get("sdxl"), builtin_policy("sdxl-table"));
  EXPECT_EQ(sdxl.size(), 63u);
}

TEST(Architecture, FormatParseRoundTrip) {
  for (const auto& arch : builtin_architectures()) {
    const auto again = parse_architectures(format_architecture(arch));
    ASSERT_EQ(again.size(), 1 + arch.aliases.size());
    EXPECT_TRUE(structurally_equal(again.front(), arch)) << arch.name;
  }
}

TEST(Architecture, PlaygroundSharesSdxlLayout) {
  const auto registry = ArchitectureRegistry::with_builtins();
  EXPECT_TRUE(structurally_equal(registry.get("sdxl"), registry.get("playground-v2")));
  EXPECT_THROW(registry.get("sd3"), ConfigError);
}
