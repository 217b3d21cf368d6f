#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "difsel/architecture.hpp"
#include "difsel/feature_store.hpp"
#include "difsel/tensor.hpp"

namespace difsel {

struct RecipeItem {
  std::string model;
  std::string activation;  // canonical activation ID or "attention-maps"
  ResizeMode resize = ResizeMode::Bilinear;

  bool is_attention_maps() const { return activation == kAttentionMapsKey; }
  friend bool operator==(const RecipeItem&, const RecipeItem&) = default;
};

enum class TargetPolicy { LargestMember, Explicit };

struct SelectionRecipe {
  std::string name;
  std::vector<RecipeItem> items;
  TargetPolicy target = TargetPolicy::LargestMember;
  int target_width = 0;
  int target_height = 0;
  friend bool operator==(const SelectionRecipe&, const SelectionRecipe&) = default;
};

// Parses `---`-separated recipe documents. Models must be known to `registry`
// and every ID addressable in its model. Throws ParseError / ConfigError.
std::vector<SelectionRecipe> load_recipes(std::string_view text, const ArchitectureRegistry& registry);
SelectionRecipe load_recipe(std::string_view text, const ArchitectureRegistry& registry);
std::string format_recipe(const SelectionRecipe& recipe);

// ours-v15, ours-xl, ours-xl-t and ours-xl-t-complex.
const std::vector<SelectionRecipe>& builtin_recipes();
const SelectionRecipe& builtin_recipe(std::string_view name);  // throws ConfigError

// Sum of member widths from the catalog; attention maps count
// `attention_channels` each.
int recipe_channels(const SelectionRecipe& recipe, const ArchitectureRegistry& registry, int attention_channels = 0);

struct ChannelRange {
  int begin = 0;
  int end = 0;  // exclusive
  std::string model;
  std::string activation;
  friend bool operator==(const ChannelRange&, const ChannelRange&) = default;
};

struct AssembledFeature {
  std::string sample_key;
  Tensor3 data;
  std::vector<ChannelRange> channel_index;
};

// Resizes every record to the target resolution and concatenates them in
// recipe order. Records must match the items one to one and share a sample.
// When `registry` is given, member channels are checked against the catalog.
AssembledFeature assemble(const std::vector<FeatureRecord>& records, const SelectionRecipe& recipe,
                          const ArchitectureRegistry* registry = nullptr);

// Model name under which assembled features are stored (activation = recipe name).
inline constexpr std::string_view kAssembledModel = "assembled";

}  // namespace difsel
