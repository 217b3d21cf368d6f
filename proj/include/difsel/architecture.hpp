#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "difsel/activation_id.hpp"
#include "difsel/rational.hpp"

namespace difsel {

// One resolution of one stage. Each repeat holds a ResModule followed by a ViT
// when `repeat < vit_repeats`; an optional sampler closes the level.
struct LevelLayout {
  std::optional<int> level;  // absent for the mid stage
  int width = 0;             // channel width of every module at this level
  Rational scale{1};         // activation size relative to the input latent
  int repeats = 0;
  int vit_blocks = 0;        // basic blocks per ViT; 0 means no ViT
  int vit_repeats = 0;       // how many leading repeats carry a ViT
  std::vector<int> sampled_blocks;  // enumerable block indices (default: all)
  bool sampler = false;

  bool has_vit(int repeat) const noexcept { return vit_blocks > 0 && repeat < vit_repeats; }
  friend bool operator==(const LevelLayout&, const LevelLayout&) = default;
};

struct StageLayout {
  Stage stage = Stage::Up;
  std::vector<LevelLayout> levels;
  friend bool operator==(const StageLayout&, const StageLayout&) = default;
};

// An up-stage module position: (level, repeat) or the level's sampler.
struct ModulePosition {
  int level = 0;
  std::optional<int> repeat;  // absent = sampler
  friend auto operator<=>(const ModulePosition&, const ModulePosition&) = default;
};

struct ArchitectureSpec {
  std::string name;
  std::vector<std::string> aliases;
  int latent_factor = 8;  // input pixels per latent cell
  std::vector<StageLayout> stages;  // forward order: down, mid, up
  std::set<ModulePosition> late_half;
  int final_level = 0;  // up-stage level at the highest resolution
  std::vector<Role> late_self_attention_roles;
  std::string filter_universe = "reference-universe";

  const StageLayout* find_stage(Stage stage) const noexcept;
  const LevelLayout* find_level(Stage stage, std::optional<int> level) const noexcept;
  bool is_late_half(const ModulePosition& position) const noexcept { return late_half.contains(position); }
  // Up-stage module positions in forward order.
  std::vector<ModulePosition> up_positions() const;
};

// Layout-only comparison (ignores name, aliases).
bool structurally_equal(const ArchitectureSpec& a, const ArchitectureSpec& b);

// Throws ConfigError describing the first violated invariant.
void validate(const ArchitectureSpec& spec);

// Parses one or more `---`-separated architecture documents. An `alias` line
// yields an additional entry under that name with the same layout.
std::vector<ArchitectureSpec> parse_architectures(std::string_view text);
std::string format_architecture(const ArchitectureSpec& spec);

// sd15, sdxl and playground-v2 (which shares the sdxl layout).
const std::vector<ArchitectureSpec>& builtin_architectures();

class ArchitectureRegistry {
 public:
  ArchitectureRegistry() = default;
  explicit ArchitectureRegistry(std::vector<ArchitectureSpec> specs);
  static ArchitectureRegistry with_builtins();

  void add(ArchitectureSpec spec);
  const ArchitectureSpec* find(std::string_view name) const noexcept;
  const ArchitectureSpec& get(std::string_view name) const;  // throws ConfigError
  std::vector<std::string> names() const;

 private:
  std::vector<ArchitectureSpec> specs_;
};

namespace builtin_text {
extern const char* const kArchitectures;
extern const char* const kPolicies;
extern const char* const kRecipes;
}  // namespace builtin_text

}  // namespace difsel
