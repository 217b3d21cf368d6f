#pragma once

// Canonical addresses of tensors inside a diffusion U-Net.
//
//   stage[-levelN][-repeatN|-upsampler|-downsampler][-res|-vit][-blockN][-role]
//
// e.g. "up-level1-repeat0-vit-block0-cross-q", "up-level2-upsampler-out",
// "mid-repeat0-res-out". Indices count from zero; the mid stage has no level.

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace difsel {

enum class Stage : std::uint8_t { Down, Mid, Up };
enum class Site : std::uint8_t { Res, Vit, Upsampler, Downsampler };

// Out is the output of a ResModule, a sampler or a ViT basic block; VitOut is
// the output of the whole ViT module (after its own residual). Inc is the
// ResModule increment branch.
enum class Role : std::uint8_t {
  Out,
  Inc,
  SelfQ,
  SelfK,
  SelfV,
  SelfOut,
  CrossQ,
  CrossK,
  CrossV,
  CrossOut,
  FfOut,
  VitOut,
};

std::string_view to_string(Stage stage) noexcept;
std::string_view to_string(Site site) noexcept;
// Role names as used in configuration files ("self-k", "vit-out", "inc", ...).
std::string_view to_string(Role role) noexcept;
std::optional<Stage> stage_from_string(std::string_view text) noexcept;
std::optional<Role> role_from_string(std::string_view text) noexcept;

bool is_self_attention(Role role) noexcept;
bool is_block_role(Role role) noexcept;
// Cross-attention keys/values live on prompt tokens, not on the spatial grid.
bool is_dense(Role role) noexcept;
// Residual-branch increments (ResModule increment, feed-forward output, self-attention value).
bool is_increment(Role role) noexcept;

class ActivationId {
 public:
  // Factories validate the structural invariants and throw std::invalid_argument.
  static ActivationId res(Stage stage, std::optional<int> level, int repeat, Role role = Role::Out);
  static ActivationId vit_block(Stage stage, std::optional<int> level, int repeat, int block, Role role);
  static ActivationId vit_out(Stage stage, std::optional<int> level, int repeat);
  static ActivationId sampler(Stage stage, int level);

  Stage stage() const noexcept { return stage_; }
  std::optional<int> level() const noexcept { return level_; }
  Site site() const noexcept { return site_; }
  std::optional<int> repeat() const noexcept { return repeat_; }
  std::optional<int> block() const noexcept { return block_; }
  Role role() const noexcept { return role_; }

  bool is_sampler() const noexcept { return site_ == Site::Upsampler || site_ == Site::Downsampler; }

  std::string str() const;

  friend auto operator<=>(const ActivationId&, const ActivationId&) = default;

 private:
  ActivationId(Stage stage, std::optional<int> level, Site site, std::optional<int> repeat, std::optional<int> block,
               Role role);

  Stage stage_ = Stage::Up;
  std::optional<int> level_;
  Site site_ = Site::Res;
  std::optional<int> repeat_;
  std::optional<int> block_;
  Role role_ = Role::Out;
};

// Throws ParseError naming the first offending token. Accepts upper case and
// leading zeros; format() always yields the canonical form.
ActivationId parse_activation_id(std::string_view text);
std::optional<ActivationId> try_parse_activation_id(std::string_view text) noexcept;
std::string format_activation_id(const ActivationId& id);

}  // namespace difsel
