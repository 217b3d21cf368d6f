#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "difsel/architecture.hpp"
#include "difsel/catalog.hpp"

namespace difsel {

// Qualitative filter rules derived from three U-Net properties:
//  R1  keep only the up stage, early half (late-half ResModule/ViT positions
//      stay when R3 is enabled, to be pruned by R3/R5)
//  R4  drop residual increments (ResModule increment, feed-forward, self-attention value)
//  R2  drop self-attention roles outside the late half
//  R3  late half: keep only the whitelisted self-attention roles beside clean roles
//  R5  final resolution: keep only self-attention query/key
enum class FilterRule { R1UpstageEarlyHalf, R2DropSelfAttentionEarly, R3KeepSelfQkLate, R4DropIncrements,
                        R5FinalResolutionSelfOnly };

std::string_view to_string(FilterRule rule) noexcept;
FilterRule filter_rule_from_string(std::string_view text);  // throws ConfigError

// Application order is fixed; attribution goes to the first eliminating rule.
inline constexpr FilterRule kRuleOrder[] = {FilterRule::R1UpstageEarlyHalf, FilterRule::R4DropIncrements,
                                            FilterRule::R2DropSelfAttentionEarly, FilterRule::R3KeepSelfQkLate,
                                            FilterRule::R5FinalResolutionSelfOnly};

struct FilterConfig {
  std::vector<FilterRule> rules;
  // Overrides of ArchitectureSpec::late_self_attention_roles, keyed by architecture name.
  std::map<std::string, std::set<Role>> late_self_roles;

  static FilterConfig all_rules();
  bool enabled(FilterRule rule) const;
};

// Format:
//   rules R1_upstage_early_half R4_drop_increments ...
//   late-self-roles <arch> self-q self-k
FilterConfig parse_filter_config(std::string_view text);
void validate(const FilterConfig& config);  // throws ConfigError

struct FilterReport {
  std::string architecture;
  std::size_t input_count = 0;
  std::size_t output_count = 0;
  std::vector<std::pair<FilterRule, std::vector<ActivationId>>> eliminated;  // one entry per enabled rule, in order

  std::size_t eliminated_count() const;
  // Integer percentage of eliminated candidates, rounded up; nullopt for empty input.
  std::optional<int> reduction_percent() const;
  // Exact fraction eliminated; nullopt for empty input.
  std::optional<double> reduction_ratio() const;
};

struct FilterResult {
  CandidatePool pool;
  FilterReport report;
};

FilterResult apply_qualitative_filters(const CandidatePool& pool, const ArchitectureSpec& arch,
                                       const FilterConfig& config = FilterConfig::all_rules());

struct RenderedReport {
  std::string text;  // human readable, last line "N candidates retained (P% reduction)"
  std::string json;  // machine readable
};
RenderedReport filter_report_render(const FilterReport& report);

}  // namespace difsel
