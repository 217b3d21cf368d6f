#include "difsel/filtering.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "difsel/error.hpp"
#include "difsel/text_format.hpp"

namespace difsel {

namespace {

constexpr std::array<std::pair<FilterRule, std::string_view>, 5> kRuleNames{{
    {FilterRule::R1UpstageEarlyHalf, "R1_upstage_early_half"},
    {FilterRule::R2DropSelfAttentionEarly, "R2_drop_self_attention_early"},
    {FilterRule::R3KeepSelfQkLate, "R3_keep_self_qk_late"},
    {FilterRule::R4DropIncrements, "R4_drop_increments"},
    {FilterRule::R5FinalResolutionSelfOnly, "R5_final_resolution_self_only"},
}};

}  // namespace

std::string_view to_string(FilterRule rule) noexcept {
  for (const auto& [r, name] : kRuleNames) {
    if (r == rule) return name;
  }
  return "?";
}

FilterRule filter_rule_from_string(std::string_view text) {
  for (const auto& [r, name] : kRuleNames) {
    if (name == text) return r;
  }
  throw ConfigError("unknown filter rule '" + std::string(text) + "'");
}

FilterConfig FilterConfig::all_rules() {
  FilterConfig c;
  c.rules.assign(std::begin(kRuleOrder), std::end(kRuleOrder));
  return c;
}

bool FilterConfig::enabled(FilterRule rule) const {
  return std::find(rules.begin(), rules.end(), rule) != rules.end();
}

void validate(const FilterConfig& config) {
  if (config.rules.empty()) throw ConfigError("filter config: rule set is empty");
  for (std::size_t i = 0; i < config.rules.size(); ++i) {
    for (std::size_t j = i + 1; j < config.rules.size(); ++j) {
      if (config.rules[i] == config.rules[j]) {
        throw ConfigError("filter config: duplicate rule " + std::string(to_string(config.rules[i])));
      }
    }
  }
  for (const auto& [arch, roles] : config.late_self_roles) {
    for (Role r : roles) {
      if (!is_self_attention(r)) throw ConfigError("filter config: late-self-roles for " + arch + " lists a non self-attention role");
    }
  }
}

FilterConfig parse_filter_config(std::string_view source) {
  const auto doc = text::parse_document(source);
  FilterConfig config;
  for (const auto& d : doc.directives) {
    if (d.keyword == "rules") {
      for (const auto& a : d.args) config.rules.push_back(filter_rule_from_string(a));
    } else if (d.keyword == "late-self-roles") {
      if (d.args.empty()) throw ParseError("late-self-roles needs an architecture name", d.keyword);
      auto& roles = config.late_self_roles[d.args[0]];
      for (std::size_t i = 1; i < d.args.size(); ++i) {
        const auto role = role_from_string(d.args[i]);
        if (!role) throw ParseError("unknown role '" + d.args[i] + "'", d.args[i]);
        roles.insert(*role);
      }
    } else {
      throw ParseError("unknown filter directive '" + d.keyword + "'", d.keyword);
    }
  }
  validate(config);
  return config;
}

std::size_t FilterReport::eliminated_count() const {
  std::size_t n = 0;
  for (const auto& [rule, ids] : eliminated) n += ids.size();
  return n;
}

std::optional<int> FilterReport::reduction_percent() const {
  if (input_count == 0) return std::nullopt;
  const auto removed = input_count - output_count;
  return static_cast<int>((100 * removed + input_count - 1) / input_count);
}

std::optional<double> FilterReport::reduction_ratio() const {
  if (input_count == 0) return std::nullopt;
  return static_cast<double>(input_count - output_count) / static_cast<double>(input_count);
}

namespace {

// First enabled rule (in kRuleOrder) that eliminates `e`, if any.
std::optional<FilterRule> eliminating_rule(const ActivationDescriptor& e, const FilterConfig& config,
                                           const std::set<Role>& late_self_roles) {
  const bool late = e.half == Half::Late;
  const bool keep_late_modules = config.enabled(FilterRule::R3KeepSelfQkLate);
  for (FilterRule rule : kRuleOrder) {
    if (!config.enabled(rule)) continue;
    bool drop = false;
    switch (rule) {
      case FilterRule::R1UpstageEarlyHalf:
        drop = e.id.stage() != Stage::Up || (late && (!keep_late_modules || e.id.is_sampler()));
        break;
      case FilterRule::R4DropIncrements:
        drop = e.is_increment;
        break;
      case FilterRule::R2DropSelfAttentionEarly:
        drop = !late && is_self_attention(e.id.role());
        break;
      case FilterRule::R3KeepSelfQkLate:
        drop = late && is_self_attention(e.id.role()) && !late_self_roles.contains(e.id.role());
        break;
      case FilterRule::R5FinalResolutionSelfOnly:
        drop = e.is_final_resolution && e.id.role() != Role::SelfQ && e.id.role() != Role::SelfK;
        break;
    }
    if (drop) return rule;
  }
  return std::nullopt;
}

}  // namespace

FilterResult apply_qualitative_filters(const CandidatePool& pool, const ArchitectureSpec& arch,
                                       const FilterConfig& config) {
  validate(config);
  if (pool.architecture != arch.name) {
    throw ConfigError("pool was enumerated for '" + pool.architecture + "', not '" + arch.name + "'");
  }
  std::set<Role> late_self_roles(arch.late_self_attention_roles.begin(), arch.late_self_attention_roles.end());
  if (auto it = config.late_self_roles.find(arch.name); it != config.late_self_roles.end()) late_self_roles = it->second;

  FilterResult result;
  result.pool.architecture = pool.architecture;
  result.report.architecture = pool.architecture;
  result.report.input_count = pool.size();
  for (FilterRule rule : kRuleOrder) {
    if (config.enabled(rule)) result.report.eliminated.push_back({rule, {}});
  }
  for (const auto& e : pool.entries) {
    if (describe(arch, e.id) != e) throw ConfigError("pool descriptor for " + e.id.str() + " disagrees with '" + arch.name + "'");
    if (const auto rule = eliminating_rule(e, config, late_self_roles)) {
      auto it = std::find_if(result.report.eliminated.begin(), result.report.eliminated.end(),
                             [&](const auto& p) { return p.first == *rule; });
      it->second.push_back(e.id);
    } else {
      result.pool.entries.push_back(e);
    }
  }
  result.report.output_count = result.pool.size();

  std::string applied;
  for (FilterRule rule : kRuleOrder) {
    if (config.enabled(rule)) applied += (applied.empty() ? "" : ",") + std::string(to_string(rule));
  }
  result.pool.provenance = pool.provenance + "; filters=" + applied;
  return result;
}

RenderedReport filter_report_render(const FilterReport& report) {
  std::ostringstream text;
  nlohmann::json json;
  json["architecture"] = report.architecture;
  json["input_count"] = report.input_count;
  json["output_count"] = report.output_count;
  json["eliminated"] = nlohmann::json::object();

  text << "filter report for " << report.architecture << '\n';
  text << "input candidates: " << report.input_count << '\n';
  for (const auto& [rule, ids] : report.eliminated) {
    text << "  " << to_string(rule) << ": " << ids.size() << " eliminated\n";
    auto& list = json["eliminated"][std::string(to_string(rule))] = nlohmann::json::array();
    for (const auto& id : ids) list.push_back(id.str());
  }
  const auto percent = report.reduction_percent();
  if (percent) {
    json["reduction_percent"] = *percent;
    json["reduction_ratio"] = *report.reduction_ratio();
    text << report.output_count << " candidates retained (" << *percent << "% reduction)\n";
  } else {
    json["reduction_percent"] = nullptr;
    json["reduction_ratio"] = nullptr;
    text << report.output_count << " candidates retained (reduction undefined)\n";
  }
  return {text.str(), json.dump(2) + "\n"};
}

}  // namespace difsel
