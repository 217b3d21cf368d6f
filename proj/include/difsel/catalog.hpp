#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "difsel/activation_id.hpp"
#include "difsel/architecture.hpp"
#include "difsel/rational.hpp"

namespace difsel {

enum class Half { Early, Late, NotApplicable };
std::string_view to_string(Half half) noexcept;

struct ActivationDescriptor {
  ActivationId id;
  int channels = 0;
  Rational spatial_scale{1};
  Half half = Half::NotApplicable;
  bool is_increment = false;
  bool is_final_resolution = false;
  bool dense = true;

  friend bool operator==(const ActivationDescriptor&, const ActivationDescriptor&) = default;
};

// Fills the descriptor from the architecture; throws ConfigError when the ID
// is not addressable in `arch`.
ActivationDescriptor describe(const ArchitectureSpec& arch, const ActivationId& id);
bool is_addressable(const ArchitectureSpec& arch, const ActivationId& id) noexcept;

// Expected (channels, height, width) of an activation for an input of the
// given pixel size. Token-shaped roles report (channels, 1, tokens).
struct Shape3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  friend bool operator==(const Shape3&, const Shape3&) = default;
};
Shape3 expected_shape(const ArchitectureSpec& arch, const ActivationDescriptor& descriptor, int input_width,
                      int input_height, int context_tokens = 1);

// Every addressable activation of the architecture in forward order (all
// roles, all blocks).
std::vector<ActivationId> all_activations(const ArchitectureSpec& arch);

struct SelectionClause {
  std::set<Stage> stages;   // empty: all stages
  std::set<int> levels;     // empty: all levels (ignored for mid)
  std::set<int> repeats;    // empty: all repeats
  std::set<Role> res_roles;
  std::set<Role> block_roles;
  bool vit_out = false;
  bool samplers = false;
};

struct EnumerationPolicy {
  std::string name;
  std::vector<SelectionClause> clauses;
  std::vector<ActivationId> exclude;
  bool all_blocks = false;  // ignore the architecture's block sampling

  bool empty() const noexcept { return clauses.empty(); }
};

std::vector<EnumerationPolicy> parse_policies(std::string_view text);
const std::vector<EnumerationPolicy>& builtin_policies();
const EnumerationPolicy& builtin_policy(std::string_view name);  // throws ConfigError

struct CandidatePool {
  std::string architecture;
  std::vector<ActivationDescriptor> entries;
  std::string provenance;

  std::size_t size() const noexcept { return entries.size(); }
  std::vector<ActivationId> ids() const;
  bool contains(const ActivationId& id) const;
  friend bool operator==(const CandidatePool&, const CandidatePool&) = default;
};

// Lists every activation selected by the policy, in forward order.
CandidatePool enumerate_candidates(const ArchitectureSpec& arch, const EnumerationPolicy& policy);

// Tab-separated listing: id, channels, scale, half, increment, final.
std::string render_pool(const CandidatePool& pool);

// Groups an ID with its resolution ("up-level1", "mid"); samplers count with
// the level they close.
std::string resolution_key(const ActivationId& id);

}  // namespace difsel
