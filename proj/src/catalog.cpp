#include "difsel/catalog.hpp"

#include <algorithm>
#include <array>
#include <sstream>

#include "difsel/error.hpp"
#include "difsel/text_format.hpp"

namespace difsel {

namespace {

// Forward (computation) order of roles inside one module.
constexpr std::array<Role, 2> kResOrder{Role::Inc, Role::Out};
constexpr std::array<Role, 10> kBlockOrder{Role::SelfQ,  Role::SelfK,  Role::SelfV,    Role::SelfOut, Role::CrossQ,
                                           Role::CrossK, Role::CrossV, Role::CrossOut, Role::FfOut,   Role::Out};

}  // namespace

std::string_view to_string(Half half) noexcept {
  switch (half) {
    case Half::Early: return "early";
    case Half::Late: return "late";
    case Half::NotApplicable: return "n/a";
  }
  return "?";
}

bool is_addressable(const ArchitectureSpec& arch, const ActivationId& id) noexcept {
  const auto* level = arch.find_level(id.stage(), id.level());
  if (!level) return false;
  switch (id.site()) {
    case Site::Res: return *id.repeat() < level->repeats;
    case Site::Vit:
      if (*id.repeat() >= level->repeats || !level->has_vit(*id.repeat())) return false;
      return !id.block() || *id.block() < level->vit_blocks;
    case Site::Upsampler:
    case Site::Downsampler: return level->sampler;
  }
  return false;
}

ActivationDescriptor describe(const ArchitectureSpec& arch, const ActivationId& id) {
  if (!is_addressable(arch, id)) {
    throw ConfigError("activation " + id.str() + " is not addressable in architecture '" + arch.name + "'");
  }
  const auto& level = *arch.find_level(id.stage(), id.level());
  ActivationDescriptor d{.id = id};
  d.channels = level.width;
  d.spatial_scale = level.scale;
  if (id.site() == Site::Upsampler) d.spatial_scale = level.scale * Rational(2);
  if (id.site() == Site::Downsampler) d.spatial_scale = level.scale / Rational(2);
  if (id.stage() == Stage::Up) {
    d.half = arch.is_late_half({*id.level(), id.repeat()}) ? Half::Late : Half::Early;
    d.is_final_resolution = *id.level() == arch.final_level;
  }
  d.is_increment = is_increment(id.role());
  d.dense = is_dense(id.role());
  return d;
}

Shape3 expected_shape(const ArchitectureSpec& arch, const ActivationDescriptor& descriptor, int input_width,
                      int input_height, int context_tokens) {
  if (input_width % arch.latent_factor != 0 || input_height % arch.latent_factor != 0) {
    throw ConfigError("input size must be a multiple of the latent factor " + std::to_string(arch.latent_factor));
  }
  if (!descriptor.dense) return {descriptor.channels, 1, context_tokens};
  const auto h = descriptor.spatial_scale.apply(input_height / arch.latent_factor);
  const auto w = descriptor.spatial_scale.apply(input_width / arch.latent_factor);
  if (h <= 0 || w <= 0) {
    throw ConfigError("input size does not divide evenly at " + descriptor.id.str());
  }
  return {descriptor.channels, static_cast<int>(h), static_cast<int>(w)};
}

namespace {

template <typename Visit>
void walk(const ArchitectureSpec& arch, bool all_blocks, Visit&& visit) {
  for (const auto& stage : arch.stages) {
    for (const auto& level : stage.levels) {
      for (int r = 0; r < level.repeats; ++r) {
        for (Role role : kResOrder) visit(stage, level, ActivationId::res(stage.stage, level.level, r, role));
        if (!level.has_vit(r)) continue;
        std::vector<int> blocks = level.sampled_blocks;
        if (all_blocks) {
          blocks.clear();
          for (int b = 0; b < level.vit_blocks; ++b) blocks.push_back(b);
        }
        for (int b : blocks) {
          for (Role role : kBlockOrder) {
            visit(stage, level, ActivationId::vit_block(stage.stage, level.level, r, b, role));
          }
        }
        visit(stage, level, ActivationId::vit_out(stage.stage, level.level, r));
      }
      if (level.sampler) visit(stage, level, ActivationId::sampler(stage.stage, *level.level));
    }
  }
}

bool clause_selects(const SelectionClause& c, const ActivationId& id) {
  if (!c.stages.empty() && !c.stages.contains(id.stage())) return false;
  if (id.level() && !c.levels.empty() && !c.levels.contains(*id.level())) return false;
  if (id.repeat() && !c.repeats.empty() && !c.repeats.contains(*id.repeat())) return false;
  switch (id.site()) {
    case Site::Res: return c.res_roles.contains(id.role());
    case Site::Vit: return id.role() == Role::VitOut ? c.vit_out : c.block_roles.contains(id.role());
    case Site::Upsampler:
    case Site::Downsampler: return c.samplers && c.repeats.empty();
  }
  return false;
}

void check_clause(const ArchitectureSpec& arch, const EnumerationPolicy& policy, const SelectionClause& c) {
  auto fail = [&](const std::string& why) {
    throw ConfigError("policy '" + policy.name + "' on architecture '" + arch.name + "': " + why);
  };
  for (Role r : c.res_roles) {
    if (r != Role::Out && r != Role::Inc) fail("res roles are out and inc");
  }
  for (Role r : c.block_roles) {
    if (!is_block_role(r)) fail("'" + std::string(to_string(r)) + "' is not a ViT block role");
    if (!is_dense(r)) fail("'" + std::string(to_string(r)) + "' is token-shaped, not a dense candidate");
  }
  std::vector<const LevelLayout*> selected;
  for (Stage s : c.stages) {
    if (!arch.find_stage(s)) fail("stage '" + std::string(to_string(s)) + "' is absent");
  }
  for (const auto& stage : arch.stages) {
    if (!c.stages.empty() && !c.stages.contains(stage.stage)) continue;
    for (const auto& l : stage.levels) {
      if (!l.level || c.levels.empty() || c.levels.contains(*l.level)) selected.push_back(&l);
    }
  }
  for (int lv : c.levels) {
    const bool found = std::any_of(selected.begin(), selected.end(), [&](const LevelLayout* l) { return l->level == lv; });
    if (!found) fail("level " + std::to_string(lv) + " is absent");
  }
  for (int r : c.repeats) {
    const bool found = std::any_of(selected.begin(), selected.end(), [&](const LevelLayout* l) { return r < l->repeats; });
    if (!found) fail("repeat " + std::to_string(r) + " is absent");
  }
  const bool any_vit = std::any_of(selected.begin(), selected.end(), [](const LevelLayout* l) { return l->vit_blocks > 0; });
  if ((!c.block_roles.empty() || c.vit_out) && !any_vit) fail("ViT roles requested where no ViT exists");
  const bool any_sampler = std::any_of(selected.begin(), selected.end(), [](const LevelLayout* l) { return l->sampler; });
  if (c.samplers && !any_sampler) fail("samplers requested where none exist");
}

template <typename Enum, typename FromString>
std::set<Enum> parse_set(const std::string& list, FromString from_string, const char* what) {
  std::set<Enum> out;
  for (const auto& item : text::split(list, ',')) {
    const auto v = from_string(item);
    if (!v) throw ParseError(std::string("unknown ") + what + " '" + item + "'", item);
    out.insert(*v);
  }
  return out;
}

std::set<int> parse_int_set(const std::string& list, const char* what) {
  std::set<int> out;
  for (const auto& item : text::split(list, ',')) out.insert(text::parse_int(item, what));
  return out;
}

}  // namespace

std::vector<ActivationId> all_activations(const ArchitectureSpec& arch) {
  std::vector<ActivationId> out;
  walk(arch, true, [&](const StageLayout&, const LevelLayout&, const ActivationId& id) { out.push_back(id); });
  return out;
}

std::vector<EnumerationPolicy> parse_policies(std::string_view source) {
  std::vector<EnumerationPolicy> out;
  for (const auto& doc : text::parse_documents(source)) {
    const auto* head = doc.find("policy");
    if (!head || head->positional().empty()) throw ParseError("policy document needs 'policy <name>'", "");
    EnumerationPolicy policy;
    policy.name = head->positional().front();
    policy.all_blocks = head->flag("all-blocks");
    for (const auto& d : doc.directives) {
      if (d.keyword == "policy") continue;
      if (d.keyword == "exclude") {
        for (const auto& a : d.args) policy.exclude.push_back(parse_activation_id(a));
      } else if (d.keyword == "select") {
        SelectionClause c;
        if (auto v = d.option("stage")) c.stages = parse_set<Stage>(*v, stage_from_string, "stage");
        if (auto v = d.option("level")) c.levels = parse_int_set(*v, "level");
        if (auto v = d.option("repeat")) c.repeats = parse_int_set(*v, "repeat");
        if (auto v = d.option("res")) c.res_roles = parse_set<Role>(*v, role_from_string, "role");
        if (auto v = d.option("block")) c.block_roles = parse_set<Role>(*v, role_from_string, "role");
        c.vit_out = d.flag("vit-out");
        c.samplers = d.flag("sampler");
        for (const auto& a : d.args) {
          const auto key = a.substr(0, a.find('='));
          static const std::set<std::string> known{"stage", "level", "repeat", "res", "block", "vit-out", "sampler"};
          if (!known.contains(key)) throw ParseError("unknown select argument '" + a + "'", a);
        }
        policy.clauses.push_back(std::move(c));
      } else {
        throw ParseError("unknown policy directive '" + d.keyword + "'", d.keyword);
      }
    }
    out.push_back(std::move(policy));
  }
  return out;
}

const std::vector<EnumerationPolicy>& builtin_policies() {
  static const std::vector<EnumerationPolicy> policies = parse_policies(builtin_text::kPolicies);
  return policies;
}

const EnumerationPolicy& builtin_policy(std::string_view name) {
  for (const auto& p : builtin_policies()) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown enumeration policy '" + std::string(name) + "'");
}

std::vector<ActivationId> CandidatePool::ids() const {
  std::vector<ActivationId> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.id);
  return out;
}

bool CandidatePool::contains(const ActivationId& id) const {
  return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.id == id; });
}

CandidatePool enumerate_candidates(const ArchitectureSpec& arch, const EnumerationPolicy& policy) {
  for (const auto& c : policy.clauses) check_clause(arch, policy, c);
  for (const auto& id : policy.exclude) {
    if (!is_addressable(arch, id)) {
      throw ConfigError("policy '" + policy.name + "' excludes " + id.str() + ", which '" + arch.name + "' lacks");
    }
  }
  CandidatePool pool{.architecture = arch.name, .entries = {}, .provenance = "policy=" + policy.name};
  walk(arch, policy.all_blocks, [&](const StageLayout&, const LevelLayout&, const ActivationId& id) {
    const bool selected = std::any_of(policy.clauses.begin(), policy.clauses.end(),
                                      [&](const SelectionClause& c) { return clause_selects(c, id); });
    if (!selected) return;
    if (std::find(policy.exclude.begin(), policy.exclude.end(), id) != policy.exclude.end()) return;
    pool.entries.push_back(describe(arch, id));
  });
  return pool;
}

std::string render_pool(const CandidatePool& pool) {
  std::ostringstream out;
  out << "# architecture " << pool.architecture << '\n';
  out << "# " << pool.provenance << '\n';
  out << "activation_id\tchannels\tscale\thalf\tincrement\tfinal_resolution\n";
  for (const auto& e : pool.entries) {
    out << e.id.str() << '\t' << e.channels << '\t' << e.spatial_scale.to_string() << '\t' << to_string(e.half)
        << '\t' << (e.is_increment ? "yes" : "no") << '\t' << (e.is_final_resolution ? "yes" : "no") << '\n';
  }
  out << "# " << pool.size() << " candidates\n";
  return out.str();
}

std::string resolution_key(const ActivationId& id) {
  std::string out(to_string(id.stage()));
  if (id.level()) out += "-level" + std::to_string(*id.level());
  return out;
}

}  // namespace difsel
