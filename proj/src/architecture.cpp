#include "difsel/architecture.hpp"

#include <algorithm>
#include <sstream>

#include "difsel/error.hpp"
#include "difsel/text_format.hpp"

namespace difsel {

const StageLayout* ArchitectureSpec::find_stage(Stage stage) const noexcept {
  for (const auto& s : stages) {
    if (s.stage == stage) return &s;
  }
  return nullptr;
}

const LevelLayout* ArchitectureSpec::find_level(Stage stage, std::optional<int> level) const noexcept {
  const auto* s = find_stage(stage);
  if (!s) return nullptr;
  for (const auto& l : s->levels) {
    if (l.level == level) return &l;
  }
  return nullptr;
}

std::vector<ModulePosition> ArchitectureSpec::up_positions() const {
  std::vector<ModulePosition> out;
  if (const auto* up = find_stage(Stage::Up)) {
    for (const auto& l : up->levels) {
      for (int r = 0; r < l.repeats; ++r) out.push_back({*l.level, r});
      if (l.sampler) out.push_back({*l.level, std::nullopt});
    }
  }
  return out;
}

bool structurally_equal(const ArchitectureSpec& a, const ArchitectureSpec& b) {
  return a.latent_factor == b.latent_factor && a.stages == b.stages && a.late_half == b.late_half &&
         a.final_level == b.final_level && a.late_self_attention_roles == b.late_self_attention_roles;
}

void validate(const ArchitectureSpec& spec) {
  auto fail = [&](const std::string& why) { throw ConfigError("architecture '" + spec.name + "': " + why); };
  if (spec.name.empty()) fail("missing name");
  if (spec.latent_factor <= 0) fail("latent-factor must be positive");
  Stage previous = Stage::Down;
  bool first = true;
  for (const auto& stage : spec.stages) {
    if (!first && stage.stage <= previous) fail("stages must be listed once each in order down, mid, up");
    previous = stage.stage;
    first = false;
    if (stage.stage == Stage::Mid && stage.levels.size() != 1) fail("mid stage has exactly one level");
    for (std::size_t i = 0; i < stage.levels.size(); ++i) {
      const auto& l = stage.levels[i];
      const std::string where = std::string(to_string(stage.stage)) + " level " +
                                (l.level ? std::to_string(*l.level) : std::string("-"));
      if (stage.stage == Stage::Mid) {
        if (l.level) fail("mid stage carries no level index");
        if (l.sampler) fail("mid stage has no sampler");
      } else if (!l.level || *l.level != static_cast<int>(i)) {
        fail(where + ": levels must be numbered 0.. in order");
      }
      if (l.width <= 0) fail(where + ": width must be positive");
      if (!l.scale.positive()) fail(where + ": scale must be positive");
      if (l.repeats <= 0) fail(where + ": repeats must be positive");
      if (l.vit_blocks < 0 || l.vit_repeats < 0 || l.vit_repeats > l.repeats) fail(where + ": bad ViT layout");
      if (l.vit_blocks == 0 && !l.sampled_blocks.empty()) fail(where + ": block sampling without ViT");
      for (int b : l.sampled_blocks) {
        if (b < 0 || b >= l.vit_blocks) fail(where + ": sampled block " + std::to_string(b) + " out of range");
      }
      if (!std::is_sorted(l.sampled_blocks.begin(), l.sampled_blocks.end()) ||
          std::adjacent_find(l.sampled_blocks.begin(), l.sampled_blocks.end()) != l.sampled_blocks.end()) {
        fail(where + ": sampled blocks must be strictly increasing");
      }
    }
  }
  const auto* up = spec.find_stage(Stage::Up);
  if (!up || up->levels.empty()) fail("an up stage is required");
  if (!spec.find_level(Stage::Up, spec.final_level)) fail("final-resolution names a missing up level");
  const auto positions = spec.up_positions();
  for (const auto& p : spec.late_half) {
    if (std::find(positions.begin(), positions.end(), p) == positions.end()) {
      fail("late-half position level" + std::to_string(p.level) + " does not exist");
    }
  }
  for (Role r : spec.late_self_attention_roles) {
    if (!is_self_attention(r)) fail("late-self-attention lists a non self-attention role");
  }
}

namespace {

ModulePosition parse_position_token(const std::string& token, const ArchitectureSpec& spec,
                                    std::set<ModulePosition>& out) {
  // levelN | levelN-repeatM | levelN-upsampler
  const auto parts = text::split(token, '-');
  if (parts.empty() || !parts[0].starts_with("level")) throw ParseError("bad late-half position '" + token + "'", token);
  const int level = text::parse_int(std::string_view(parts[0]).substr(5), "late-half level");
  if (parts.size() == 1) {
    const auto* l = spec.find_level(Stage::Up, level);
    if (!l) throw ConfigError("late-half names missing up level " + std::to_string(level));
    for (int r = 0; r < l->repeats; ++r) out.insert({level, r});
    if (l->sampler) out.insert({level, std::nullopt});
    return {level, std::nullopt};
  }
  if (parts.size() != 2) throw ParseError("bad late-half position '" + token + "'", token);
  ModulePosition p{level, std::nullopt};
  if (parts[1] == "upsampler") {
    out.insert(p);
  } else if (parts[1].starts_with("repeat")) {
    p.repeat = text::parse_int(std::string_view(parts[1]).substr(6), "late-half repeat");
    out.insert(p);
  } else {
    throw ParseError("bad late-half position '" + token + "'", token);
  }
  return p;
}

Rational parse_rational(const std::string& text) {
  const auto parts = text::split(text, '/');
  if (parts.size() == 1) return Rational(text::parse_int(parts[0], "scale"));
  if (parts.size() == 2) return Rational(text::parse_int(parts[0], "scale"), text::parse_int(parts[1], "scale"));
  throw ParseError("bad scale '" + text + "'", text);
}

ArchitectureSpec parse_one(const text::Document& doc, std::vector<std::string>& aliases) {
  ArchitectureSpec spec;
  const auto* head = doc.find("architecture");
  if (!head || head->args.size() != 1) throw ParseError("architecture document needs 'architecture <name>'", "");
  spec.name = head->args[0];

  std::vector<std::string> late_tokens;
  bool have_final = false;
  for (const auto& d : doc.directives) {
    if (d.keyword == "architecture") continue;
    if (d.keyword == "alias") {
      aliases.insert(aliases.end(), d.args.begin(), d.args.end());
    } else if (d.keyword == "latent-factor") {
      if (d.args.size() != 1) throw ParseError("latent-factor takes one value", d.keyword);
      spec.latent_factor = text::parse_int(d.args[0], "latent-factor");
    } else if (d.keyword == "level") {
      auto pos = d.positional();
      std::erase(pos, std::string("sampler"));
      if (pos.size() != 2) throw ParseError("level line needs '<stage> <index|->' (line " + std::to_string(d.line) + ")", d.keyword);
      const auto stage = stage_from_string(pos[0]);
      if (!stage) throw ParseError("unknown stage '" + pos[0] + "'", pos[0]);
      LevelLayout level;
      if (pos[1] != "-") level.level = text::parse_int(pos[1], "level index");
      auto required = [&](const char* key) {
        auto v = d.option(key);
        if (!v) throw ParseError(std::string("level line missing ") + key + " (line " + std::to_string(d.line) + ")", key);
        return *v;
      };
      level.width = text::parse_int(required("width"), "width");
      level.scale = parse_rational(required("scale"));
      level.repeats = text::parse_int(required("repeats"), "repeats");
      if (auto v = d.option("vit")) level.vit_blocks = text::parse_int(*v, "vit");
      level.vit_repeats = level.vit_blocks > 0 ? level.repeats : 0;
      if (auto v = d.option("vit-repeats")) level.vit_repeats = text::parse_int(*v, "vit-repeats");
      if (auto v = d.option("blocks")) {
        for (const auto& b : text::split(*v, ',')) level.sampled_blocks.push_back(text::parse_int(b, "blocks"));
      } else {
        for (int b = 0; b < level.vit_blocks; ++b) level.sampled_blocks.push_back(b);
      }
      level.sampler = d.flag("sampler");
      if (spec.stages.empty() || spec.stages.back().stage != *stage) spec.stages.push_back({*stage, {}});
      spec.stages.back().levels.push_back(std::move(level));
    } else if (d.keyword == "late-half") {
      late_tokens.insert(late_tokens.end(), d.args.begin(), d.args.end());
    } else if (d.keyword == "final-resolution") {
      if (d.args.size() != 1) throw ParseError("final-resolution takes one level", d.keyword);
      spec.final_level = text::parse_int(d.args[0], "final-resolution");
      have_final = true;
    } else if (d.keyword == "late-self-attention") {
      for (const auto& a : d.args) {
        const auto role = role_from_string(a);
        if (!role) throw ParseError("unknown role '" + a + "'", a);
        spec.late_self_attention_roles.push_back(*role);
      }
    } else if (d.keyword == "filter-universe") {
      if (d.args.size() != 1) throw ParseError("filter-universe takes one policy name", d.keyword);
      spec.filter_universe = d.args[0];
    } else {
      throw ParseError("unknown architecture directive '" + d.keyword + "' (line " + std::to_string(d.line) + ")",
                       d.keyword);
    }
  }
  if (!have_final) {
    if (const auto* up = spec.find_stage(Stage::Up); up && !up->levels.empty()) {
      spec.final_level = static_cast<int>(up->levels.size()) - 1;
    }
  }
  for (const auto& tok : late_tokens) parse_position_token(tok, spec, spec.late_half);
  validate(spec);
  return spec;
}

}  // namespace

std::vector<ArchitectureSpec> parse_architectures(std::string_view source) {
  std::vector<ArchitectureSpec> out;
  for (const auto& doc : text::parse_documents(source)) {
    std::vector<std::string> aliases;
    auto spec = parse_one(doc, aliases);
    spec.aliases = aliases;
    out.push_back(spec);
    for (const auto& alias : aliases) {
      auto copy = spec;
      copy.name = alias;
      copy.aliases = {spec.name};
      out.push_back(std::move(copy));
    }
  }
  return out;
}

std::string format_architecture(const ArchitectureSpec& spec) {
  std::ostringstream out;
  out << "architecture " << spec.name << '\n';
  for (const auto& a : spec.aliases) out << "alias " << a << '\n';
  out << "latent-factor " << spec.latent_factor << '\n';
  for (const auto& stage : spec.stages) {
    for (const auto& l : stage.levels) {
      out << "level " << to_string(stage.stage) << ' ' << (l.level ? std::to_string(*l.level) : "-")
          << " width=" << l.width << " scale=" << l.scale.to_string() << " repeats=" << l.repeats;
      if (l.vit_blocks > 0) {
        out << " vit=" << l.vit_blocks;
        if (l.vit_repeats != l.repeats) out << " vit-repeats=" << l.vit_repeats;
        out << " blocks=";
        for (std::size_t i = 0; i < l.sampled_blocks.size(); ++i) out << (i ? "," : "") << l.sampled_blocks[i];
      }
      if (l.sampler) out << " sampler";
      out << '\n';
    }
  }
  if (!spec.late_half.empty()) {
    out << "late-half";
    for (const auto& p : spec.late_half) {
      out << " level" << p.level << '-' << (p.repeat ? "repeat" + std::to_string(*p.repeat) : "upsampler");
    }
    out << '\n';
  }
  out << "final-resolution " << spec.final_level << '\n';
  if (!spec.late_self_attention_roles.empty()) {
    out << "late-self-attention";
    for (Role r : spec.late_self_attention_roles) out << ' ' << to_string(r);
    out << '\n';
  }
  out << "filter-universe " << spec.filter_universe << '\n';
  return out.str();
}

const std::vector<ArchitectureSpec>& builtin_architectures() {
  static const std::vector<ArchitectureSpec> specs = parse_architectures(builtin_text::kArchitectures);
  return specs;
}

ArchitectureRegistry::ArchitectureRegistry(std::vector<ArchitectureSpec> specs) {
  for (auto& s : specs) add(std::move(s));
}

ArchitectureRegistry ArchitectureRegistry::with_builtins() { return ArchitectureRegistry(builtin_architectures()); }

void ArchitectureRegistry::add(ArchitectureSpec spec) {
  validate(spec);
  std::erase_if(specs_, [&](const ArchitectureSpec& s) { return s.name == spec.name; });
  specs_.push_back(std::move(spec));
}

const ArchitectureSpec* ArchitectureRegistry::find(std::string_view name) const noexcept {
  for (const auto& s : specs_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const ArchitectureSpec& ArchitectureRegistry::get(std::string_view name) const {
  if (const auto* s = find(name)) return *s;
  throw ConfigError("unknown model '" + std::string(name) + "'");
}

std::vector<std::string> ArchitectureRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& s : specs_) out.push_back(s.name);
  return out;
}

}  // namespace difsel
