#include "difsel/assembly.hpp"

#include <algorithm>
#include <sstream>

#include "difsel/catalog.hpp"
#include "difsel/error.hpp"
#include "difsel/text_format.hpp"

namespace difsel {

namespace {

SelectionRecipe parse_one(const text::Document& doc, const ArchitectureRegistry& registry) {
  SelectionRecipe r;
  bool have_name = false;
  for (const auto& d : doc.directives) {
    const auto where = "line " + std::to_string(d.line);
    if (d.keyword == "recipe") {
      if (d.args.size() != 1) throw ParseError(where + ": recipe takes one name", d.keyword);
      r.name = d.args[0];
      have_name = true;
    } else if (d.keyword == "target") {
      if (d.args.size() != 1) throw ParseError(where + ": target takes 'largest' or WxH", d.keyword);
      if (d.args[0] == "largest") {
        r.target = TargetPolicy::LargestMember;
      } else {
        const auto wh = text::split(text::lower(d.args[0]), 'x');
        if (wh.size() != 2) throw ParseError(where + ": target must be 'largest' or WxH", d.args[0]);
        r.target = TargetPolicy::Explicit;
        r.target_width = text::parse_int(wh[0], "target width");
        r.target_height = text::parse_int(wh[1], "target height");
        if (r.target_width <= 0 || r.target_height <= 0) throw ParseError(where + ": target must be positive", d.args[0]);
      }
    } else {
      if (!registry.find(d.keyword)) throw ConfigError(where + ": unknown model '" + d.keyword + "'");
      const auto pos = d.positional();
      if (pos.size() != 1) throw ParseError(where + ": item is '<model> <activation-id> [options]'", d.keyword);
      RecipeItem item{d.keyword, pos[0], ResizeMode::Bilinear};
      if (item.activation != kAttentionMapsKey) {
        const auto id = parse_activation_id(item.activation);
        if (!is_addressable(registry.get(item.model), id)) {
          throw ConfigError(where + ": " + id.str() + " is not addressable in '" + item.model + "'");
        }
        item.activation = id.str();
      }
      for (const auto& arg : d.args) {
        if (arg == pos[0]) continue;
        if (arg == "resize=nearest") {
          item.resize = ResizeMode::Nearest;
        } else if (arg != "resize=bilinear") {
          throw ParseError(where + ": unknown item option", arg);
        }
      }
      r.items.push_back(std::move(item));
    }
  }
  if (!have_name) throw ParseError("recipe document without a 'recipe <name>' line", "");
  if (r.items.empty()) throw ConfigError("recipe '" + r.name + "' has no items");
  return r;
}

}  // namespace

std::vector<SelectionRecipe> load_recipes(std::string_view text, const ArchitectureRegistry& registry) {
  std::vector<SelectionRecipe> out;
  for (const auto& doc : text::parse_documents(text)) {
    if (!doc.empty()) out.push_back(parse_one(doc, registry));
  }
  return out;
}

SelectionRecipe load_recipe(std::string_view text, const ArchitectureRegistry& registry) {
  auto all = load_recipes(text, registry);
  if (all.size() != 1) throw ParseError("expected exactly one recipe document", "");
  return std::move(all.front());
}

std::string format_recipe(const SelectionRecipe& recipe) {
  std::ostringstream out;
  out << "recipe " << recipe.name << '\n';
  if (recipe.target == TargetPolicy::LargestMember) {
    out << "target largest\n";
  } else {
    out << "target " << recipe.target_width << 'x' << recipe.target_height << '\n';
  }
  for (const auto& item : recipe.items) {
    out << item.model << ' ' << item.activation;
    if (item.resize == ResizeMode::Nearest) out << " resize=nearest";
    out << '\n';
  }
  return out.str();
}

const std::vector<SelectionRecipe>& builtin_recipes() {
  static const std::vector<SelectionRecipe> recipes = [] {
    const auto registry = ArchitectureRegistry::with_builtins();
    return load_recipes(builtin_text::kRecipes, registry);
  }();
  return recipes;
}

const SelectionRecipe& builtin_recipe(std::string_view name) {
  for (const auto& r : builtin_recipes()) {
    if (r.name == name) return r;
  }
  throw ConfigError("unknown recipe '" + std::string(name) + "'");
}

int recipe_channels(const SelectionRecipe& recipe, const ArchitectureRegistry& registry, int attention_channels) {
  int total = 0;
  for (const auto& item : recipe.items) {
    total += item.is_attention_maps()
                 ? attention_channels
                 : describe(registry.get(item.model), parse_activation_id(item.activation)).channels;
  }
  return total;
}

AssembledFeature assemble(const std::vector<FeatureRecord>& records, const SelectionRecipe& recipe,
                          const ArchitectureRegistry* registry) {
  if (recipe.items.empty()) throw ConfigError("recipe '" + recipe.name + "' has no items");
  if (records.size() != recipe.items.size()) {
    throw DataError("recipe '" + recipe.name + "' has " + std::to_string(recipe.items.size()) + " items but " +
                    std::to_string(records.size()) + " records were given");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    const auto& item = recipe.items[i];
    if (rec.sample_key != records.front().sample_key) {
      throw DataError("records mix samples '" + records.front().sample_key + "' and '" + rec.sample_key + "'");
    }
    if (rec.model != item.model || rec.activation != item.activation) {
      throw DataError("record " + std::to_string(i) + " is " + rec.model + "/" + rec.activation + ", recipe expects " +
                      item.model + "/" + item.activation);
    }
    if (rec.data.empty()) throw ShapeError("record " + rec.model + "/" + rec.activation + " is empty");
    if (registry && !item.is_attention_maps()) {
      const auto d = describe(registry->get(item.model), parse_activation_id(item.activation));
      if (d.channels != rec.data.channels) {
        throw ShapeError(rec.model + "/" + rec.activation + " has " + std::to_string(rec.data.channels) +
                         " channels, the catalog says " + std::to_string(d.channels));
      }
    }
  }

  int th = recipe.target_height, tw = recipe.target_width;
  if (recipe.target == TargetPolicy::LargestMember) {
    th = tw = 0;
    for (const auto& rec : records) {
      if (static_cast<long>(rec.data.height) * rec.data.width > static_cast<long>(th) * tw) {
        th = rec.data.height;
        tw = rec.data.width;
      }
    }
  }

  AssembledFeature out;
  out.sample_key = records.front().sample_key;
  std::vector<Tensor3> parts;
  parts.reserve(records.size());
  int channel = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    parts.push_back(resize(records[i].data, th, tw, recipe.items[i].resize));
    out.channel_index.push_back({channel, channel + records[i].data.channels, records[i].model, records[i].activation});
    channel += records[i].data.channels;
  }
  out.data = concat_channels(parts);
  return out;
}

}  // namespace difsel
