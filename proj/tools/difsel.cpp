#include <CLI11.hpp>
#include <cstring>
#include <iostream>
#include <string>

#include "commands.hpp"
#include "difsel/error.hpp"
#include "difsel/text_format.hpp"

using difsel::cli::RunConfig;

namespace {

// A --config file holds one "<flag-name> <value>" line per setting, e.g.
//   model toy
//   dataset synthetic:30
// Explicit flags on the command line win over it.
void apply_config_file(const std::string& path, RunConfig& c) {
  namespace text = difsel::text;
  const auto doc = text::parse_document(text::read_file(path));
  for (const auto& d : doc.directives) {
    const auto one = [&]() -> const std::string& {
      if (d.args.size() != 1) throw difsel::ConfigError(path + ": '" + d.keyword + "' takes one value");
      return d.args.front();
    };
    const auto& k = d.keyword;
    if (k == "model") c.model = one();
    else if (k == "dataset") c.datasets.insert(c.datasets.end(), d.args.begin(), d.args.end());
    else if (k == "store") c.store = one();
    else if (k == "recipe") c.recipe = one();
    else if (k == "filter-config") c.filter_config = one();
    else if (k == "probe-config") c.probe_config = one();
    else if (k == "policy") c.policy = one();
    else if (k == "ids") c.ids = one();
    else if (k == "id") c.activation = one();
    else if (k == "sample") c.sample = one();
    else if (k == "task") c.task = one();
    else if (k == "prompt") {
      c.prompt.clear();
      for (const auto& a : d.args) c.prompt += (c.prompt.empty() ? "" : " ") + a;
    }
    else if (k == "out") c.out = one();
    else if (k == "timestep") c.timestep = text::parse_int(one(), "timestep");
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(std::stoull(one()));
    else if (k == "workers") c.workers = text::parse_int(one(), "workers");
    else if (k == "splits") c.splits = text::parse_int(one(), "splits");
    else if (k == "train-size") c.train_size = text::parse_int(one(), "train-size");
    else if (k == "attention-maps") c.attention_maps = true;
    else if (k == "refine") c.refine = true;
    else if (k == "no-filter") c.no_filter = true;
    else throw difsel::ConfigError(path + ":" + std::to_string(d.line) + ": unknown setting '" + k + "'");
  }
}

std::string prescan_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) return argv[i + 1];
    if (std::strncmp(argv[i], "--config=", 9) == 0) return argv[i] + 9;
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig c;
  try {
    if (const auto path = prescan_config(argc, argv); !path.empty()) apply_config_file(path, c);
  } catch (const difsel::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  CLI::App app{"difsel: find and combine diffusion backbone activations for dense prediction"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "settings file; command-line flags take precedence");

  auto common = [&](CLI::App* sub) {
    sub->add_option("--model", c.model, "architecture name (sd15, sdxl, toy, ...)");
    sub->add_option("--dataset", c.datasets, "dataset source: a directory or synthetic:<n>[:seed]");
    sub->add_option("--store", c.store, "feature store root directory");
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--seed", c.seed, "base random seed");
    sub->add_option("--policy", c.policy, "enumeration policy name or file");
    sub->add_option("--filter-config", c.filter_config, "filter rule configuration file");
    sub->add_flag("--no-filter", c.no_filter, "use the whole enumerated universe");
  };

  auto* catalog = app.add_subcommand("catalog", "list the candidate activations of an architecture");
  common(catalog);
  auto* filter = app.add_subcommand("filter", "apply the qualitative filters and report the reduction");
  common(filter);

  auto* extract = app.add_subcommand("extract", "run the backbone and store activations");
  common(extract);
  extract->add_option("--ids", c.ids, "comma-separated activation IDs to capture");
  extract->add_option("--recipe", c.recipe, "capture the items of this recipe for --model");
  extract->add_option("--timestep", c.timestep, "diffusion timestep");
  extract->add_option("--prompt", c.prompt, "text prompt");
  extract->add_flag("--attention-maps", c.attention_maps, "also capture averaged cross-attention maps");
  extract->add_option("--workers", c.workers, "parallel adapters");

  auto* compare = app.add_subcommand("compare", "train probes on every candidate and rank them");
  common(compare);
  compare->add_option("--probe-config", c.probe_config, "probe configuration file");
  compare->add_option("--workers", c.workers, "parallel probe jobs");

  auto* assemble = app.add_subcommand("assemble", "concatenate the activations of a recipe");
  common(assemble);
  assemble->add_option("--recipe", c.recipe, "builtin recipe name or recipe file")->required();

  auto* evaluate = app.add_subcommand("evaluate", "score stored features on a downstream task");
  common(evaluate);
  evaluate->add_option("--task", c.task, "correspondence, segmentation or label-scarce")->required();
  evaluate->add_option("--recipe", c.recipe, "evaluate an assembled recipe");
  evaluate->add_option("--id", c.activation, "evaluate one activation of --model");
  evaluate->add_option("--probe-config", c.probe_config, "probe configuration file");
  evaluate->add_option("--splits", c.splits, "label-scarce splits");
  evaluate->add_option("--train-size", c.train_size, "label-scarce training images per split");
  evaluate->add_flag("--refine", c.refine, "train a linear refiner on half of the pairs");

  auto* visualize = app.add_subcommand("visualize", "write a PCA false-colour image of a feature map");
  common(visualize);
  visualize->add_option("--recipe", c.recipe, "show an assembled recipe");
  visualize->add_option("--id", c.activation, "show one activation of --model");
  visualize->add_option("--sample", c.sample, "sample key")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    auto* sub = app.get_subcommands().front();
    c.subcommand = sub->get_name();
    if (sub == catalog) return difsel::cli::cmd_catalog(c, std::cout);
    if (sub == filter) return difsel::cli::cmd_filter(c, std::cout);
    if (sub == extract) return difsel::cli::cmd_extract(c, std::cout);
    if (sub == compare) return difsel::cli::cmd_compare(c, std::cout);
    if (sub == assemble) return difsel::cli::cmd_assemble(c, std::cout);
    if (sub == evaluate) return difsel::cli::cmd_evaluate(c, std::cout);
    return difsel::cli::cmd_visualize(c, std::cout);
  } catch (const difsel::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
