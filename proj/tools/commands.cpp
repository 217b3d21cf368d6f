#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <nlohmann/json.hpp>
#include <thread>

#include "difsel/assembly.hpp"
#include "difsel/catalog.hpp"
#include "difsel/correspondence.hpp"
#include "difsel/dataset.hpp"
#include "difsel/error.hpp"
#include "difsel/extraction.hpp"
#include "difsel/feature_store.hpp"
#include "difsel/filtering.hpp"
#include "difsel/metrics.hpp"
#include "difsel/probing.hpp"
#include "difsel/protocols.hpp"
#include "difsel/text_format.hpp"
#include "difsel/toy_backbone.hpp"
#include "difsel/visualize.hpp"

namespace difsel::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const ArchitectureRegistry& registry() {
  static const ArchitectureRegistry r = [] {
    auto reg = ArchitectureRegistry::with_builtins();
    reg.add(toy_architecture(ToySpec{}));
    return reg;
  }();
  return r;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

const ArchitectureSpec& model_arch(const RunConfig& c) {
  require(!c.model.empty(), "--model is required");
  return registry().get(c.model);
}

EnumerationPolicy policy_for(const ArchitectureSpec& arch, const RunConfig& c) {
  if (c.policy.empty()) return builtin_policy(arch.filter_universe);
  if (fs::is_regular_file(c.policy)) {
    const auto all = parse_policies(text::read_file(c.policy));
    require(!all.empty(), "policy file " + c.policy + " holds no policy");
    return all.front();
  }
  return builtin_policy(c.policy);
}

FilterConfig filter_config_for(const RunConfig& c) {
  if (c.filter_config.empty()) return FilterConfig::all_rules();
  return parse_filter_config(text::read_file(c.filter_config));
}

ProbeConfig probe_config_for(const RunConfig& c) {
  ProbeConfig p;
  if (!c.probe_config.empty()) p = parse_probe_config(text::read_file(c.probe_config));
  p.seed = p.seed ^ c.seed;
  return p;
}

// The filtered pool, or the unfiltered universe with --no-filter.
CandidatePool candidate_pool(const ArchitectureSpec& arch, const RunConfig& c) {
  auto pool = enumerate_candidates(arch, policy_for(arch, c));
  if (c.no_filter) return pool;
  return apply_qualitative_filters(pool, arch, filter_config_for(c)).pool;
}

void write_output(const RunConfig& c, const std::string& name, const std::string& content) {
  if (c.out.empty()) return;
  fs::create_directories(c.out);
  const auto path = fs::path(c.out) / name;
  std::ofstream f(path, std::ios::binary);
  f << content;
  if (!f) throw Error("cannot write " + path.string());
}

std::unique_ptr<BackboneAdapter> adapter_for(const std::string& model) {
  if (model == "toy") return build_toy_adapter(ToySpec{});
  registry().get(model);
  throw ConfigError("no backbone adapter for '" + model + "' in this build; only 'toy' can run inference");
}

struct SampleSet {
  std::string name;
  std::vector<Sample> samples;
};

bool is_pair_source(const std::string& source) {
  return source.starts_with("synthetic-pairs") || fs::is_directory(fs::path(source) / "pairs");
}

SampleSet load_samples(const std::string& source) {
  if (is_pair_source(source)) {
    auto ds = load_correspondence_dataset(source);
    return {ds.name, std::move(ds.samples)};
  }
  auto ds = load_segmentation_dataset(source);
  return {ds.name, std::move(ds.samples)};
}

const std::string& single_dataset(const RunConfig& c) {
  require(c.datasets.size() == 1, "exactly one --dataset is required");
  return c.datasets.front();
}

std::string store_root(const RunConfig& c) {
  require(!c.store.empty(), "--store is required");
  return c.store;
}

SelectionRecipe recipe_for(const RunConfig& c) {
  require(!c.recipe.empty(), "--recipe is required");
  if (fs::is_regular_file(c.recipe)) return load_recipe(text::read_file(c.recipe), registry());
  return builtin_recipe(c.recipe);
}

// (model, activation) of the features a task reads: an assembled recipe or one activation.
std::pair<std::string, std::string> feature_key(const RunConfig& c) {
  if (!c.recipe.empty()) return {std::string(kAssembledModel), recipe_for(c).name};
  require(!c.model.empty() && !c.activation.empty(), "give --recipe, or --model with --id");
  if (c.activation == kAttentionMapsKey) return {c.model, c.activation};
  return {c.model, parse_activation_id(c.activation).str()};
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

int cmd_catalog(const RunConfig& c, std::ostream& out) {
  const auto& arch = model_arch(c);
  const auto pool = enumerate_candidates(arch, policy_for(arch, c));
  const auto listing = render_pool(pool);
  out << listing;
  out << pool.size() << " candidates (" << pool.provenance << ")\n";
  write_output(c, "catalog.tsv", listing);
  return 0;
}

int cmd_filter(const RunConfig& c, std::ostream& out) {
  const auto& arch = model_arch(c);
  const auto pool = enumerate_candidates(arch, policy_for(arch, c));
  const auto result = apply_qualitative_filters(pool, arch, filter_config_for(c));
  const auto rendered = filter_report_render(result.report);
  const auto listing = render_pool(result.pool);
  out << listing << rendered.text;
  write_output(c, "filtered.tsv", listing);
  write_output(c, "filter_report.json", rendered.json);
  return 0;
}

int cmd_extract(const RunConfig& c, std::ostream& out) {
  const auto& arch = model_arch(c);
  const auto samples = load_samples(single_dataset(c));
  FeatureStore store(store_root(c), samples.name);

  ExtractionConfig config;
  config.timestep = c.timestep;
  config.prompt = c.prompt;
  config.noise_seed = c.seed;
  config.capture_attention_maps = c.attention_maps;
  if (!c.ids.empty()) {
    for (const auto& s : text::split(c.ids, ',')) {
      if (text::trim(s) == kAttentionMapsKey) {
        config.capture_attention_maps = true;
      } else {
        config.capture_set.push_back(parse_activation_id(text::trim(s)));
      }
    }
  } else if (!c.recipe.empty()) {
    for (const auto& item : recipe_for(c).items) {
      if (item.model != arch.name) continue;
      if (item.is_attention_maps()) {
        config.capture_attention_maps = true;
      } else {
        config.capture_set.push_back(parse_activation_id(item.activation));
      }
    }
    require(!config.capture_set.empty() || config.capture_attention_maps,
            "recipe '" + c.recipe + "' has no items for model '" + arch.name + "'");
  } else {
    config.capture_set = candidate_pool(arch, c).ids();
  }
  validate(config);
  for (const auto& id : config.capture_set) {
    if (!is_addressable(arch, id)) throw ConfigError("capture set: " + id.str() + " is not addressable in '" + arch.name + "'");
  }

  // One adapter per worker over interleaved shards.
  const int workers = std::max(1, std::min<int>(c.workers, static_cast<int>(samples.samples.size())));
  std::vector<std::vector<Sample>> shards(static_cast<std::size_t>(workers));
  for (std::size_t i = 0; i < samples.samples.size(); ++i) shards[i % workers].push_back(samples.samples[i]);
  std::vector<std::unique_ptr<BackboneAdapter>> adapters;
  for (int w = 0; w < workers; ++w) adapters.push_back(adapter_for(arch.name));
  std::vector<ExtractionSummary> summaries(static_cast<std::size_t>(workers));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  const auto start = std::chrono::steady_clock::now();
  auto run = [&](int w) {
    try {
      summaries[w] = extract_features(shards[w], *adapters[w], config, store);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::size_t records = 0, count = 0;
  std::vector<std::string> flagged;
  for (const auto& s : summaries) {
    records += s.records_written;
    count += s.samples;
    flagged.insert(flagged.end(), s.flagged_samples.begin(), s.flagged_samples.end());
  }
  std::sort(flagged.begin(), flagged.end());
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << "extracted " << records << " records from " << count << " samples into "
      << store.directory(arch.name).string() << '\n';
  for (const auto& f : flagged) out << "flagged " << f << ": non-finite activation rejected\n";
  std::cerr << "extraction took " << seconds << " s\n";

  json j{{"model", arch.name},       {"dataset", samples.name},       {"samples", count},
         {"records_written", records}, {"flagged_samples", flagged},   {"timestep", config.timestep},
         {"prompt", config.prompt},  {"noise_seed", config.noise_seed}};
  json ids = json::array();
  for (const auto& id : config.capture_set) ids.push_back(id.str());
  j["capture_set"] = ids;
  j["attention_maps"] = config.capture_attention_maps;
  write_output(c, "extraction.json", j.dump(2) + "\n");
  return flagged.empty() ? 0 : 3;
}

int cmd_compare(const RunConfig& c, std::ostream& out) {
  const auto& arch = model_arch(c);
  require(!c.datasets.empty(), "at least one --dataset is required");
  std::vector<SegmentationDataset> loaded;
  for (const auto& d : c.datasets) loaded.push_back(load_segmentation_dataset(d));
  std::vector<const SegmentationDataset*> datasets;
  for (const auto& d : loaded) datasets.push_back(&d);
  const auto pool = candidate_pool(arch, c);
  const auto report = run_comparison(pool, store_root(c), datasets, probe_config_for(c), c.workers);
  const auto table = render_ranking_table(report);
  out << table;
  write_output(c, "ranking.tsv", table);
  write_output(c, "ranking.json", render_ranking_json(report));
  return 0;
}

int cmd_assemble(const RunConfig& c, std::ostream& out) {
  const auto recipe = recipe_for(c);
  const auto samples = load_samples(single_dataset(c));
  FeatureStore store(store_root(c), samples.name);
  json index = json::array();
  Shape3 shape;
  for (const auto& s : samples.samples) {
    std::vector<FeatureRecord> records;
    for (const auto& item : recipe.items) records.push_back(store.read(item.model, item.activation, s.key));
    const auto assembled = assemble(records, recipe, &registry());
    store.write({std::string(kAssembledModel), recipe.name, s.key, assembled.data});
    if (index.empty()) {
      shape = {assembled.data.channels, assembled.data.height, assembled.data.width};
      for (const auto& r : assembled.channel_index) {
        index.push_back({{"begin", r.begin}, {"end", r.end}, {"model", r.model}, {"activation", r.activation}});
      }
    }
  }
  out << "assembled '" << recipe.name << "' for " << samples.samples.size() << " samples: " << shape.channels
      << " channels at " << shape.width << "x" << shape.height << '\n';
  for (const auto& r : index) {
    out << "  [" << r["begin"].get<int>() << ", " << r["end"].get<int>() << ") " << r["model"].get<std::string>() << ' '
        << r["activation"].get<std::string>() << '\n';
  }
  write_output(c, "assembly.json",
               json{{"recipe", recipe.name},
                    {"dataset", samples.name},
                    {"samples", samples.samples.size()},
                    {"shape", {shape.channels, shape.height, shape.width}},
                    {"channel_index", index}}
                       .dump(2) +
                   "\n");
  return 0;
}

namespace {

int evaluate_segmentation(const RunConfig& c, std::ostream& out) {
  const auto ds = load_segmentation_dataset(single_dataset(c));
  FeatureStore store(store_root(c), ds.name);
  const auto [model, activation] = feature_key(c);
  auto probe = probe_config_for(c);
  if (probe.num_classes == 0) probe.num_classes = ds.num_classes;
  require(!ds.train.empty() && !ds.test.empty(), "dataset needs train and test splits");
  PixelSet train, test;
  for (auto i : ds.train) append_pixels(train, store.read(model, activation, ds.samples[i].key).data, ds.labels[i]);
  for (auto i : ds.test) append_pixels(test, store.read(model, activation, ds.samples[i].key).data, ds.labels[i]);
  auto result = evaluate_probe(train_probe(train, probe), test);
  out << "segmentation " << model << '/' << activation << " on " << ds.name << ": mIoU " << percent(result.score) << '\n';
  json per_class = json::array();
  for (std::size_t k = 0; k < result.per_class.size(); ++k) {
    out << "  class " << k << ": " << (result.per_class[k] ? percent(*result.per_class[k]) : std::string("absent")) << '\n';
    per_class.push_back(result.per_class[k] ? json(*result.per_class[k]) : json(nullptr));
  }
  write_output(c, "segmentation.json",
               json{{"model", model}, {"activation", activation}, {"dataset", ds.name}, {"miou", result.score},
                    {"per_class_iou", per_class}}
                       .dump(2) +
                   "\n");
  return 0;
}

int evaluate_label_scarce(const RunConfig& c, std::ostream& out) {
  const auto ds = load_segmentation_dataset(single_dataset(c));
  FeatureStore store(store_root(c), ds.name);
  const auto [model, activation] = feature_key(c);
  const FeatureSource source = [&, model = model, activation = activation](std::size_t i) {
    return store.read(model, activation, ds.samples[i].key).data;
  };
  LabelScarceConfig lc;
  lc.splits = c.splits;
  lc.train_size = c.train_size;
  lc.seed = c.seed;
  const auto r = label_scarce_protocol(source, ds, probe_config_for(c), lc);
  out << "label-scarce " << model << '/' << activation << " on " << ds.name << ": mIoU " << percent(r.mean)
      << " +- " << percent(r.stddev) << " over " << r.scores.size() << " splits\n";
  for (std::size_t s = 0; s < r.scores.size(); ++s) out << "  split " << s << ": " << percent(r.scores[s]) << '\n';
  write_output(c, "label_scarce.json",
               json{{"model", model}, {"activation", activation}, {"dataset", ds.name}, {"scores", r.scores},
                    {"mean", r.mean}, {"std", r.stddev}, {"train_size", lc.train_size}}
                       .dump(2) +
                   "\n");
  return 0;
}

int evaluate_correspondence(const RunConfig& c, std::ostream& out) {
  const auto ds = load_correspondence_dataset(single_dataset(c));
  FeatureStore store(store_root(c), ds.name);
  const auto [model, activation] = feature_key(c);
  std::map<std::string, Tensor3> features;
  for (const auto& s : ds.samples) features[s.key] = store.read(model, activation, s.key).data;

  std::vector<PairAnnotation> eval = ds.pairs;
  std::optional<Refiner> refiner;
  if (c.refine) {
    require(ds.pairs.size() >= 2, "refinement needs at least two pairs");
    const auto half = ds.pairs.size() / 2;
    std::vector<CorrespondenceExample> train;
    for (std::size_t i = 0; i < half; ++i) {
      train.push_back({&features.at(ds.pairs[i].source_image), &features.at(ds.pairs[i].target_image), ds.pairs[i].pair});
    }
    refiner = Refiner::identity(features.begin()->second.channels);
    RefinerConfig rc;
    rc.seed = c.seed;
    refiner->train(train, rc);
    eval.assign(ds.pairs.begin() + static_cast<std::ptrdiff_t>(half), ds.pairs.end());
  }
  std::vector<std::vector<Keypoint>> predicted;
  std::vector<KeypointPair> pairs;
  for (const auto& p : eval) {
    auto src = features.at(p.source_image);
    auto trg = features.at(p.target_image);
    if (refiner) {
      src = refiner->apply(src);
      trg = refiner->apply(trg);
    }
    predicted.push_back(nn_correspond(src, trg, p.pair.src_kps, p.pair.src_width, p.pair.src_height, p.pair.trg_width,
                                      p.pair.trg_height));
    pairs.push_back(p.pair);
  }
  const auto r = pck_both(predicted, pairs);
  out << "correspondence " << model << '/' << activation << " on " << ds.name << " (" << pairs.size() << " pairs"
      << (refiner ? ", refined" : "") << ")\n";
  out << "  PCK@0.1 img:  " << percent(r.img.pooled()) << " (per-image mean " << percent(r.img.per_image_mean()) << ")\n";
  out << "  PCK@0.1 bbox: " << percent(r.bbox.pooled()) << " (per-image mean " << percent(r.bbox.per_image_mean())
      << ")\n";
  write_output(c, "correspondence.json",
               json{{"model", model},
                    {"activation", activation},
                    {"dataset", ds.name},
                    {"pairs", pairs.size()},
                    {"refined", refiner.has_value()},
                    {"pck_img", r.img.pooled()},
                    {"pck_img_per_image", r.img.per_image_mean()},
                    {"pck_bbox", r.bbox.pooled()},
                    {"pck_bbox_per_image", r.bbox.per_image_mean()},
                    {"correct_img", r.img.correct},
                    {"correct_bbox", r.bbox.correct},
                    {"keypoints", r.img.total}}
                       .dump(2) +
                   "\n");
  return 0;
}

}  // namespace

int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  if (c.task == "segmentation") return evaluate_segmentation(c, out);
  if (c.task == "label-scarce") return evaluate_label_scarce(c, out);
  if (c.task == "correspondence") return evaluate_correspondence(c, out);
  throw ConfigError("--task must be correspondence, segmentation or label-scarce");
}

int cmd_visualize(const RunConfig& c, std::ostream& out) {
  require(!c.out.empty(), "--out is required");
  require(!c.sample.empty(), "--sample is required");
  const auto samples = load_samples(single_dataset(c));
  FeatureStore store(store_root(c), samples.name);
  const auto [model, activation] = feature_key(c);
  auto image = pca_rgb(store.read(model, activation, c.sample).data);
  // Nearest-neighbour enlargement so small maps stay legible.
  const int factor = std::max(1, 128 / std::max(image.width, image.height));
  if (factor > 1) {
    Image big(image.width * factor, image.height * factor, 3);
    for (int y = 0; y < big.height; ++y) {
      for (int x = 0; x < big.width; ++x) {
        for (int ch = 0; ch < 3; ++ch) big.at(y, x, ch) = image.at(y / factor, x / factor, ch);
      }
    }
    image = std::move(big);
  }
  fs::create_directories(c.out);
  const auto path = fs::path(c.out) / (c.sample + "__" + activation + ".png");
  write_png(path, image);
  out << "wrote " << path.string() << '\n';
  return 0;
}

}  // namespace difsel::cli
