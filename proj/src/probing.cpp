#include "difsel/probing.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <deque>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "difsel/error.hpp"
#include "difsel/feature_store.hpp"
#include "difsel/metrics.hpp"
#include "difsel/text_format.hpp"

namespace difsel {

void validate(const ProbeConfig& c) {
  if (c.ensemble_size < 1) throw ConfigError("ensemble size must be at least 1");
  if (c.num_classes != 0 && c.num_classes < 2) throw ConfigError("class count must be at least 2");
  if (c.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (c.batch_size < 2) throw ConfigError("batch size must be at least 2");
  if (!(c.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (c.max_train_pixels < 0) throw ConfigError("max-train-pixels must be non-negative");
  for (int w : c.hidden) {
    if (w < 1) throw ConfigError("hidden widths must be positive");
  }
}

ProbeConfig parse_probe_config(std::string_view text, ProbeConfig c) {
  for (const auto& d : text::parse_document(text).directives) {
    if (d.keyword != "probe") throw ParseError("line " + std::to_string(d.line) + ": expected 'probe'", d.keyword);
    for (const auto& arg : d.args) {
      const auto eq = arg.find('=');
      if (eq == std::string::npos) throw ParseError("probe options are key=value", arg);
      const auto key = arg.substr(0, eq);
      const auto value = arg.substr(eq + 1);
      if (key == "ensemble") {
        c.ensemble_size = text::parse_int(value, key);
      } else if (key == "hidden") {
        c.hidden.clear();
        if (value != "none") {
          for (const auto& w : text::split(value, ',')) c.hidden.push_back(text::parse_int(w, key));
        }
      } else if (key == "epochs") {
        c.epochs = text::parse_int(value, key);
      } else if (key == "batch") {
        c.batch_size = text::parse_int(value, key);
      } else if (key == "lr") {
        c.learning_rate = text::parse_double(value, key);
      } else if (key == "seed") {
        c.seed = static_cast<std::uint64_t>(text::parse_int(value, key));
      } else if (key == "classes") {
        c.num_classes = text::parse_int(value, key);
      } else if (key == "max-train-pixels") {
        c.max_train_pixels = text::parse_int(value, key);
      } else {
        throw ParseError("unknown probe option", key);
      }
    }
  }
  validate(c);
  return c;
}

std::string format_probe_config(const ProbeConfig& c) {
  std::ostringstream out;
  out << "probe ensemble=" << c.ensemble_size << " hidden=";
  if (c.hidden.empty()) out << "none";
  for (std::size_t i = 0; i < c.hidden.size(); ++i) out << (i ? "," : "") << c.hidden[i];
  out << " epochs=" << c.epochs << " batch=" << c.batch_size << " lr=" << c.learning_rate << " seed=" << c.seed
      << " classes=" << c.num_classes << " max-train-pixels=" << c.max_train_pixels << '\n';
  return out.str();
}

void append_pixels(PixelSet& set, const Tensor3& features, const LabelMap& labels) {
  if (features.empty()) throw ShapeError("empty feature map");
  if (set.features.cols() != 0 && set.features.cols() != features.channels) {
    throw ShapeError("feature channel count changed between samples");
  }
  const auto up = resize(features, labels.height, labels.width, ResizeMode::Bilinear);
  std::size_t keep = 0;
  for (int v : labels.labels) keep += v != kIgnoreLabel;
  const auto base = static_cast<Eigen::Index>(set.labels.size());
  set.features.conservativeResize(base + static_cast<Eigen::Index>(keep), features.channels);
  Eigen::Index row = base;
  for (std::size_t p = 0; p < labels.labels.size(); ++p) {
    if (labels.labels[p] == kIgnoreLabel) continue;
    for (int c = 0; c < features.channels; ++c) set.features(row, c) = up.values[c * up.plane() + p];
    set.labels.push_back(labels.labels[p]);
    ++row;
  }
}

Standardizer Standardizer::fit(const PixelMatrix& x) {
  Standardizer s;
  const auto xd = x.cast<double>();
  const Eigen::RowVectorXd mean = xd.colwise().mean();
  const Eigen::RowVectorXd var = (xd.rowwise() - mean).array().square().colwise().mean();
  s.mean = mean.cast<float>();
  s.inv_std.resize(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) s.inv_std[c] = var[c] > 1e-12 ? static_cast<float>(1.0 / std::sqrt(var[c])) : 0.0f;
  return s;
}

PixelMatrix Standardizer::apply(const PixelMatrix& x) const {
  if (x.cols() != mean.size()) throw ShapeError("feature dimension differs from the trained probe");
  PixelMatrix y = x.rowwise() - mean;
  y.array().rowwise() *= inv_std.array();
  return y;
}

ProbeModel::ProbeModel(Standardizer standardizer, std::vector<Mlp> members, int classes, std::uint64_t seed)
    : standardizer_(std::move(standardizer)), members_(std::move(members)), classes_(classes), seed_(seed) {}

std::vector<int> ProbeModel::predict(const PixelMatrix& features) const {
  const auto x = standardizer_.apply(features);
  std::vector<int> votes(static_cast<std::size_t>(x.rows()) * classes_, 0);
  for (const auto& m : members_) {
    const auto p = m.predict(x);
    for (std::size_t i = 0; i < p.size(); ++i) ++votes[i * classes_ + p[i]];
  }
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto* v = &votes[i * classes_];
    out[i] = static_cast<int>(std::max_element(v, v + classes_) - v);
  }
  return out;
}

ProbeModel train_probe(const PixelSet& train, const ProbeConfig& config) {
  validate(config);
  if (config.num_classes < 2) throw ConfigError("probe class count must be set to at least 2");
  if (train.size() == 0 || static_cast<std::size_t>(train.features.rows()) != train.size()) {
    throw ShapeError("training pixels and labels differ in count");
  }
  std::vector<int> seen(config.num_classes, 0);
  for (int v : train.labels) {
    if (v < 0 || v >= config.num_classes) throw DataError("training label " + std::to_string(v) + " out of range");
    seen[v] = 1;
  }
  if (std::accumulate(seen.begin(), seen.end(), 0) < 2) throw DataError("training labels hold a single class");

  const PixelMatrix* x = &train.features;
  const std::vector<int>* y = &train.labels;
  PixelMatrix sub_x;
  std::vector<int> sub_y;
  if (config.max_train_pixels > 0 && static_cast<std::int64_t>(train.size()) > config.max_train_pixels) {
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    stable_shuffle(idx, config.seed ^ 0x5bd1e995ULL);
    idx.resize(static_cast<std::size_t>(config.max_train_pixels));
    std::sort(idx.begin(), idx.end());
    sub_x.resize(static_cast<Eigen::Index>(idx.size()), train.features.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      sub_x.row(static_cast<Eigen::Index>(i)) = train.features.row(static_cast<Eigen::Index>(idx[i]));
      sub_y.push_back(train.labels[idx[i]]);
    }
    x = &sub_x;
    y = &sub_y;
  }

  auto standardizer = Standardizer::fit(*x);
  const PixelMatrix xs = standardizer.apply(*x);
  std::vector<Mlp> members;
  for (int m = 0; m < config.ensemble_size; ++m) {
    const std::uint64_t seed = config.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(m) * 0xbf58476d1ce4e5b9ULL;
    Mlp mlp(static_cast<int>(xs.cols()), config.hidden, config.num_classes, seed);
    mlp.train(xs, *y, {config.epochs, config.batch_size, config.learning_rate, seed + 1});
    members.push_back(std::move(mlp));
  }
  return ProbeModel(std::move(standardizer), std::move(members), config.num_classes, config.seed);
}

ProbeResult evaluate_probe(const ProbeModel& model, const PixelSet& test) {
  if (static_cast<std::size_t>(test.features.rows()) != test.size()) throw ShapeError("test pixels and labels differ");
  if (test.features.cols() != model.channels()) throw ShapeError("test feature dimension differs from the probe");
  const auto pred = model.predict(test.features);
  const auto m = miou(pred, test.labels, model.classes());
  ProbeResult r;
  r.score = m.score;
  r.per_class = m.per_class;
  r.seed = model.seed();
  return r;
}

std::uint64_t probe_job_seed(std::uint64_t base, std::string_view activation, std::string_view dataset) {
  std::string key(activation);
  key += '\n';
  key += dataset;
  return base ^ text::stable_hash(key);
}

RankingReport run_comparison(const CandidatePool& pool, const std::filesystem::path& store_root,
                             const std::vector<const SegmentationDataset*>& datasets, const ProbeConfig& config,
                             int workers) {
  validate(config);
  if (datasets.empty()) throw ConfigError("comparison needs at least one dataset");
  std::vector<std::string> names;
  std::deque<FeatureStore> stores;
  for (const auto* ds : datasets) {
    validate(*ds);
    if (ds->train.empty() || ds->test.empty()) throw DataError("dataset '" + ds->name + "' needs train and test splits");
    names.push_back(ds->name);
    stores.emplace_back(store_root, ds->name);
  }

  std::vector<std::string> gaps;
  std::size_t gap_count = 0;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    for (const auto& e : pool.entries) {
      const auto id = e.id.str();
      std::vector<std::size_t> needed = datasets[d]->train;
      needed.insert(needed.end(), datasets[d]->test.begin(), datasets[d]->test.end());
      for (auto i : needed) {
        const auto& key = datasets[d]->samples[i].key;
        if (!stores[d].contains(pool.architecture, id, key)) {
          if (gaps.size() < 20) gaps.push_back(names[d] + "/" + key + "/" + id);
          ++gap_count;
        }
      }
    }
  }
  if (gap_count > 0) {
    std::string msg = std::to_string(gap_count) + " feature records missing:";
    for (const auto& g : gaps) msg += "\n  " + g;
    if (gap_count > gaps.size()) msg += "\n  ...";
    throw NotFoundError(msg);
  }

  struct Job {
    std::size_t entry;
    std::size_t dataset;
  };
  std::vector<Job> jobs;
  for (std::size_t e = 0; e < pool.entries.size(); ++e) {
    for (std::size_t d = 0; d < datasets.size(); ++d) jobs.push_back({e, d});
  }
  std::vector<ProbeResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  const auto work = [&] {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      try {
        const auto start = std::chrono::steady_clock::now();
        const auto& ds = *datasets[jobs[j].dataset];
        const auto& store = stores[jobs[j].dataset];
        const auto id = pool.entries[jobs[j].entry].id.str();
        auto load = [&](const std::vector<std::size_t>& split) {
          PixelSet set;
          for (auto i : split) append_pixels(set, store.read(pool.architecture, id, ds.samples[i].key).data, ds.labels[i]);
          return set;
        };
        ProbeConfig c = config;
        c.seed = probe_job_seed(config.seed, id, ds.name);
        if (c.num_classes == 0) c.num_classes = ds.num_classes;
        const auto model = train_probe(load(ds.train), c);
        auto r = evaluate_probe(model, load(ds.test));
        r.activation = id;
        r.dataset = ds.name;
        r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        results[j] = std::move(r);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (int i = 0; i < n; ++i) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return build_ranking(pool, std::move(results), names);
}

}  // namespace difsel
