#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "difsel/dataset.hpp"
#include "difsel/error.hpp"
#include "difsel/text_format.hpp"

namespace difsel {

namespace fs = std::filesystem;

void validate(const SegmentationDataset& ds) {
  if (ds.samples.size() != ds.labels.size()) throw DataError("dataset '" + ds.name + "': labels and images differ in count");
  if (ds.num_classes < 2) throw DataError("dataset '" + ds.name + "': needs at least two classes");
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& img = ds.samples[i].image;
    const auto& lab = ds.labels[i];
    if (img.width != lab.width || img.height != lab.height) {
      throw DataError("dataset '" + ds.name + "': label size differs from image " + ds.samples[i].key);
    }
    for (int v : lab.labels) {
      if (v != kIgnoreLabel && (v < 0 || v >= ds.num_classes)) {
        throw DataError("dataset '" + ds.name + "': label " + std::to_string(v) + " out of range in " + ds.samples[i].key);
      }
    }
  }
  std::set<std::size_t> seen;
  for (auto idx : ds.train) {
    if (idx >= ds.samples.size() || !seen.insert(idx).second) throw DataError("dataset '" + ds.name + "': bad train index");
  }
  for (auto idx : ds.test) {
    if (idx >= ds.samples.size() || !seen.insert(idx).second) throw DataError("dataset '" + ds.name + "': bad test index");
  }
}

namespace {

struct SyntheticSource {
  std::string kind;
  int count = 0;
  std::uint64_t seed = 0;
};

std::optional<SyntheticSource> parse_synthetic(const std::string& source) {
  const auto parts = text::split(source, ':');
  if (parts.size() < 2 || parts.size() > 3 || !parts[0].starts_with("synthetic")) return std::nullopt;
  SyntheticSource s{parts[0], text::parse_int(parts[1], "dataset size"), 0};
  if (parts.size() == 3) s.seed = static_cast<std::uint64_t>(text::parse_int(parts[2], "dataset seed"));
  return s;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> out;
  for (const auto& line : text::split(text::read_file(path), '\n')) {
    const auto t = text::trim(line);
    if (!t.empty() && t[0] != '#') out.emplace_back(t);
  }
  return out;
}

// Stem -> file for every regular file in `dir`.
std::map<std::string, fs::path> files_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw NotFoundError("missing directory " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) out.emplace(e.path().stem().string(), e.path());
  }
  return out;
}

}  // namespace

SegmentationDataset load_segmentation_dataset(const std::string& source) {
  if (const auto s = parse_synthetic(source)) {
    SyntheticSpec spec;
    if (s->kind == "synthetic") {
      spec.kind = SyntheticKind::Simple;
    } else if (s->kind == "synthetic-complex") {
      spec.kind = SyntheticKind::Complex;
    } else {
      throw ConfigError("unknown synthetic dataset '" + s->kind + "'");
    }
    spec.count = s->count;
    spec.seed = s->seed;
    spec.test_count = s->count / 3;
    auto ds = make_synthetic(spec);
    if (s->seed != 0) ds.name += "-s" + std::to_string(s->seed);
    return ds;
  }

  const fs::path root(source);
  if (!fs::is_directory(root)) throw NotFoundError("dataset '" + source + "' is neither synthetic nor a directory");
  SegmentationDataset ds;
  ds.name = fs::absolute(root).lexically_normal().filename().string();
  if (ds.name.empty()) ds.name = fs::absolute(root).lexically_normal().parent_path().filename().string();
  const auto images = files_by_stem(root / "images");
  const auto labels = files_by_stem(root / "labels");
  std::map<std::string, std::size_t> index;
  int max_label = 0;
  for (const auto& [stem, path] : images) {
    const auto lab = labels.find(stem);
    if (lab == labels.end()) throw DataError("no label map for image " + stem);
    index[stem] = ds.samples.size();
    ds.samples.push_back({stem, read_image(path)});
    ds.labels.push_back(read_label_map(lab->second));
    for (int v : ds.labels.back().labels) {
      if (v != kIgnoreLabel) max_label = std::max(max_label, v);
    }
  }
  if (ds.samples.empty()) throw DataError("dataset '" + source + "' has no images");
  ds.num_classes = fs::exists(root / "classes.txt") ? text::parse_int(read_lines(root / "classes.txt").at(0), "classes")
                                                    : max_label + 1;
  auto split = [&](const char* file, std::vector<std::size_t>& out) {
    if (!fs::exists(root / file)) return false;
    for (const auto& stem : read_lines(root / file)) {
      const auto it = index.find(stem);
      if (it == index.end()) throw DataError(std::string(file) + " names unknown sample " + stem);
      out.push_back(it->second);
    }
    return true;
  };
  const bool has_train = split("train.txt", ds.train);
  const bool has_test = split("test.txt", ds.test);
  if (!has_train || !has_test) {
    std::set<std::size_t> used(ds.train.begin(), ds.train.end());
    used.insert(ds.test.begin(), ds.test.end());
    auto& rest = has_train ? ds.test : ds.train;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      if (!used.contains(i)) rest.push_back(i);
    }
  }
  validate(ds);
  return ds;
}

CorrespondenceDataset load_correspondence_dataset(const std::string& source) {
  if (const auto s = parse_synthetic(source)) {
    if (s->kind != "synthetic-pairs") throw ConfigError("unknown synthetic pair dataset '" + s->kind + "'");
    auto ds = make_synthetic_pairs(s->count, 64, 8, s->seed);
    if (s->seed != 0) ds.name += "-s" + std::to_string(s->seed);
    return ds;
  }
  const fs::path root(source);
  if (!fs::is_directory(root)) throw NotFoundError("dataset '" + source + "' is neither synthetic nor a directory");
  CorrespondenceDataset ds;
  ds.name = fs::absolute(root).lexically_normal().filename().string();
  ds.pairs = load_spair_pairs(root / "pairs");
  const auto images = files_by_stem(root / "images");
  std::set<std::string> needed;
  for (auto& p : ds.pairs) {
    p.source_image = fs::path(p.source_image).stem().string();
    p.target_image = fs::path(p.target_image).stem().string();
    needed.insert(p.source_image);
    needed.insert(p.target_image);
  }
  for (const auto& stem : needed) {
    const auto it = images.find(stem);
    if (it == images.end()) throw DataError("pair annotation names missing image " + stem);
    ds.samples.push_back({stem, read_image(it->second)});
  }
  return ds;
}

}  // namespace difsel
