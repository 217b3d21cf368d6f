#include "difsel/feature_store.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "difsel/error.hpp"

namespace difsel {

namespace {

constexpr const char* kManifestName = "manifest.jsonl";

std::vector<char> to_le_bytes(std::span<const float> values) {
  std::vector<char> bytes(values.size() * sizeof(float));
  std::memcpy(bytes.data(), values.data(), bytes.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += 4) std::reverse(bytes.begin() + i, bytes.begin() + i + 4);
  }
  return bytes;
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::uint32_t crc(const std::vector<char>& bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data() + off), chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

RecordStats FeatureRecord::stats() const {
  if (data.values.empty()) return {};
  RecordStats s{std::numeric_limits<float>::max(), std::numeric_limits<float>::lowest(), 0};
  double sum = 0;
  for (float v : data.values) {
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
    sum += v;
  }
  s.mean = static_cast<float>(sum / static_cast<double>(data.values.size()));
  return s;
}

std::uint32_t checksum(std::span<const float> values) { return crc(to_le_bytes(values)); }

bool valid_store_key(std::string_view key) noexcept {
  if (key.empty() || key.front() == '.') return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' || c == '_' ||
           c == '-';
  });
}

FeatureStore::FeatureStore(std::filesystem::path root, std::string dataset)
    : root_(std::move(root)), dataset_(std::move(dataset)) {
  if (!valid_store_key(dataset_)) throw DataError("invalid dataset name '" + dataset_ + "'");
}

std::filesystem::path FeatureStore::directory(std::string_view model) const {
  return root_ / std::string(model) / dataset_;
}

std::map<FeatureStore::Key, ManifestEntry> FeatureStore::load_manifest(std::string_view model) const {
  std::map<Key, ManifestEntry> entries;
  std::ifstream in(directory(model) / kManifestName);
  if (!in) return entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (in.eof()) break;  // a line without its newline is an interrupted append
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.sample_key = j.at("sample_key").get<std::string>();
      e.activation = j.at("activation_id").get<std::string>();
      const auto& shape = j.at("shape");
      e.channels = shape.at(0).get<int>();
      e.height = shape.at(1).get<int>();
      e.width = shape.at(2).get<int>();
      if (j.at("dtype").get<std::string>() != "float32-le") throw CorruptionError("unsupported dtype");
      const auto sum = j.at("checksum").get<std::string>();
      e.checksum = static_cast<std::uint32_t>(std::stoul(sum, nullptr, 16));
      e.stats = {j.at("min").get<float>(), j.at("max").get<float>(), j.at("mean").get<float>()};
      entries[{e.sample_key, e.activation}] = e;
    } catch (const CorruptionError&) {
      throw;
    } catch (const std::exception& ex) {
      throw CorruptionError("manifest " + (directory(model) / kManifestName).string() + " line " +
                            std::to_string(line_no) + ": " + ex.what());
    }
  }
  return entries;
}

void FeatureStore::write(const FeatureRecord& record) {
  if (!valid_store_key(record.model)) throw DataError("invalid model name '" + record.model + "'");
  if (!valid_store_key(record.activation)) throw DataError("invalid activation key '" + record.activation + "'");
  if (!valid_store_key(record.sample_key)) throw DataError("invalid sample key '" + record.sample_key + "'");
  if (record.data.size() != static_cast<std::size_t>(record.data.channels) * record.data.height * record.data.width) {
    throw ShapeError("record data size does not match its shape");
  }
  if (!record.data.all_finite()) throw DataError("record " + record.activation + " contains non-finite values");

  const auto dir = directory(record.model);
  const auto sample_dir = dir / record.sample_key;
  std::filesystem::create_directories(sample_dir);

  const auto bytes = to_le_bytes(record.data.values);
  const auto target = sample_dir / (record.activation + ".bin");
  auto tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, target);

  ManifestEntry e{record.sample_key, record.activation, record.data.channels, record.data.height, record.data.width,
                  crc(bytes), record.stats()};
  nlohmann::json j;
  j["sample_key"] = e.sample_key;
  j["activation_id"] = e.activation;
  j["shape"] = {e.channels, e.height, e.width};
  j["dtype"] = "float32-le";
  j["checksum"] = hex32(e.checksum);
  j["min"] = e.stats.min;
  j["max"] = e.stats.max;
  j["mean"] = e.stats.mean;
  const auto line = j.dump() + "\n";

  std::lock_guard lock(mutex_);
  const auto manifest = dir / kManifestName;
  const int fd = ::open(manifest.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error("cannot open " + manifest.string() + ": " + std::strerror(errno));
  const auto written = ::write(fd, line.data(), line.size());
  ::close(fd);
  if (written != static_cast<ssize_t>(line.size())) throw Error("short manifest append to " + manifest.string());

  auto it = cache_.find(record.model);
  if (it != cache_.end()) it->second[{e.sample_key, e.activation}] = e;
}

const ManifestEntry* FeatureStore::lookup(std::string_view model, std::string_view activation,
                                          std::string_view sample_key) const {
  const Key key{std::string(sample_key), std::string(activation)};
  auto it = cache_.find(model);
  if (it == cache_.end() || !it->second.contains(key)) {
    // Another writer may have appended since the last load.
    it = cache_.insert_or_assign(std::string(model), load_manifest(model)).first;
  }
  const auto found = it->second.find(key);
  return found == it->second.end() ? nullptr : &found->second;
}

bool FeatureStore::contains(std::string_view model, std::string_view activation, std::string_view sample_key) const {
  std::lock_guard lock(mutex_);
  return lookup(model, activation, sample_key) != nullptr;
}

FeatureRecord FeatureStore::read(std::string_view model, std::string_view activation,
                                 std::string_view sample_key) const {
  ManifestEntry entry;
  {
    std::lock_guard lock(mutex_);
    const auto* e = lookup(model, activation, sample_key);
    if (!e) {
      throw NotFoundError("no record " + std::string(model) + "/" + dataset_ + "/" + std::string(sample_key) + "/" +
                          std::string(activation));
    }
    entry = *e;
  }
  const auto path = directory(model) / entry.sample_key / (entry.activation + ".bin");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptionError("manifest lists " + path.string() + " but the file is missing");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto expected = static_cast<std::size_t>(entry.channels) * entry.height * entry.width * sizeof(float);
  if (bytes.size() != expected) throw CorruptionError(path.string() + ": size disagrees with manifest shape");
  if (crc(bytes) != entry.checksum) throw CorruptionError(path.string() + ": checksum mismatch");
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += 4) std::reverse(bytes.begin() + i, bytes.begin() + i + 4);
  }
  FeatureRecord record{std::string(model), entry.activation, entry.sample_key,
                       Tensor3(entry.channels, entry.height, entry.width)};
  std::memcpy(record.data.values.data(), bytes.data(), bytes.size());
  return record;
}

std::vector<ManifestEntry> FeatureStore::manifest(std::string_view model) const {
  std::lock_guard lock(mutex_);
  auto entries = load_manifest(model);
  cache_.insert_or_assign(std::string(model), entries);
  std::vector<ManifestEntry> out;
  for (auto& [k, e] : entries) out.push_back(std::move(e));
  return out;
}

}  // namespace difsel
