#pragma once

// On-disk feature store. One directory per (model, dataset):
//
//   <root>/<model>/<dataset>/manifest.jsonl
//   <root>/<model>/<dataset>/<sample_key>/<activation>.bin
//
// Each .bin holds little-endian float32 values in row-major C x H x W order.
// Each manifest line is a JSON object with sample_key, activation_id, shape,
// dtype, checksum (CRC-32 of the .bin bytes) and min/max/mean. Lines are
// appended with a single write; the last line for a key wins.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "difsel/tensor.hpp"

namespace difsel {

inline constexpr std::string_view kAttentionMapsKey = "attention-maps";

struct RecordStats {
  float min = 0;
  float max = 0;
  float mean = 0;
  friend bool operator==(const RecordStats&, const RecordStats&) = default;
};

struct FeatureRecord {
  std::string model;
  std::string activation;  // canonical activation ID, "attention-maps" or an assembled recipe name
  std::string sample_key;
  Tensor3 data;

  RecordStats stats() const;
  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

struct ManifestEntry {
  std::string sample_key;
  std::string activation;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::uint32_t checksum = 0;
  RecordStats stats;
};

std::uint32_t checksum(std::span<const float> values);
// Store keys become path components: [A-Za-z0-9._-]+, not starting with '.'.
bool valid_store_key(std::string_view key) noexcept;

class FeatureStore {
 public:
  FeatureStore(std::filesystem::path root, std::string dataset);

  const std::filesystem::path& root() const noexcept { return root_; }
  const std::string& dataset() const noexcept { return dataset_; }
  std::filesystem::path directory(std::string_view model) const;

  // Throws DataError for non-finite values or invalid keys.
  void write(const FeatureRecord& record);
  // Throws NotFoundError / CorruptionError.
  FeatureRecord read(std::string_view model, std::string_view activation, std::string_view sample_key) const;
  bool contains(std::string_view model, std::string_view activation, std::string_view sample_key) const;
  std::vector<ManifestEntry> manifest(std::string_view model) const;

 private:
  using Key = std::pair<std::string, std::string>;  // (sample_key, activation)
  std::map<Key, ManifestEntry> load_manifest(std::string_view model) const;
  const ManifestEntry* lookup(std::string_view model, std::string_view activation, std::string_view sample_key) const;

  std::filesystem::path root_;
  std::string dataset_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::map<Key, ManifestEntry>, std::less<>> cache_;
};

}  // namespace difsel
