#include <gtest/gtest.h>

#include <fstream>
#include <limits>
#include <thread>

#include "difsel/error.hpp"
#include "difsel/feature_store.hpp"
#include "test_util.hpp"

using namespace difsel;

namespace {

Tensor3 ramp(int c, int h, int w, float offset) {
  Tensor3 t(c, h, w);
  for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = offset + 0.25f * static_cast<float>(i);
  return t;
}

}  // namespace

TEST(FeatureStore, RoundTripIsBitExact) {
  testutil::TempDir dir("store");
  FeatureStore store(dir.path(), "set");
  const FeatureRecord r{"toy", "up-level0-repeat0-res-out", "img-0", ramp(3, 4, 5, -1.5f)};
  store.write(r);
  EXPECT_EQ(store.read("toy", r.activation, "img-0"), r);
  // A fresh handle reads the manifest from disk.
  FeatureStore again(dir.path(), "set");
  EXPECT_EQ(again.read("toy", r.activation, "img-0"), r);
  const auto m = again.manifest("toy");
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].channels, 3);
  EXPECT_EQ(m[0].height, 4);
  EXPECT_EQ(m[0].width, 5);
  EXPECT_EQ(m[0].stats, r.stats());
}

TEST(FeatureStore, MissingRecordIsNotFound) {
  testutil::TempDir dir("store");
  FeatureStore store(dir.path(), "set");
  EXPECT_THROW(store.read("toy", "up-level0-repeat0-res-out", "nope"), NotFoundError);
  store.write({"toy", "up-level0-repeat0-res-out", "a", ramp(1, 1, 1, 0)});
  EXPECT_FALSE(store.contains("toy", "up-level0-repeat0-res-out", "b"));
  EXPECT_THROW(store.read("toy", "up-level0-repeat0-res-out", "b"), NotFoundError);
}

TEST(FeatureStore, TamperedPayloadIsCorruption) {
  testutil::TempDir dir("store");
  FeatureStore store(dir.path(), "set");
  store.write({"toy", "up-level0-repeat0-res-out", "a", ramp(2, 2, 2, 0)});
  const auto file = store.directory("toy") / "a" / "up-level0-repeat0-res-out.bin";
  ASSERT_TRUE(std::filesystem::exists(file));
  {
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('\x7f');
  }
  FeatureStore fresh(dir.path(), "set");
  EXPECT_THROW(fresh.read("toy", "up-level0-repeat0-res-out", "a"), CorruptionError);
  std::filesystem::resize_file(file, 4);
  EXPECT_THROW(fresh.read("toy", "up-level0-repeat0-res-out", "a"), CorruptionError);
  std::filesystem::remove(file);
  EXPECT_THROW(fresh.read("toy", "up-level0-repeat0-res-out", "a"), CorruptionError);
}

TEST(FeatureStore, RejectsNonFiniteAndBadKeys) {
  testutil::TempDir dir("store");
  FeatureStore store(dir.path(), "set");
  auto t = ramp(1, 2, 2, 0);
  t.values[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(store.write({"toy", "up-level0-repeat0-res-out", "a", t}), DataError);
  EXPECT_THROW(store.write({"toy", "../escape", "a", ramp(1, 1, 1, 0)}), DataError);
  EXPECT_FALSE(valid_store_key(".hidden"));
  EXPECT_TRUE(valid_store_key("synthetic-0001"));
}

TEST(FeatureStore, OverwriteKeepsOneManifestEntry) {
  testutil::TempDir dir("store");
  FeatureStore store(dir.path(), "set");
  store.write({"toy", "x", "a", ramp(1, 1, 2, 0)});
  store.write({"toy", "x", "a", ramp(1, 1, 2, 5)});
  EXPECT_EQ(store.manifest("toy").size(), 1u);
  EXPECT_EQ(FeatureStore(dir.path(), "set").read("toy", "x", "a").data, ramp(1, 1, 2, 5));
}

TEST(FeatureStore, ManifestCountsEveryRecord) {
  testutil::TempDir dir("store");
  FeatureStore store(dir.path(), "set");
  std::vector<std::thread> threads;
  for (int w = 0; w < 3; ++w) {
    threads.emplace_back([&, w] {
      for (int a = w; a < 63; a += 3) {
        for (int s = 0; s < 30; ++s) {
          store.write({"toy", "act-" + std::to_string(a), "s" + std::to_string(s), ramp(1, 1, 1, float(a + s))});
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(FeatureStore(dir.path(), "set").manifest("toy").size(), 1890u);
}
