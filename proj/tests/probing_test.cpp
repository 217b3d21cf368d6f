#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "difsel/catalog.hpp"
#include "difsel/dataset.hpp"
#include "difsel/error.hpp"
#include "difsel/extraction.hpp"
#include "difsel/mlp.hpp"
#include "difsel/probing.hpp"
#include "difsel/protocols.hpp"
#include "difsel/toy_backbone.hpp"
#include "test_util.hpp"

using namespace difsel;

namespace {

ProbeConfig light_probe() {
  ProbeConfig c;
  c.ensemble_size = 3;
  c.hidden = {16, 16};
  c.epochs = 6;
  c.batch_size = 256;
  c.learning_rate = 3e-3;
  c.max_train_pixels = 4096;
  return c;
}

// Class = sign of the first channel; two further channels are noise.
PixelSet separable(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0, 1);
  PixelSet s;
  s.features.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) s.features(i, c) = g(rng);
    if (std::abs(s.features(i, 0)) < 0.05f) s.features(i, 0) = 0.05f;
    s.labels.push_back(s.features(i, 0) > 0 ? 1 : 0);
  }
  return s;
}

const std::vector<std::string> kIds = {"up-level0-repeat0-res-out", "up-level1-repeat1-vit-block0-cross-q",
                                       "up-level2-repeat2-vit-block0-self-k", "up-level2-repeat0-res-out"};

// Toy features for two small synthetic datasets, extracted once.
class ComparisonTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir("compare");
    datasets_ = new std::vector<SegmentationDataset>{make_synthetic({SyntheticKind::Simple, 8, 64, 3, 1}),
                                                     make_synthetic({SyntheticKind::Complex, 8, 64, 3, 2})};
    ToyBackbone toy;
    ExtractionConfig config;
    for (const auto& id : kIds) config.capture_set.push_back(parse_activation_id(id));
    for (const auto& ds : *datasets_) {
      FeatureStore store(dir_->path(), ds.name);
      extract_features(ds.samples, toy, config, store);
    }
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete datasets_;
  }

  static CandidatePool pool(const std::vector<std::string>& ids) {
    const auto arch = toy_architecture(ToySpec{});
    CandidatePool p;
    p.architecture = arch.name;
    for (const auto& id : ids) p.entries.push_back(describe(arch, parse_activation_id(id)));
    return p;
  }
  static std::vector<const SegmentationDataset*> both() { return {&(*datasets_)[0], &(*datasets_)[1]}; }

  static testutil::TempDir* dir_;
  static std::vector<SegmentationDataset>* datasets_;
};

testutil::TempDir* ComparisonTest::dir_ = nullptr;
std::vector<SegmentationDataset>* ComparisonTest::datasets_ = nullptr;

}  // namespace

TEST(Probe, LinearlySeparableFeaturesScoreHigh) {
  auto c = light_probe();
  c.num_classes = 2;
  const auto model = train_probe(separable(3000, 1), c);
  EXPECT_GE(evaluate_probe(model, separable(2000, 2)).score, 0.95);
}

TEST(Probe, SingleClassLabelsAreRejected) {
  auto s = separable(100, 3);
  std::fill(s.labels.begin(), s.labels.end(), 1);
  auto c = light_probe();
  c.num_classes = 2;
  EXPECT_THROW(train_probe(s, c), DataError);
}

TEST(Probe, SameSeedSamePredictions) {
  auto c = light_probe();
  c.num_classes = 2;
  const auto test = separable(500, 9);
  const auto a = train_probe(separable(800, 4), c).predict(test.features);
  const auto b = train_probe(separable(800, 4), c).predict(test.features);
  EXPECT_EQ(a, b);
}

TEST(Probe, EnsembleOfOneIsThatClassifier) {
  auto c = light_probe();
  c.num_classes = 2;
  c.ensemble_size = 1;
  const auto train = separable(800, 5);
  const auto model = train_probe(train, c);
  EXPECT_EQ(model.ensemble_size(), 1u);
  // Seed 0: the first member is initialised with seed 0 and shuffled with seed 1.
  const auto st = Standardizer::fit(train.features);
  Mlp mlp(3, c.hidden, 2, 0);
  mlp.train(st.apply(train.features), train.labels, {c.epochs, c.batch_size, c.learning_rate, 1});
  const auto test = separable(400, 6);
  EXPECT_EQ(model.predict(test.features), mlp.predict(st.apply(test.features)));
}

TEST(Probe, DimensionMismatchIsShapeError) {
  auto c = light_probe();
  c.num_classes = 2;
  const auto model = train_probe(separable(300, 7), c);
  PixelSet wrong;
  wrong.features.resize(2, 5);
  wrong.features.setZero();
  wrong.labels = {0, 1};
  EXPECT_THROW(evaluate_probe(model, wrong), ShapeError);
}

TEST(Probe, ConfigParsesAndValidates) {
  const auto c = parse_probe_config("probe ensemble=3 hidden=32,16 epochs=4 batch=512 lr=0.01 seed=7 classes=3\n");
  EXPECT_EQ(c.ensemble_size, 3);
  EXPECT_EQ(c.hidden, (std::vector<int>{32, 16}));
  EXPECT_EQ(c.batch_size, 512);
  EXPECT_DOUBLE_EQ(c.learning_rate, 0.01);
  EXPECT_EQ(parse_probe_config(format_probe_config(c)).hidden, c.hidden);
  EXPECT_THROW(parse_probe_config("probe ensemble=0\n"), ConfigError);
  EXPECT_THROW(parse_probe_config("probe classes=1\n"), ConfigError);
  EXPECT_EQ(ProbeConfig{}.ensemble_size, 10);
}

TEST(Probe, StandardizerZeroVarianceChannel) {
  PixelMatrix x(3, 2);
  x << 1, 5, 2, 5, 3, 5;
  const auto st = Standardizer::fit(x);
  const auto y = st.apply(x);
  EXPECT_FLOAT_EQ(y(0, 1), 0.0f);
  EXPECT_NEAR(y(0, 0) + y(2, 0), 0.0f, 1e-6);
}

TEST(Probe, AppendPixelsUpsamplesAndSkipsIgnored) {
  Tensor3 f(2, 2, 2, 1.0f);
  LabelMap l(4, 4, 0);
  l.at(0, 0) = kIgnoreLabel;
  PixelSet s;
  append_pixels(s, f, l);
  EXPECT_EQ(s.size(), 15u);
  EXPECT_EQ(s.features.cols(), 2);
}

TEST(Probe, ShuffleIsStable) {
  std::vector<std::size_t> a(20), b(20);
  for (std::size_t i = 0; i < 20; ++i) a[i] = b[i] = i;
  stable_shuffle(a, 3);
  stable_shuffle(b, 3);
  EXPECT_EQ(a, b);
  std::vector<std::size_t> c(20);
  for (std::size_t i = 0; i < 20; ++i) c[i] = i;
  EXPECT_NE(a, c);
  std::sort(a.begin(), a.end());
  EXPECT_EQ(a, c);
}

TEST_F(ComparisonTest, CoversEveryIdPerDatasetWithNonIncreasingScores) {
  const auto p = pool(kIds);
  const auto report = run_comparison(p, dir_->path(), both(), light_probe());
  EXPECT_EQ(report.results.size(), kIds.size() * 2);
  ASSERT_EQ(report.per_dataset.size(), 2u);
  for (const auto& ds : report.per_dataset) {
    std::multiset<std::string> seen;
    for (const auto& res : ds.resolutions) {
      for (std::size_t i = 0; i < res.entries.size(); ++i) {
        seen.insert(res.entries[i].activation);
        EXPECT_TRUE(res.entries[i].activation.starts_with(res.resolution));
        if (i > 0) EXPECT_GE(res.entries[i - 1].score, res.entries[i].score);
        EXPECT_GE(res.entries[i].score, 0.0);
        EXPECT_LE(res.entries[i].score, 1.0);
      }
    }
    EXPECT_EQ(seen, std::multiset<std::string>(kIds.begin(), kIds.end()));
  }
  std::size_t consensus = 0;
  for (const auto& [res, entries] : report.consensus) consensus += entries.size();
  EXPECT_EQ(consensus, kIds.size());
}

TEST_F(ComparisonTest, SingleActivationRanksFirst) {
  const auto report = run_comparison(pool({kIds[1]}), dir_->path(), both(), light_probe());
  ASSERT_EQ(report.consensus.size(), 1u);
  ASSERT_EQ(report.consensus[0].second.size(), 1u);
  EXPECT_DOUBLE_EQ(report.consensus[0].second[0].mean_rank, 1.0);
  for (const auto& ds : report.per_dataset) EXPECT_EQ(ds.resolutions[0].entries[0].rank, 1);
}

TEST_F(ComparisonTest, PoolOrderAndWorkersNeverChangeScores) {
  const auto forward = run_comparison(pool(kIds), dir_->path(), both(), light_probe());
  auto reversed_ids = kIds;
  std::reverse(reversed_ids.begin(), reversed_ids.end());
  const auto reversed = run_comparison(pool(reversed_ids), dir_->path(), both(), light_probe(), 2);
  for (const auto& r : forward.results) {
    const auto* other = reversed.find(r.activation, r.dataset);
    ASSERT_NE(other, nullptr);
    EXPECT_EQ(other->score, r.score) << r.activation;
  }
  EXPECT_TRUE(same_ranking(forward, run_comparison(pool(kIds), dir_->path(), both(), light_probe(), 3)));
}

TEST_F(ComparisonTest, MissingRecordsAreListedUpFront) {
  const auto p = pool({kIds[0], "up-level1-repeat2-res-out"});
  try {
    run_comparison(p, dir_->path(), both(), light_probe());
    FAIL() << "expected NotFoundError";
  } catch (const NotFoundError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("up-level1-repeat2-res-out"), std::string::npos) << msg;
    EXPECT_NE(msg.find("synthetic-complex"), std::string::npos) << msg;
  }
}

TEST_F(ComparisonTest, RankingTableHasAColumnPerDataset) {
  const auto report = run_comparison(pool(kIds), dir_->path(), both(), light_probe());
  const auto table = render_ranking_table(report);
  EXPECT_NE(table.find("activation\tsynthetic\tsynthetic-complex\tmean-rank"), std::string::npos) << table;
  EXPECT_EQ(render_ranking_json(report).find("wall"), std::string::npos);
}

TEST_F(ComparisonTest, LabelScarceReportsFiveSplits) {
  const auto& ds = (*datasets_)[0];
  FeatureStore store(dir_->path(), ds.name);
  const FeatureSource source = [&](std::size_t i) { return store.read("toy", kIds[0], ds.samples[i].key).data; };
  LabelScarceConfig lc;
  lc.train_size = 3;
  const auto r = label_scarce_protocol(source, ds, light_probe(), lc);
  EXPECT_EQ(r.scores.size(), 5u);
  EXPECT_GE(r.mean, 0.0);
  EXPECT_LE(r.mean, 1.0);
  EXPECT_GE(r.stddev, 0.0);
}

TEST_F(ComparisonTest, IdenticalSplitsHaveZeroDeviation) {
  const auto& ds = (*datasets_)[0];
  FeatureStore store(dir_->path(), ds.name);
  const FeatureSource source = [&](std::size_t i) { return store.read("toy", kIds[2], ds.samples[i].key).data; };
  LabelScarceConfig lc;
  lc.train_size = static_cast<int>(ds.train.size());
  lc.reseed_probe = false;
  const auto r = label_scarce_protocol(source, ds, light_probe(), lc);
  ASSERT_EQ(r.scores.size(), 5u);
  EXPECT_EQ(r.stddev, 0.0);
  lc.train_size = static_cast<int>(ds.train.size()) + 1;
  EXPECT_THROW(label_scarce_protocol(source, ds, light_probe(), lc), DataError);
}
