#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include "test_util.hpp"

namespace {

struct Run {
  int status;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(DIFSEL_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  std::array<char, 4096> buf{};
  while (const auto n = fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string last_line(const std::string& text) {
  auto end = text.find_last_not_of('\n');
  auto begin = text.rfind('\n', end);
  return text.substr(begin == std::string::npos ? 0 : begin + 1, end - (begin == std::string::npos ? 0 : begin + 1) + 1);
}

}  // namespace

TEST(Cli, FilterSdxlReportsPublishedReduction) {
  const auto r = run("filter --model sdxl");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(last_line(r.out), "63 candidates retained (78% reduction)");
}

TEST(Cli, CatalogSd15ListsSelfKey) {
  const auto r = run("catalog --model sd15");
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("up-level3-repeat0-vit-block0-self-k"), std::string::npos);
}

TEST(Cli, ErrorsExitNonZero) {
  EXPECT_NE(run("catalog --model nope").status, 0);
  EXPECT_NE(run("extract --model sdxl --dataset synthetic:2 --store /tmp/x").status, 0);
  EXPECT_NE(run("frobnicate").status, 0);
}

TEST(Cli, ConfigFileIsOverriddenByFlags) {
  testutil::TempDir dir("cli");
  const auto cfg = dir.path() / "run.cfg";
  std::ofstream(cfg) << "model sdxl\n";
  EXPECT_EQ(last_line(run("--config " + cfg.string() + " filter").out), "63 candidates retained (78% reduction)");
  EXPECT_EQ(last_line(run("--config " + cfg.string() + " filter --model sd15").out),
            "33 candidates retained (55% reduction)");
}

TEST(Cli, ToyPipelineEndToEnd) {
  testutil::TempDir dir("cli");
  const auto store = (dir.path() / "store").string();
  const auto out = (dir.path() / "out").string();
  const auto probe = dir.path() / "probe.cfg";
  std::ofstream(probe) << "probe ensemble=2 hidden=16,16 epochs=2 batch=512 lr=0.003 max-train-pixels=2048\n";
  auto r = run("extract --model toy --dataset synthetic:6 --store " + store + " --prompt 'a disc' --attention-maps");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("extracted 288 records from 6 samples"), std::string::npos) << r.out;
  r = run("compare --model toy --dataset synthetic:6 --store " + store + " --probe-config " + probe.string() +
          " --out " + out);
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(out) / "ranking.json"));
  const auto recipe = dir.path() / "toy.recipe";
  std::ofstream(recipe) << "recipe toy-mix\ntoy up-level0-upsampler-out\ntoy up-level2-repeat0-vit-block0-self-k\n"
                           "toy attention-maps\n";
  r = run("assemble --recipe " + recipe.string() + " --dataset synthetic:6 --store " + store);
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("42 channels at 16x16"), std::string::npos) << r.out;
  r = run("evaluate --task segmentation --recipe " + recipe.string() + " --dataset synthetic:6 --store " + store +
          " --probe-config " + probe.string());
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("mIoU"), std::string::npos);
  r = run("visualize --recipe " + recipe.string() + " --dataset synthetic:6 --store " + store +
          " --sample synthetic-0001 --out " + out);
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(out) / "synthetic-0001__toy-mix.png"));
}

TEST(Cli, CorrespondenceOnSyntheticPairs) {
  testutil::TempDir dir("cli");
  const auto store = (dir.path() / "store").string();
  auto r = run("extract --model toy --dataset synthetic-pairs:4 --store " + store + " --ids up-level2-repeat2-res-out");
  ASSERT_EQ(r.status, 0) << r.out;
  r = run("evaluate --task correspondence --model toy --id up-level2-repeat2-res-out --dataset synthetic-pairs:4 --store " +
          store);
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("PCK@0.1 img"), std::string::npos) << r.out;
}
