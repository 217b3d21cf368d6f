#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "difsel/catalog.hpp"

namespace difsel {

struct ProbeResult {
  std::string activation;
  std::string dataset;
  double score = 0;  // mIoU in [0, 1]
  std::vector<std::optional<double>> per_class;
  std::uint64_t seed = 0;
  double wall_seconds = 0;
};

struct RankedEntry {
  std::string activation;
  double score = 0;
  int rank = 0;  // competition ranking: equal scores share a rank
  bool tied = false;
};

struct ResolutionRanking {
  std::string resolution;  // e.g. "up-level1"
  std::vector<RankedEntry> entries;
};

struct DatasetRanking {
  std::string dataset;
  std::vector<ResolutionRanking> resolutions;
};

struct ConsensusEntry {
  std::string activation;
  double mean_rank = 0;
  double mean_score = 0;
  bool tied = false;  // same mean rank and mean score as a neighbour; forward order decided
};

struct RankingReport {
  std::string architecture;
  std::vector<std::string> datasets;
  std::vector<std::string> activations;  // forward order
  std::vector<ProbeResult> results;      // activation-major, dataset-minor
  std::vector<DatasetRanking> per_dataset;
  std::vector<std::pair<std::string, std::vector<ConsensusEntry>>> consensus;  // per resolution

  const ProbeResult* find(const std::string& activation, const std::string& dataset) const;
};

// Requires exactly one result per (pool entry, dataset).
RankingReport build_ranking(const CandidatePool& pool, std::vector<ProbeResult> results,
                            const std::vector<std::string>& datasets);

// Tab-separated, one section per resolution in consensus order:
// activation, one mIoU column (percent) per dataset, mean rank.
std::string render_ranking_table(const RankingReport& report);
// Full report as JSON, without wall times.
std::string render_ranking_json(const RankingReport& report);

// Equality of everything except timing.
bool same_ranking(const RankingReport& a, const RankingReport& b);

}  // namespace difsel
