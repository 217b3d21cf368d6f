#include "difsel/ranking.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "difsel/error.hpp"

namespace difsel {

const ProbeResult* RankingReport::find(const std::string& activation, const std::string& dataset) const {
  for (const auto& r : results) {
    if (r.activation == activation && r.dataset == dataset) return &r;
  }
  return nullptr;
}

RankingReport build_ranking(const CandidatePool& pool, std::vector<ProbeResult> results,
                            const std::vector<std::string>& datasets) {
  RankingReport report;
  report.architecture = pool.architecture;
  report.datasets = datasets;
  if (std::set<std::string>(datasets.begin(), datasets.end()).size() != datasets.size()) {
    throw DataError("duplicate dataset names in comparison");
  }

  std::map<std::pair<std::string, std::string>, ProbeResult> by_key;
  for (auto& r : results) {
    auto key = std::make_pair(r.activation, r.dataset);
    if (!by_key.emplace(key, std::move(r)).second) {
      throw DataError("duplicate result for " + key.first + " on " + key.second);
    }
  }
  std::vector<std::string> resolutions;
  std::map<std::string, std::vector<std::size_t>> members;  // resolution -> forward positions
  for (const auto& e : pool.entries) {
    const auto id = e.id.str();
    const auto res = resolution_key(e.id);
    if (!members.contains(res)) resolutions.push_back(res);
    members[res].push_back(report.activations.size());
    report.activations.push_back(id);
    for (const auto& ds : datasets) {
      const auto it = by_key.find({id, ds});
      if (it == by_key.end()) throw DataError("no probe result for " + id + " on " + ds);
      report.results.push_back(it->second);
      by_key.erase(it);
    }
  }
  if (!by_key.empty()) {
    throw DataError("probe result for " + by_key.begin()->first.first + " which is not in the pool");
  }
  const auto score = [&](std::size_t act, std::size_t ds) { return report.results[act * datasets.size() + ds].score; };

  std::map<std::string, std::vector<double>> rank_sum;  // per activation, per dataset ranks
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    DatasetRanking dr{datasets[d], {}};
    for (const auto& res : resolutions) {
      auto order = members[res];
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score(a, d) > score(b, d); });
      ResolutionRanking rr{res, {}};
      for (std::size_t i = 0; i < order.size(); ++i) {
        const double s = score(order[i], d);
        const int rank = (i > 0 && s == rr.entries.back().score) ? rr.entries.back().rank : static_cast<int>(i) + 1;
        const bool tied = (i > 0 && s == score(order[i - 1], d)) || (i + 1 < order.size() && s == score(order[i + 1], d));
        rr.entries.push_back({report.activations[order[i]], s, rank, tied});
        rank_sum[report.activations[order[i]]].push_back(rank);
      }
      dr.resolutions.push_back(std::move(rr));
    }
    report.per_dataset.push_back(std::move(dr));
  }

  for (const auto& res : resolutions) {
    std::vector<ConsensusEntry> entries;
    std::vector<std::size_t> position;
    for (auto idx : members[res]) {
      const auto& ranks = rank_sum[report.activations[idx]];
      double mr = 0, ms = 0;
      for (double r : ranks) mr += r;
      for (std::size_t d = 0; d < datasets.size(); ++d) ms += score(idx, d);
      const double n = datasets.empty() ? 1.0 : static_cast<double>(datasets.size());
      entries.push_back({report.activations[idx], mr / n, ms / n, false});
      position.push_back(idx);
    }
    std::vector<std::size_t> order(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) {
      if (entries[a].mean_rank != entries[b].mean_rank) return entries[a].mean_rank < entries[b].mean_rank;
      if (entries[a].mean_score != entries[b].mean_score) return entries[a].mean_score > entries[b].mean_score;
      return position[a] < position[b];
    });
    std::vector<ConsensusEntry> sorted;
    for (auto i : order) sorted.push_back(entries[i]);
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
      if (sorted[i].mean_rank == sorted[i + 1].mean_rank && sorted[i].mean_score == sorted[i + 1].mean_score) {
        sorted[i].tied = sorted[i + 1].tied = true;
      }
    }
    report.consensus.emplace_back(res, std::move(sorted));
  }
  return report;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string render_ranking_table(const RankingReport& report) {
  std::ostringstream out;
  out << "# architecture\t" << report.architecture << '\n';
  for (const auto& [res, entries] : report.consensus) {
    out << "# resolution\t" << res << '\n';
    out << "activation";
    for (const auto& ds : report.datasets) out << '\t' << ds;
    out << "\tmean-rank\n";
    for (const auto& e : entries) {
      out << e.activation;
      for (const auto& ds : report.datasets) out << '\t' << fixed(100.0 * report.find(e.activation, ds)->score, 2);
      out << '\t' << fixed(e.mean_rank, 2);
      if (e.tied) out << " (tie)";
      out << '\n';
    }
  }
  return out.str();
}

std::string render_ranking_json(const RankingReport& report) {
  using nlohmann::json;
  json j;
  j["architecture"] = report.architecture;
  j["datasets"] = report.datasets;
  j["activations"] = report.activations;
  json results = json::array();
  for (const auto& r : report.results) {
    json pc = json::array();
    for (const auto& c : r.per_class) pc.push_back(c ? json(*c) : json(nullptr));
    results.push_back({{"activation", r.activation}, {"dataset", r.dataset}, {"miou", r.score}, {"per_class_iou", pc},
                       {"seed", r.seed}});
  }
  j["results"] = results;
  json rankings = json::array();
  for (const auto& d : report.per_dataset) {
    json res = json::object();
    for (const auto& rr : d.resolutions) {
      json list = json::array();
      for (const auto& e : rr.entries) {
        list.push_back({{"activation", e.activation}, {"miou", e.score}, {"rank", e.rank}, {"tied", e.tied}});
      }
      res[rr.resolution] = list;
    }
    rankings.push_back({{"dataset", d.dataset}, {"resolutions", res}});
  }
  j["rankings"] = rankings;
  json consensus = json::object();
  for (const auto& [res, entries] : report.consensus) {
    json list = json::array();
    for (const auto& e : entries) {
      list.push_back({{"activation", e.activation},
                      {"mean_rank", e.mean_rank},
                      {"mean_miou", e.mean_score},
                      {"tied", e.tied}});
    }
    consensus[res] = list;
  }
  j["consensus"] = consensus;
  return j.dump(2) + "\n";
}

bool same_ranking(const RankingReport& a, const RankingReport& b) {
  return render_ranking_json(a) == render_ranking_json(b);
}

}  // namespace difsel
