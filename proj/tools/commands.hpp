#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace difsel::cli {

struct RunConfig {
  std::string subcommand;
  std::string model;
  std::vector<std::string> datasets;
  std::string store;
  std::string recipe;
  std::string filter_config;
  std::string probe_config;
  std::string policy;
  std::string ids;  // comma-separated activation IDs
  std::string activation;
  std::string sample;
  std::string task;
  std::string prompt;
  std::string out;
  int timestep = 50;
  std::uint64_t seed = 0;
  int workers = 1;
  int splits = 5;
  int train_size = 30;
  bool attention_maps = false;
  bool refine = false;
  bool no_filter = false;
};

int cmd_catalog(const RunConfig& config, std::ostream& out);
int cmd_filter(const RunConfig& config, std::ostream& out);
int cmd_extract(const RunConfig& config, std::ostream& out);
int cmd_compare(const RunConfig& config, std::ostream& out);
int cmd_assemble(const RunConfig& config, std::ostream& out);
int cmd_evaluate(const RunConfig& config, std::ostream& out);
int cmd_visualize(const RunConfig& config, std::ostream& out);

}  // namespace difsel::cli
