#pragma once

// Line-oriented declarative documents shared by architecture, policy, recipe,
// filter and probe configuration files.
//
//   # comment
//   keyword arg arg key=value flag
//   ---            (document separator)

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace difsel::text {

struct Directive {
  int line = 0;
  std::string keyword;
  std::vector<std::string> args;

  // Value of the first `key=value` argument, if any.
  std::optional<std::string> option(std::string_view key) const;
  // True when a bare argument equals `name` (or `name=yes|true|1`).
  bool flag(std::string_view name) const;
  // Positional (non key=value) arguments.
  std::vector<std::string> positional() const;
};

struct Document {
  std::vector<Directive> directives;

  const Directive* find(std::string_view keyword) const;
  std::vector<const Directive*> find_all(std::string_view keyword) const;
  bool empty() const noexcept { return directives.empty(); }
};

std::vector<Document> parse_documents(std::string_view text);
Document parse_document(std::string_view text);

std::vector<std::string> split(std::string_view text, char separator);
std::string trim(std::string_view text);
std::string lower(std::string_view text);
int parse_int(std::string_view text, std::string_view what);
double parse_double(std::string_view text, std::string_view what);
std::string read_file(const std::string& path);

// FNV-1a; stable across platforms and runs.
std::uint64_t stable_hash(std::string_view text) noexcept;

}  // namespace difsel::text
