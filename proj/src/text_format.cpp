#include "difsel/text_format.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "difsel/error.hpp"

namespace difsel::text {

std::optional<std::string> Directive::option(std::string_view key) const {
  for (const auto& arg : args) {
    const auto eq = arg.find('=');
    if (eq != std::string::npos && std::string_view(arg).substr(0, eq) == key) return arg.substr(eq + 1);
  }
  return std::nullopt;
}

bool Directive::flag(std::string_view name) const {
  for (const auto& arg : args) {
    if (arg == name) return true;
  }
  if (auto value = option(name)) return *value == "yes" || *value == "true" || *value == "1";
  return false;
}

std::vector<std::string> Directive::positional() const {
  std::vector<std::string> out;
  for (const auto& arg : args) {
    if (arg.find('=') == std::string::npos) out.push_back(arg);
  }
  return out;
}

const Directive* Document::find(std::string_view keyword) const {
  for (const auto& d : directives) {
    if (d.keyword == keyword) return &d;
  }
  return nullptr;
}

std::vector<const Directive*> Document::find_all(std::string_view keyword) const {
  std::vector<const Directive*> out;
  for (const auto& d : directives) {
    if (d.keyword == keyword) out.push_back(&d);
  }
  return out;
}

std::string trim(std::string_view text) {
  auto begin = text.begin();
  auto end = text.end();
  while (begin != end && std::isspace(static_cast<unsigned char>(*begin))) ++begin;
  while (end != begin && std::isspace(static_cast<unsigned char>(*(end - 1)))) --end;
  return std::string(begin, end);
}

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::vector<std::string> split(std::string_view text, char separator) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(separator, start);
    out.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<Document> parse_documents(std::string_view text) {
  std::vector<Document> docs(1);
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const auto line = trim(raw);
    if (line.empty()) continue;
    if (line == "---") {
      docs.emplace_back();
      continue;
    }
    std::istringstream words(line);
    Directive d;
    d.line = line_no;
    words >> d.keyword;
    for (std::string w; words >> w;) d.args.push_back(w);
    docs.back().directives.push_back(std::move(d));
  }
  std::erase_if(docs, [](const Document& d) { return d.empty(); });
  return docs;
}

Document parse_document(std::string_view text) {
  auto docs = parse_documents(text);
  if (docs.size() > 1) throw ParseError("expected a single document, found " + std::to_string(docs.size()), "---");
  return docs.empty() ? Document{} : std::move(docs.front());
}

int parse_int(std::string_view text, std::string_view what) {
  int value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    throw ParseError("invalid integer for " + std::string(what) + ": '" + std::string(text) + "'", std::string(text));
  }
  return value;
}

double parse_double(std::string_view text, std::string_view what) {
  try {
    std::size_t used = 0;
    const double value = std::stod(std::string(text), &used);
    if (used == text.size()) return value;
  } catch (const std::exception&) {
  }
  throw ParseError("invalid number for " + std::string(what) + ": '" + std::string(text) + "'", std::string(text));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::uint64_t stable_hash(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace difsel::text
