#include "difsel/activation_id.hpp"

#include <array>
#include <stdexcept>
#include <utility>
#include <vector>

#include "difsel/error.hpp"
#include "difsel/text_format.hpp"

namespace difsel {

namespace {

constexpr std::array<std::pair<Role, std::string_view>, 12> kRoleNames{{
    {Role::Out, "out"},
    {Role::Inc, "inc"},
    {Role::SelfQ, "self-q"},
    {Role::SelfK, "self-k"},
    {Role::SelfV, "self-v"},
    {Role::SelfOut, "self-out"},
    {Role::CrossQ, "cross-q"},
    {Role::CrossK, "cross-k"},
    {Role::CrossV, "cross-v"},
    {Role::CrossOut, "cross-out"},
    {Role::FfOut, "ff-out"},
    {Role::VitOut, "vit-out"},
}};

}  // namespace

std::string_view to_string(Stage stage) noexcept {
  switch (stage) {
    case Stage::Down: return "down";
    case Stage::Mid: return "mid";
    case Stage::Up: return "up";
  }
  return "?";
}

std::string_view to_string(Site site) noexcept {
  switch (site) {
    case Site::Res: return "res";
    case Site::Vit: return "vit";
    case Site::Upsampler: return "upsampler";
    case Site::Downsampler: return "downsampler";
  }
  return "?";
}

std::string_view to_string(Role role) noexcept {
  for (const auto& [r, name] : kRoleNames) {
    if (r == role) return name;
  }
  return "?";
}

std::optional<Stage> stage_from_string(std::string_view text) noexcept {
  if (text == "down") return Stage::Down;
  if (text == "mid") return Stage::Mid;
  if (text == "up") return Stage::Up;
  return std::nullopt;
}

std::optional<Role> role_from_string(std::string_view text) noexcept {
  for (const auto& [r, name] : kRoleNames) {
    if (name == text) return r;
  }
  return std::nullopt;
}

bool is_self_attention(Role role) noexcept {
  return role == Role::SelfQ || role == Role::SelfK || role == Role::SelfV || role == Role::SelfOut;
}

bool is_block_role(Role role) noexcept { return role != Role::Inc && role != Role::VitOut; }

bool is_dense(Role role) noexcept { return role != Role::CrossK && role != Role::CrossV; }

bool is_increment(Role role) noexcept { return role == Role::Inc || role == Role::FfOut || role == Role::SelfV; }

ActivationId::ActivationId(Stage stage, std::optional<int> level, Site site, std::optional<int> repeat,
                           std::optional<int> block, Role role)
    : stage_(stage), level_(level), site_(site), repeat_(repeat), block_(block), role_(role) {
  auto fail = [](const char* what) { throw std::invalid_argument(std::string("invalid activation id: ") + what); };
  if (stage == Stage::Mid && level) fail("mid stage carries no level");
  if (stage != Stage::Mid && !level) fail("down/up stages need a level");
  if (level && *level < 0) fail("negative level");
  if (repeat && *repeat < 0) fail("negative repeat");
  if (block && *block < 0) fail("negative block");
  switch (site) {
    case Site::Res:
      if (!repeat || block || (role != Role::Out && role != Role::Inc)) fail("ResModule takes a repeat and role out|inc");
      break;
    case Site::Vit:
      if (!repeat) fail("ViT needs a repeat");
      if (block.has_value() != is_block_role(role) || role == Role::Inc) fail("ViT block roles need a block index");
      break;
    case Site::Upsampler:
    case Site::Downsampler:
      if (repeat || block || role != Role::Out) fail("samplers carry only role out");
      if ((site == Site::Upsampler) != (stage == Stage::Up) || stage == Stage::Mid) fail("sampler/stage mismatch");
      break;
  }
}

ActivationId ActivationId::res(Stage stage, std::optional<int> level, int repeat, Role role) {
  return {stage, level, Site::Res, repeat, std::nullopt, role};
}

ActivationId ActivationId::vit_block(Stage stage, std::optional<int> level, int repeat, int block, Role role) {
  return {stage, level, Site::Vit, repeat, block, role};
}

ActivationId ActivationId::vit_out(Stage stage, std::optional<int> level, int repeat) {
  return {stage, level, Site::Vit, repeat, std::nullopt, Role::VitOut};
}

ActivationId ActivationId::sampler(Stage stage, int level) {
  return {stage, level, stage == Stage::Down ? Site::Downsampler : Site::Upsampler, std::nullopt, std::nullopt,
          Role::Out};
}

std::string ActivationId::str() const { return format_activation_id(*this); }

std::string format_activation_id(const ActivationId& id) {
  std::string out(to_string(id.stage()));
  if (id.level()) out += "-level" + std::to_string(*id.level());
  if (id.is_sampler()) {
    out += '-';
    out += to_string(id.site());
    out += "-out";
    return out;
  }
  out += "-repeat" + std::to_string(*id.repeat());
  out += '-';
  out += to_string(id.site());
  if (id.block()) out += "-block" + std::to_string(*id.block());
  out += '-';
  out += id.role() == Role::VitOut ? std::string_view("out") : to_string(id.role());
  return out;
}

namespace {

class TokenCursor {
 public:
  explicit TokenCursor(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {}

  bool done() const noexcept { return pos_ >= tokens_.size(); }
  const std::string& peek() const { return tokens_[pos_]; }
  std::string take() { return tokens_[pos_++]; }

  // Joins the remaining tokens back with '-' (roles such as "cross-q" span two tokens).
  std::string rest() {
    std::string out;
    for (; pos_ < tokens_.size(); ++pos_) {
      if (!out.empty()) out += '-';
      out += tokens_[pos_];
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& token, const std::string& why) const {
    throw ParseError("activation id: " + why + " at token '" + token + "'", token);
  }
  [[noreturn]] void fail_missing(const std::string& what) const {
    throw ParseError("activation id: missing " + what, "");
  }

  // "<prefix><digits>" -> number, or nullopt when the prefix does not match.
  std::optional<int> indexed(std::string_view prefix) {
    if (done()) return std::nullopt;
    const auto& tok = peek();
    if (tok.size() <= prefix.size() || tok.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
    const auto digits = std::string_view(tok).substr(prefix.size());
    if (digits.size() > 9) fail(tok, "index too large");
    for (char c : digits) {
      if (c < '0' || c > '9') fail(tok, "expected digits");
    }
    ++pos_;
    return std::stoi(std::string(digits));
  }

 private:
  std::vector<std::string> tokens_;
  std::size_t pos_ = 0;
};

}  // namespace

ActivationId parse_activation_id(std::string_view text) {
  if (text.empty()) throw ParseError("activation id: empty text", "");
  for (char c : text) {
    if (static_cast<unsigned char>(c) > 0x7f || c <= ' ') {
      throw ParseError("activation id: non-printable or non-ASCII character", std::string(1, c));
    }
  }
  auto parts = text::split(text::lower(text), '-');
  for (const auto& p : parts) {
    if (p.empty()) throw ParseError("activation id: empty token", "");
  }
  TokenCursor cur(std::move(parts));

  const auto stage_tok = cur.take();
  const auto stage = stage_from_string(stage_tok);
  if (!stage) cur.fail(stage_tok, "invalid stage");

  std::optional<int> level;
  if (*stage == Stage::Mid) {
    if (!cur.done() && cur.peek().starts_with("level")) cur.fail(cur.peek(), "mid stage carries no level");
  } else {
    level = cur.indexed("level");
    if (!level) {
      if (cur.done()) cur.fail_missing("level");
      cur.fail(cur.peek(), "expected levelN");
    }
  }

  if (cur.done()) cur.fail_missing("repeat or sampler");
  const auto where = cur.peek();
  if (where == "upsampler" || where == "downsampler") {
    cur.take();
    const bool up = where == "upsampler";
    if (up != (*stage == Stage::Up)) cur.fail(where, "sampler does not belong to stage");
    if (cur.done()) cur.fail_missing("role");
    const auto role_tok = cur.peek();
    if (cur.rest() != "out") cur.fail(role_tok, "samplers only have role 'out'");
    return ActivationId::sampler(*stage, *level);
  }

  const auto repeat = cur.indexed("repeat");
  if (!repeat) cur.fail(where, "expected repeatN, upsampler or downsampler");
  if (cur.done()) cur.fail_missing("site");
  const auto site_tok = cur.take();

  if (site_tok == "res") {
    if (cur.done()) cur.fail_missing("role");
    const auto role_tok = cur.peek();
    const auto role_text = cur.rest();
    if (role_text == "out") return ActivationId::res(*stage, level, *repeat, Role::Out);
    if (role_text == "inc") return ActivationId::res(*stage, level, *repeat, Role::Inc);
    cur.fail(role_tok, "ResModule role must be out or inc");
  }
  if (site_tok != "vit") cur.fail(site_tok, "expected site res or vit");

  if (cur.done()) cur.fail_missing("role");
  if (const auto block = cur.indexed("block")) {
    if (cur.done()) cur.fail_missing("role");
    const auto role_tok = cur.peek();
    const auto role = role_from_string(cur.rest());
    if (!role || !is_block_role(*role) || *role == Role::Inc) cur.fail(role_tok, "invalid ViT block role");
    return ActivationId::vit_block(*stage, level, *repeat, *block, *role);
  }
  const auto role_tok = cur.peek();
  if (cur.rest() != "out") cur.fail(role_tok, "ViT module role must be blockN-<role> or out");
  return ActivationId::vit_out(*stage, level, *repeat);
}

std::optional<ActivationId> try_parse_activation_id(std::string_view text) noexcept {
  try {
    return parse_activation_id(text);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace difsel
