#include "difsel/toy_backbone.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <optional>
#include <set>

#include "difsel/catalog.hpp"
#include "difsel/error.hpp"
#include "difsel/text_format.hpp"

namespace difsel {

namespace {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Row = Eigen::RowVectorXf;

// Spatial features as (pixels x channels), pixels in row-major order.
struct Feat {
  int h = 0;
  int w = 0;
  Mat m;
};

Tensor3 to_tensor(const Feat& f) {
  Tensor3 t(static_cast<int>(f.m.cols()), f.h, f.w);
  for (int c = 0; c < t.channels; ++c) {
    for (int p = 0; p < f.h * f.w; ++p) t.values[static_cast<std::size_t>(c) * t.plane() + p] = f.m(p, c);
  }
  return t;
}

Feat from_tensor(const Tensor3& t) {
  Feat f{t.height, t.width, Mat(t.height * t.width, t.channels)};
  for (int c = 0; c < t.channels; ++c) {
    for (int p = 0; p < t.height * t.width; ++p) f.m(p, c) = t.values[static_cast<std::size_t>(c) * t.plane() + p];
  }
  return f;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Weights {
 public:
  explicit Weights(std::uint64_t seed) : seed_(seed) {}

  Mat normal(int rows, int cols, float scale) {
    const auto n = gaussian_noise(1, rows, cols, mix(seed_ ^ mix(++counter_)));
    Mat m(rows, cols);
    for (int i = 0; i < rows * cols; ++i) m.data()[i] = n.values[i] * scale;
    return m;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

float silu(float x) { return x / (1.0f + std::exp(-x)); }
float gelu(float x) { return 0.5f * x * (1.0f + std::tanh(0.7978845608f * (x + 0.044715f * x * x * x))); }

Mat silu(const Mat& x) { return x.unaryExpr([](float v) { return silu(v); }); }

struct Linear {
  Mat w;
  Row b;
  Linear() = default;
  Linear(Weights& rng, int in, int out, float gain = 1.0f)
      : w(rng.normal(in, out, gain / std::sqrt(static_cast<float>(in)))), b(Row::Zero(out)) {}
  Mat operator()(const Mat& x) const {
    Mat y = x * w;
    y.rowwise() += b;
    return y;
  }
};

struct Conv {
  int cin = 0;
  int cout = 0;
  int k = 3;
  int stride = 1;
  Mat w;
  Row b;
  Conv() = default;
  Conv(Weights& rng, int in, int out, int kernel, int s = 1, float gain = 1.0f)
      : cin(in), cout(out), k(kernel), stride(s),
        w(rng.normal(kernel * kernel * in, out, gain / std::sqrt(static_cast<float>(kernel * kernel * in)))),
        b(Row::Zero(out)) {}

  Feat operator()(const Feat& x) const {
    const int pad = k / 2;
    const int oh = (x.h + 2 * pad - k) / stride + 1;
    const int ow = (x.w + 2 * pad - k) / stride + 1;
    Mat cols = Mat::Zero(oh * ow, k * k * cin);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= x.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= x.w) continue;
            cols.row(oy * ow + ox).segment((ky * k + kx) * cin, cin) = x.m.row(iy * x.w + ix);
          }
        }
      }
    }
    Feat y{oh, ow, cols * w};
    y.m.rowwise() += b;
    return y;
  }
};

Mat group_norm(const Mat& x, int groups) {
  Mat y(x.rows(), x.cols());
  const int per = static_cast<int>(x.cols()) / groups;
  for (int g = 0; g < groups; ++g) {
    const auto block = x.middleCols(g * per, per);
    const double mean = block.cast<double>().mean();
    const double var = (block.cast<double>().array() - mean).square().mean();
    const float inv = static_cast<float>(1.0 / std::sqrt(var + 1e-5));
    y.middleCols(g * per, per) = ((block.array() - static_cast<float>(mean)) * inv).matrix();
  }
  return y;
}

int groups_for(int channels) { return channels % 4 == 0 ? 4 : 1; }

Mat layer_norm(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const float mean = x.row(i).mean();
    const float var = (x.row(i).array() - mean).square().mean();
    y.row(i) = (x.row(i).array() - mean) / std::sqrt(var + 1e-5f);
  }
  return y;
}

void softmax_rows(Mat& x) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const float mx = x.row(i).maxCoeff();
    x.row(i) = (x.row(i).array() - mx).exp();
    x.row(i) /= x.row(i).sum();
  }
}

Feat concat(const Feat& a, const Feat& b) {
  Feat f{a.h, a.w, Mat(a.m.rows(), a.m.cols() + b.m.cols())};
  f.m << a.m, b.m;
  return f;
}

Feat upsample_nearest(const Feat& x) {
  Feat y{x.h * 2, x.w * 2, Mat(x.h * x.w * 4, x.m.cols())};
  for (int yy = 0; yy < y.h; ++yy) {
    for (int xx = 0; xx < y.w; ++xx) y.m.row(yy * y.w + xx) = x.m.row((yy / 2) * x.w + xx / 2);
  }
  return y;
}

// What the caller wants out of one forward pass.
struct Recorder {
  const CaptureRequest& request;
  std::set<ActivationId> wanted;
  ForwardCapture& out;

  void put(const ActivationId& id, const Feat& f) {
    if (wanted.contains(id)) out.activations.emplace(id, to_tensor(f));
  }
  void site(std::string name, const Feat& residual, const Feat& increment, const Feat& output) {
    if (request.residual_sites) {
      out.residuals.push_back({std::move(name), to_tensor(residual), to_tensor(increment), to_tensor(output)});
    }
  }
};

struct Where {
  Stage stage;
  std::optional<int> level;
  int repeat;

  std::string prefix() const {
    const auto s = ActivationId::res(stage, level, repeat).str();
    return s.substr(0, s.size() - std::string_view("-res-out").size());
  }
};

struct ResModule {
  int groups_in = 1;
  int groups_out = 1;
  Conv c1;
  Linear temb;
  Conv c2;
  std::optional<Conv> shortcut;

  ResModule(Weights& rng, int in, int out, int time_dim)
      : groups_in(groups_for(in)), groups_out(groups_for(out)), c1(rng, in, out, 3), temb(rng, time_dim, out),
        c2(rng, out, out, 3, 1, 0.5f) {
    if (in != out) shortcut = Conv(rng, in, out, 1);
  }

  Feat operator()(const Feat& x, const Row& t, Recorder& rec, const Where& at) const {
    Feat h = c1(Feat{x.h, x.w, silu(group_norm(x.m, groups_in))});
    const Row shift = temb(t);
    h.m.rowwise() += shift;
    Feat inc = c2(Feat{h.h, h.w, silu(group_norm(h.m, groups_out))});
    Feat residual = shortcut ? (*shortcut)(x) : x;
    Feat out{x.h, x.w, residual.m + inc.m};
    rec.put(ActivationId::res(at.stage, at.level, at.repeat, Role::Inc), inc);
    rec.put(ActivationId::res(at.stage, at.level, at.repeat, Role::Out), out);
    rec.site(at.prefix() + "-res", residual, inc, out);
    return out;
  }
};

struct BasicBlock {
  Linear q, k, v, o;
  Linear cq, ck, cv, co;
  Linear ff1, ff2;

  BasicBlock(Weights& rng, int c, int token_dim)
      : q(rng, c, c), k(rng, c, c), v(rng, c, c), o(rng, c, c, 0.5f), cq(rng, c, c), ck(rng, token_dim, c),
        cv(rng, token_dim, c), co(rng, c, c, 0.5f), ff1(rng, c, 4 * c), ff2(rng, 4 * c, c, 0.5f) {}
};

struct VitModule {
  int groups = 1;
  Linear proj_in;
  std::vector<BasicBlock> blocks;
  Linear proj_out;

  VitModule(Weights& rng, int c, int n_blocks, int token_dim)
      : groups(groups_for(c)), proj_in(rng, c, c), proj_out(rng, c, c, 0.5f) {
    for (int b = 0; b < n_blocks; ++b) blocks.emplace_back(rng, c, token_dim);
  }

  Feat operator()(const Feat& x, const Mat& context, Recorder& rec, const Where& at) const {
    const auto id = [&](int b, Role r) { return ActivationId::vit_block(at.stage, at.level, at.repeat, b, r); };
    const auto site_name = [&](int b, const char* what) {
      return at.prefix() + "-vit-block" + std::to_string(b) + "-" + what;
    };
    const auto spatial = [&](Mat m) { return Feat{x.h, x.w, std::move(m)}; };
    const float scale = 1.0f / std::sqrt(static_cast<float>(x.m.cols()));

    Mat h = proj_in(group_norm(x.m, groups));
    for (int b = 0; b < static_cast<int>(blocks.size()); ++b) {
      const auto& blk = blocks[b];

      Mat a = layer_norm(h);
      Mat q = blk.q(a), k = blk.k(a), v = blk.v(a);
      Mat attn = (q * k.transpose()) * scale;
      softmax_rows(attn);
      Mat self_out = blk.o(attn * v);
      Mat after_self = h + self_out;
      rec.put(id(b, Role::SelfQ), spatial(q));
      rec.put(id(b, Role::SelfK), spatial(k));
      rec.put(id(b, Role::SelfV), spatial(v));
      rec.put(id(b, Role::SelfOut), spatial(self_out));
      rec.site(site_name(b, "self"), spatial(h), spatial(self_out), spatial(after_self));
      h = std::move(after_self);

      a = layer_norm(h);
      Mat cq = blk.cq(a), ck = blk.ck(context), cv = blk.cv(context);
      Mat logits = (cq * ck.transpose()) * scale;
      Mat probs = logits;
      softmax_rows(probs);
      Mat cross_out = blk.co(probs * cv);
      Mat after_cross = h + cross_out;
      rec.put(id(b, Role::CrossQ), spatial(cq));
      rec.put(id(b, Role::CrossK), Feat{1, static_cast<int>(ck.rows()), ck});
      rec.put(id(b, Role::CrossV), Feat{1, static_cast<int>(cv.rows()), cv});
      rec.put(id(b, Role::CrossOut), spatial(cross_out));
      rec.site(site_name(b, "cross"), spatial(h), spatial(cross_out), spatial(after_cross));
      if (rec.request.attention_scores && at.stage == Stage::Up) {
        AttentionLayerScores s{id(b, Role::CrossQ), x.h, x.w, static_cast<int>(context.rows()), {}, {}};
        s.probabilities.assign(probs.data(), probs.data() + probs.size());
        s.logits.assign(logits.data(), logits.data() + logits.size());
        rec.out.attention.push_back(std::move(s));
      }
      h = std::move(after_cross);

      a = layer_norm(h);
      Mat ff = blk.ff2(blk.ff1(a).unaryExpr([](float u) { return gelu(u); }));
      Mat after_ff = h + ff;
      rec.put(id(b, Role::FfOut), spatial(ff));
      rec.site(site_name(b, "ff"), spatial(h), spatial(ff), spatial(after_ff));
      h = std::move(after_ff);
      rec.put(id(b, Role::Out), spatial(h));
    }
    Feat inc = spatial(proj_out(h));
    Feat out = spatial(x.m + inc.m);
    rec.put(ActivationId::vit_out(at.stage, at.level, at.repeat), out);
    rec.site(at.prefix() + "-vit", x, inc, out);
    return out;
  }
};

struct LevelModules {
  std::vector<ResModule> res;
  std::vector<std::optional<VitModule>> vit;
  std::optional<Conv> sampler;
};

Row sinusoidal(int t, int dim) {
  Row e(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[i] = static_cast<float>(std::sin(t * freq));
    e[half + i] = static_cast<float>(std::cos(t * freq));
  }
  return e;
}

}  // namespace

void validate(const ToySpec& spec) {
  auto fail = [&](const std::string& why) { throw ConfigError("toy spec '" + spec.name + "': " + why); };
  const auto levels = spec.widths.size();
  if (levels == 0) fail("needs at least one resolution");
  if (spec.down_vit_blocks.size() != levels || spec.up_vit_blocks.size() != levels) {
    fail("ViT block counts must list one entry per resolution");
  }
  for (int w : spec.widths) {
    if (w <= 0) fail("widths must be positive");
  }
  for (int b : spec.down_vit_blocks) {
    if (b < 0) fail("negative ViT block count");
  }
  for (int b : spec.up_vit_blocks) {
    if (b < 0) fail("negative ViT block count");
  }
  if (spec.mid_vit_blocks < 0) fail("negative ViT block count");
  if (spec.down_repeats < 1 || spec.up_repeats < 1) fail("repeats must be at least 1");
  if (spec.latent_factor < 1 || spec.latent_channels < 1) fail("latent factor and channels must be positive");
  if (spec.context_tokens < 2) fail("context needs room for BOS and EOS");
  if (spec.vocabulary < 4 || spec.token_dim < 1) fail("vocabulary needs special and word tokens");
  if (spec.time_dim < 2 || spec.time_dim % 2 != 0) fail("time embedding size must be even");
}

ArchitectureSpec toy_architecture(const ToySpec& spec) {
  validate(spec);
  const int levels = static_cast<int>(spec.widths.size());
  ArchitectureSpec arch;
  arch.name = spec.name;
  arch.latent_factor = spec.latent_factor;
  auto layout = [](std::optional<int> level, int width, int depth, int repeats, int blocks, int vit_repeats,
                   bool sampler) {
    LevelLayout l;
    l.level = level;
    l.width = width;
    l.scale = Rational(1, std::int64_t{1} << depth);
    l.repeats = repeats;
    l.vit_blocks = blocks;
    l.vit_repeats = blocks > 0 ? vit_repeats : 0;
    for (int b = 0; b < blocks; ++b) l.sampled_blocks.push_back(b);
    l.sampler = sampler;
    return l;
  };
  StageLayout down{Stage::Down, {}};
  for (int i = 0; i < levels; ++i) {
    down.levels.push_back(layout(i, spec.widths[i], i, spec.down_repeats, spec.down_vit_blocks[i], spec.down_repeats,
                                 i + 1 < levels));
  }
  StageLayout mid{Stage::Mid, {layout(std::nullopt, spec.widths.back(), levels - 1, 2, spec.mid_vit_blocks, 1, false)}};
  StageLayout up{Stage::Up, {}};
  for (int j = 0; j < levels; ++j) {
    const int depth = levels - 1 - j;
    up.levels.push_back(
        layout(j, spec.widths[depth], depth, spec.up_repeats, spec.up_vit_blocks[j], spec.up_repeats, j + 1 < levels));
  }
  arch.stages = {down, mid, up};

  arch.final_level = levels - 1;
  for (int r = 0; r < spec.up_repeats; ++r) arch.late_half.insert({levels - 1, r});
  if (levels >= 2) {
    arch.late_half.insert({levels - 2, spec.up_repeats - 1});
    arch.late_half.insert({levels - 2, std::nullopt});
  }
  arch.late_self_attention_roles = {Role::SelfQ, Role::SelfK};
  arch.filter_universe = "reference-universe";
  validate(arch);
  return arch;
}

PromptTokens tokenize_prompt(const std::string& prompt, int context_tokens, int vocabulary) {
  constexpr int kBos = 0, kEos = 1, kPad = 2, kFirstWord = 3;
  std::vector<std::string> words;
  std::string cur;
  for (char ch : prompt) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));

  PromptTokens t;
  t.ids.push_back(kBos);
  t.retained.push_back(false);
  for (const auto& w : words) {
    if (static_cast<int>(t.ids.size()) + 1 >= context_tokens) break;
    t.ids.push_back(kFirstWord + static_cast<int>(text::stable_hash(w) % static_cast<std::uint64_t>(vocabulary - kFirstWord)));
    t.retained.push_back(true);
  }
  t.ids.push_back(kEos);
  t.retained.push_back(false);
  while (static_cast<int>(t.ids.size()) < context_tokens) {
    t.ids.push_back(kPad);
    t.retained.push_back(false);
  }
  return t;
}

struct ToyBackbone::Net {
  Mat encoder;  // RGB -> latent channels
  Mat embedding;
  Linear time1, time2;
  Conv conv_in;
  std::vector<LevelModules> down;
  std::vector<ResModule> mid_res;
  std::vector<std::optional<VitModule>> mid_vit;
  std::vector<LevelModules> up;

  Net(const ToySpec& s, const ArchitectureSpec& arch) {
    Weights rng(s.weight_seed);
    const int levels = static_cast<int>(s.widths.size());
    const int td = s.time_dim;
    encoder = rng.normal(3, s.latent_channels, 1.0f / std::sqrt(3.0f));
    embedding = rng.normal(s.vocabulary, s.token_dim, 1.0f);
    time1 = Linear(rng, td, td);
    time2 = Linear(rng, td, td);
    conv_in = Conv(rng, s.latent_channels, s.widths[0], 3);

    const auto build = [&](const LevelLayout& l, int in, Stage stage) {
      LevelModules m;
      for (int r = 0; r < l.repeats; ++r) {
        m.res.emplace_back(rng, r == 0 ? in : l.width, l.width, td);
        if (l.has_vit(r)) {
          m.vit.emplace_back(VitModule(rng, l.width, l.vit_blocks, s.token_dim));
        } else {
          m.vit.emplace_back(std::nullopt);
        }
      }
      if (l.sampler) m.sampler = Conv(rng, l.width, l.width, 3, stage == Stage::Down ? 2 : 1);
      return m;
    };

    const auto& down_levels = arch.find_stage(Stage::Down)->levels;
    int width = s.widths[0];
    for (const auto& l : down_levels) {
      down.push_back(build(l, width, Stage::Down));
      width = l.width;
    }
    const auto& mid = arch.find_stage(Stage::Mid)->levels.front();
    auto mid_modules = build(mid, width, Stage::Mid);
    mid_res = std::move(mid_modules.res);
    mid_vit = std::move(mid_modules.vit);
    for (const auto& l : arch.find_stage(Stage::Up)->levels) {
      const int skip = s.widths[levels - 1 - *l.level];
      up.push_back(build(l, width + skip, Stage::Up));
      width = l.width;
    }
  }
};

ToyBackbone::ToyBackbone(ToySpec spec)
    : spec_(std::move(spec)), arch_(toy_architecture(spec_)), net_(std::make_unique<Net>(spec_, arch_)) {}
ToyBackbone::~ToyBackbone() = default;
ToyBackbone::ToyBackbone(ToyBackbone&&) noexcept = default;
ToyBackbone& ToyBackbone::operator=(ToyBackbone&&) noexcept = default;

ForwardCapture ToyBackbone::run(const Image& image, const ExtractionConfig& config, const CaptureRequest& request) {
  const int levels = static_cast<int>(spec_.widths.size());
  const int width = config.input_width > 0 ? config.input_width : image.width;
  const int height = config.input_height > 0 ? config.input_height : image.height;
  const int granule = spec_.latent_factor << (levels - 1);
  if (width <= 0 || height <= 0 || width % granule != 0 || height % granule != 0) {
    throw ConfigError("toy backbone input size must be a positive multiple of " + std::to_string(granule));
  }
  if (image.channels < 1 || image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw ShapeError("malformed image");
  }
  for (const auto& id : request.activations) {
    if (!is_addressable(arch_, id)) {
      throw ConfigError("activation " + id.str() + " is not addressable in the toy backbone '" + arch_.name + "'");
    }
  }

  ForwardCapture out;
  Recorder rec{request, {request.activations.begin(), request.activations.end()}, out};
  out.tokens = tokenize_prompt(config.prompt, spec_.context_tokens, spec_.vocabulary);

  // Encode: RGB in [-1, 1], average-pooled to the latent grid, projected to latent channels.
  Tensor3 rgb(3, image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const float* px = &image.pixels[(static_cast<std::size_t>(y) * image.width + x) * image.channels];
      for (int c = 0; c < 3; ++c) rgb.at(c, y, x) = 2.0f * px[image.channels >= 3 ? c : 0] - 1.0f;
    }
  }
  if (rgb.width != width || rgb.height != height) rgb = resize(rgb, height, width);
  const int lf = spec_.latent_factor;
  Tensor3 pooled(3, height / lf, width / lf);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < pooled.height; ++y) {
      for (int x = 0; x < pooled.width; ++x) {
        double sum = 0;
        for (int dy = 0; dy < lf; ++dy) {
          for (int dx = 0; dx < lf; ++dx) sum += rgb.at(c, y * lf + dy, x * lf + dx);
        }
        pooled.at(c, y, x) = static_cast<float>(sum / (lf * lf));
      }
    }
  }
  Feat x0 = from_tensor(pooled);
  x0.m = x0.m * net_->encoder;

  const NoiseSchedule schedule(config.schedule_length);
  const auto noise = gaussian_noise(spec_.latent_channels, x0.h, x0.w, config.noise_seed);
  const Feat xt = from_tensor(schedule.add_noise(to_tensor(x0), config.timestep, noise));

  Row temb = net_->time2(silu(net_->time1(sinusoidal(config.timestep, spec_.time_dim))));
  const Row t_act = silu(temb);
  Mat context(spec_.context_tokens, spec_.token_dim);
  for (int i = 0; i < spec_.context_tokens; ++i) context.row(i) = net_->embedding.row(out.tokens.ids[i]);

  const auto run_level = [&](const LevelModules& m, Stage stage, std::optional<int> level, Feat h,
                             const Feat* skip) {
    for (int r = 0; r < static_cast<int>(m.res.size()); ++r) {
      const Where at{stage, level, r};
      h = m.res[r](r == 0 && skip ? concat(h, *skip) : h, t_act, rec, at);
      if (m.vit[r]) h = (*m.vit[r])(h, context, rec, at);
    }
    return h;
  };

  Feat h = net_->conv_in(xt);
  std::vector<Feat> skips;
  for (int i = 0; i < levels; ++i) {
    const auto& m = net_->down[i];
    h = run_level(m, Stage::Down, i, std::move(h), nullptr);
    skips.push_back(h);
    if (m.sampler) {
      h = (*m.sampler)(h);
      rec.put(ActivationId::sampler(Stage::Down, i), h);
    }
  }
  for (int r = 0; r < static_cast<int>(net_->mid_res.size()); ++r) {
    const Where at{Stage::Mid, std::nullopt, r};
    h = net_->mid_res[r](h, t_act, rec, at);
    if (net_->mid_vit[r]) h = (*net_->mid_vit[r])(h, context, rec, at);
  }
  for (int j = 0; j < levels; ++j) {
    const auto& m = net_->up[j];
    h = run_level(m, Stage::Up, j, std::move(h), &skips[levels - 1 - j]);
    if (m.sampler) {
      h = (*m.sampler)(upsample_nearest(h));
      rec.put(ActivationId::sampler(Stage::Up, j), h);
    }
  }
  return out;
}

std::unique_ptr<BackboneAdapter> build_toy_adapter(const ToySpec& spec) { return std::make_unique<ToyBackbone>(spec); }

}  // namespace difsel
