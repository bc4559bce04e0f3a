#include "ropar/ropar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ropar/nn.hpp"
#include "ropar/synthdata.hpp"

namespace ropar {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  if (T < 1) fail_config("diffusion T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end * 1000.0 / T < 1.0))
    fail_config("diffusion betas must satisfy 0 < beta_start <= beta_end and beta_end * 1000 / T < 1");
  NoiseSchedule s;
  s.T = T;
  const double scale = 1000.0 / T;
  beta_start *= scale;
  beta_end *= scale;
  s.beta.assign(T + 1, 0.0);
  s.alphabar.assign(T + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    s.beta[t] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.alphabar[t] = s.alphabar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

torch::Tensor ddpm_forward(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                           const NoiseSchedule& schedule) {
  if (t.numel() > 0 && (t.min().item<std::int64_t>() < 1 || t.max().item<std::int64_t>() > schedule.T))
    fail_data("diffusion timestep out of range [1, " + std::to_string(schedule.T) + "]");
  const auto table = torch::tensor(schedule.alphabar, torch::kFloat64).to(z0.dtype());
  auto ab = table.index_select(0, t.reshape(-1)).reshape(t.sizes());
  while (ab.dim() < z0.dim()) ab = ab.unsqueeze(-1);
  return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps;
}

torch::Tensor ddpm_forward(const torch::Tensor& z0, int t, const torch::Tensor& eps, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.T) fail_data("diffusion timestep out of range [1, " + std::to_string(schedule.T) + "]");
  const double ab = schedule.alphabar[t];
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

MaskPlan make_mask_plan(const torch::Tensor& credible, double alpha, Rng& rng, bool literal_formula) {
  if (!(alpha > 0.0 && alpha <= 1.0)) fail_config("mask ratio alpha must be in (0, 1]");
  MaskPlan plan;
  plan.alpha = alpha;
  const auto cells = credible.numel();
  const auto noisy = torch::logical_not(credible);
  plan.beta = cells ? noisy.sum().item<double>() / static_cast<double>(cells) : 0.0;
  plan.ratio_unreachable = alpha < plan.beta;
  double p;
  if (literal_formula) {
    p = alpha - plan.beta;
  } else {
    p = plan.beta < 1.0 ? (alpha - plan.beta) / (1.0 - plan.beta) : 0.0;
  }
  plan.credible_probability = std::clamp(p, 0.0, 1.0);
  const auto draw = at::rand(credible.sizes(), rng.torch()) < plan.credible_probability;
  plan.loss_mask = torch::logical_and(credible, draw);
  plan.masked = torch::logical_or(noisy, plan.loss_mask);
  return plan;
}

std::vector<int> unmask_counts(int cells, int steps) {
  if (steps < 1) fail_config("decode steps K must be >= 1");
  std::vector<int> out;
  int remaining = cells;
  for (int k = 1; k <= steps; ++k) {
    const int next = k == steps ? 0 : static_cast<int>(std::floor(cells * std::cos(M_PI * k / (2.0 * steps))));
    out.push_back(remaining - next);
    remaining = next;
  }
  return out;
}

TextVocab::TextVocab(std::vector<std::string> words) : words_(std::move(words)) {
  std::sort(words_.begin(), words_.end());
  words_.erase(std::unique(words_.begin(), words_.end()), words_.end());
}

TextVocab TextVocab::from_grammar() { return TextVocab(default_grammar().vocabulary()); }

std::vector<std::int64_t> TextVocab::tokenize(const std::string& prompt) const {
  std::istringstream in(prompt);
  std::vector<std::int64_t> ids;
  std::string w;
  while (in >> w) {
    const auto it = std::lower_bound(words_.begin(), words_.end(), w);
    ids.push_back(it != words_.end() && *it == w ? 1 + (it - words_.begin()) : 0);
  }
  if (ids.empty()) fail_data("empty prompt");
  return ids;
}

void GenConfig::validate() const {
  if (d_model < 8 || heads < 1 || d_model % heads != 0) fail_config("gen.d_model must be a multiple of gen.heads");
  if (layers < 1 || ff_mult < 1 || head_width < 1 || head_layers < 2) fail_config("gen network sizes must be positive");
  if (!(alpha_min > 0.0 && alpha_min <= alpha_max && alpha_max <= 1.0))
    fail_config("gen.alpha_min/alpha_max must satisfy 0 < min <= max <= 1");
  if (fixed_alpha > 1.0) fail_config("gen.fixed_alpha must be <= 1");
  if (max_frames < 1 || window < 1 || window > max_frames) fail_config("gen.window must be in [1, max_frames]");
  if (learning_rate <= 0.0 || epochs < 1 || batch_size < 1 || diffusion_reps < 1)
    fail_config("gen optimizer settings must be positive");
  if (decode_steps < 1) fail_config("gen.decode_steps must be >= 1");
  if (sampling_steps < 1 || sampling_steps > T) fail_config("gen.sampling_steps must be in [1, T]");
  NoiseSchedule::linear(T, beta_start, beta_end);
}

namespace {

std::string head_name(HeadKind h) { return h == HeadKind::Diffusion ? "diffusion" : "regression"; }

HeadKind head_from_string(const std::string& s) {
  if (s == "diffusion") return HeadKind::Diffusion;
  if (s == "regression") return HeadKind::Regression;
  fail_config("unknown head '" + s + "' (expected diffusion or regression)");
}

}  // namespace

nlohmann::json to_json(const GenConfig& c) {
  return {{"d_model", c.d_model},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ff_mult", c.ff_mult},
          {"head_width", c.head_width},
          {"head_layers", c.head_layers},
          {"T", c.T},
          {"beta_start", c.beta_start},
          {"beta_end", c.beta_end},
          {"alpha_min", c.alpha_min},
          {"alpha_max", c.alpha_max},
          {"fixed_alpha", c.fixed_alpha},
          {"literal_mask_formula", c.literal_mask_formula},
          {"max_frames", c.max_frames},
          {"window", c.window},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"diffusion_reps", c.diffusion_reps},
          {"credible_only", c.credible_only},
          {"head", head_name(c.head)},
          {"decode_steps", c.decode_steps},
          {"sampling_steps", c.sampling_steps},
          {"seed", c.seed}};
}

GenConfig gen_config_from_json(const nlohmann::json& j) {
  GenConfig c;
  c.d_model = j.at("d_model");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.ff_mult = j.at("ff_mult");
  c.head_width = j.at("head_width");
  c.head_layers = j.at("head_layers");
  c.T = j.at("T");
  c.beta_start = j.at("beta_start");
  c.beta_end = j.at("beta_end");
  c.alpha_min = j.at("alpha_min");
  c.alpha_max = j.at("alpha_max");
  c.fixed_alpha = j.at("fixed_alpha");
  c.literal_mask_formula = j.at("literal_mask_formula");
  c.max_frames = j.at("max_frames");
  c.window = j.at("window");
  c.learning_rate = j.at("learning_rate");
  c.epochs = j.at("epochs");
  c.batch_size = j.at("batch_size");
  c.diffusion_reps = j.at("diffusion_reps");
  c.credible_only = j.at("credible_only");
  c.head = head_from_string(j.at("head"));
  c.decode_steps = j.at("decode_steps");
  c.sampling_steps = j.at("sampling_steps");
  c.seed = j.at("seed");
  return c;
}

namespace detail {

constexpr int kTimeEmbed = 64;

struct BlockImpl : torch::nn::Module {
  BlockImpl(int d, int heads, int ff) : heads(heads) {
    ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    qkv = register_module("qkv", torch::nn::Linear(d, 3 * d));
    proj = register_module("proj", torch::nn::Linear(d, d));
    ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    fc1 = register_module("fc1", torch::nn::Linear(d, ff * d));
    fc2 = register_module("fc2", torch::nn::Linear(ff * d, d));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    const auto b = x.size(0), l = x.size(1), d = x.size(2);
    const auto dh = d / heads;
    auto q3 = qkv(ln1(x)).reshape({b, l, 3, heads, dh}).permute({2, 0, 3, 1, 4});
    auto att = torch::softmax(torch::matmul(q3[0], q3[1].transpose(-2, -1)) / std::sqrt(static_cast<double>(dh)), -1);
    auto o = torch::matmul(att, q3[2]).transpose(1, 2).reshape({b, l, d});
    auto h = x + proj(o);
    return h + fc2(torch::gelu(fc1(ln2(h))));
  }

  int heads;
  torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr};
  torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Block);

// Feed-forward denoiser eps(x_t | t, zhat); the condition is re-injected at every hidden layer.
struct DiffusionHeadImpl : torch::nn::Module {
  DiffusionHeadImpl(int latent, int cond_dim, int width, int layers) {
    in = register_module("in", torch::nn::Linear(latent + kTimeEmbed + cond_dim, width));
    for (int k = 0; k + 2 < layers; ++k) {
      hidden.push_back(register_module("hidden" + std::to_string(k), torch::nn::Linear(width, width)));
      cond.push_back(register_module("cond" + std::to_string(k), torch::nn::Linear(kTimeEmbed + cond_dim, width)));
    }
    out = register_module("out", torch::nn::Linear(width, latent));
  }

  torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& zhat) {
    const auto c = torch::cat({nn::sinusoidal_embedding(t, kTimeEmbed).to(x_t.dtype()), zhat}, 1);
    auto h = torch::silu(in(torch::cat({x_t, c}, 1)));
    for (std::size_t k = 0; k < hidden.size(); ++k) h = torch::silu(hidden[k](h) + cond[k](c));
    return out(h);
  }

  torch::nn::Linear in{nullptr}, out{nullptr};
  std::vector<torch::nn::Linear> hidden, cond;
};
TORCH_MODULE(DiffusionHead);

struct RegressionHeadImpl : torch::nn::Module {
  RegressionHeadImpl(int latent, int cond_dim, int width, int layers) {
    in = register_module("in", torch::nn::Linear(cond_dim, width));
    for (int k = 0; k + 2 < layers; ++k)
      hidden.push_back(register_module("hidden" + std::to_string(k), torch::nn::Linear(width, width)));
    out = register_module("out", torch::nn::Linear(width, latent));
  }

  torch::Tensor forward(const torch::Tensor& zhat) {
    auto h = torch::silu(in(zhat));
    for (auto& l : hidden) h = torch::silu(l(h));
    return out(h);
  }

  torch::nn::Linear in{nullptr}, out{nullptr};
  std::vector<torch::nn::Linear> hidden;
};
TORCH_MODULE(RegressionHead);

struct GeneratorNetImpl : torch::nn::Module {
  GeneratorNetImpl(const GenConfig& c, int latent, int tokens, int vocab) {
    const int d = c.d_model;
    token_proj = register_module("token_proj", torch::nn::Linear(latent, d));
    mask_token = register_parameter("mask_token", torch::randn({d}) * 0.02);
    frame_emb = register_module("frame_emb", torch::nn::Embedding(c.max_frames, d));
    part_emb = register_module("part_emb", torch::nn::Embedding(tokens, d));
    word_emb = register_module("word_emb", torch::nn::Embedding(vocab, d));
    text_proj = register_module("text_proj", torch::nn::Linear(d, d));
    text_pos = register_parameter("text_pos", torch::randn({d}) * 0.02);
    {
      torch::NoGradGuard guard;
      frame_emb->weight.mul_(0.02);
      part_emb->weight.mul_(0.02);
    }
    for (int k = 0; k < c.layers; ++k)
      blocks.push_back(register_module("block" + std::to_string(k), Block(d, c.heads, c.ff_mult)));
    ln_f = register_module("ln_f", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    if (c.head == HeadKind::Diffusion)
      diffusion = register_module("head", DiffusionHead(latent, d, c.head_width, c.head_layers));
    else
      regression = register_module("head", RegressionHead(latent, d, c.head_width, c.head_layers));
    latent_mean = register_buffer("latent_mean", torch::zeros({latent}));
    latent_std = register_buffer("latent_std", torch::ones({latent}));
  }

  torch::nn::Linear token_proj{nullptr}, text_proj{nullptr};
  torch::Tensor mask_token, text_pos, latent_mean, latent_std;
  torch::nn::Embedding frame_emb{nullptr}, part_emb{nullptr}, word_emb{nullptr};
  std::vector<Block> blocks;
  torch::nn::LayerNorm ln_f{nullptr};
  DiffusionHead diffusion{nullptr};
  RegressionHead regression{nullptr};
};

}  // namespace detail

Generator::Generator(const GenConfig& config, int latent_dim, int tokens_per_frame, TextVocab vocab)
    : config_(config), latent_dim_(latent_dim), tokens_(tokens_per_frame), vocab_(std::move(vocab)) {
  config_.validate();
  schedule_ = NoiseSchedule::linear(config_.T, config_.beta_start, config_.beta_end);
  torch::manual_seed(derive_seed(config_.seed, "gen-init"));
  net_ = std::make_shared<detail::GeneratorNetImpl>(config_, latent_dim_, tokens_, static_cast<int>(vocab_.size()));
}

torch::nn::Module& Generator::module() { return *net_; }
const torch::nn::Module& Generator::module() const { return *net_; }

std::vector<torch::Tensor> Generator::head_parameters() const {
  return net_->diffusion ? net_->diffusion->parameters() : net_->regression->parameters();
}

torch::Tensor Generator::embed_text(const std::vector<std::string>& prompts) const {
  std::vector<torch::Tensor> rows;
  for (const auto& p : prompts) {
    const auto ids = vocab_.tokenize(p);
    rows.push_back(net_->word_emb(torch::tensor(ids, torch::kLong)).mean(0));
  }
  return net_->text_proj(torch::stack(rows));
}

torch::Tensor Generator::forward(const torch::Tensor& tokens, const torch::Tensor& masked,
                                 const torch::Tensor& text) const {
  if (tokens.dim() != 4 || tokens.size(2) != tokens_ || tokens.size(3) != latent_dim_)
    fail_data("token grid must be [B, N', " + std::to_string(tokens_) + ", " + std::to_string(latent_dim_) + "]");
  if (masked.sizes() != tokens.sizes().slice(0, 3)) fail_data("mask does not match the token grid");
  if (text.dim() != 2 || text.size(0) != tokens.size(0) || text.size(1) != config_.d_model)
    fail_data("text embedding must be [B, d_model]");
  const auto b = tokens.size(0), n = tokens.size(1), p = tokens.size(2);
  if (n > config_.max_frames) fail_data("grid has more latent frames than gen.max_frames");
  const auto m = masked.unsqueeze(-1);
  const auto visible = torch::where(m, torch::zeros({}, tokens.options()), tokens);
  auto e = torch::where(m, net_->mask_token, net_->token_proj(visible));
  e = e + net_->frame_emb(torch::arange(n)).unsqueeze(1) + net_->part_emb(torch::arange(p)).unsqueeze(0);
  auto seq = torch::cat({(text + net_->text_pos).unsqueeze(1), e.reshape({b, n * p, config_.d_model})}, 1);
  for (auto& block : net_->blocks) seq = block->forward(seq);
  seq = net_->ln_f(seq);
  return seq.narrow(1, 1, n * p).reshape({b, n, p, config_.d_model});
}

torch::Tensor Generator::predict_noise(const torch::Tensor& x_t, const torch::Tensor& t,
                                       const torch::Tensor& zhat) const {
  if (!net_->diffusion) fail_config("generator was built with a regression head");
  return net_->diffusion->forward(x_t, t, zhat);
}

torch::Tensor Generator::predict_latent(const torch::Tensor& zhat) const {
  if (!net_->regression) fail_config("generator was built with a diffusion head");
  return net_->regression->forward(zhat);
}

void Generator::set_latent_stats(const torch::Tensor& mean, const torch::Tensor& stddev) {
  torch::NoGradGuard guard;
  net_->latent_mean.copy_(mean);
  net_->latent_std.copy_(stddev);
}

torch::Tensor Generator::standardize(const torch::Tensor& z) const {
  return (z - net_->latent_mean) / net_->latent_std;
}
torch::Tensor Generator::unstandardize(const torch::Tensor& z) const {
  return z * net_->latent_std + net_->latent_mean;
}

void Generator::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  nlohmann::json side = extra;
  side["kind"] = "generator";
  side["config"] = to_json(config_);
  side["latent_dim"] = latent_dim_;
  side["tokens_per_frame"] = tokens_;
  side["vocabulary"] = vocab_.words();
  side["schedule"] = {{"T", schedule_.T}, {"beta_start", config_.beta_start}, {"beta_end", config_.beta_end}};
  nn::save_checkpoint(*net_, path, side);
}

Generator Generator::load(const std::filesystem::path& path) {
  const auto side = nn::read_sidecar(path);
  if (side.value("kind", "") != "generator") fail_data(path.string() + " is not a generator checkpoint");
  Generator g(gen_config_from_json(side.at("config")), side.at("latent_dim"), side.at("tokens_per_frame"),
              TextVocab(side.at("vocabulary").get<std::vector<std::string>>()));
  nn::load_checkpoint(*g.net_, path);
  return g;
}

namespace {

torch::Tensor selected_rows(const torch::Tensor& x, const torch::Tensor& idx) {
  return x.reshape({-1, x.size(-1)}).index_select(0, idx);
}

torch::Tensor loss_indices(const torch::Tensor& loss_mask) {
  auto idx = loss_mask.reshape(-1).nonzero().squeeze(1);
  if (idx.numel() == 0) fail_data("empty loss mask");
  return idx;
}

}  // namespace

torch::Tensor diffusion_loss(const NoiseSchedule& schedule, const Denoiser& denoiser, const torch::Tensor& z_targets,
                             const torch::Tensor& zhat, const torch::Tensor& loss_mask, Rng& rng, int reps) {
  if (z_targets.sizes().slice(0, 3) != loss_mask.sizes() || zhat.sizes().slice(0, 3) != loss_mask.sizes())
    fail_data("diffusion_loss shapes disagree");
  if (reps < 1) fail_config("diffusion reps must be >= 1");
  const auto idx = loss_indices(loss_mask);
  auto z0 = selected_rows(z_targets, idx);
  auto cond = selected_rows(zhat, idx);
  if (reps > 1) {
    z0 = z0.repeat({reps, 1});
    cond = cond.repeat({reps, 1});
  }
  const auto t = at::randint(1, schedule.T + 1, {z0.size(0)}, rng.torch(), torch::kLong);
  const auto eps = at::randn(z0.sizes(), rng.torch(), z0.options());
  const auto x_t = ddpm_forward(z0, t, eps, schedule);
  return (denoiser(x_t, t, cond) - eps).square().mean();
}

torch::Tensor diffusion_loss(const Generator& gen, const torch::Tensor& z_targets, const torch::Tensor& zhat,
                             const torch::Tensor& loss_mask, Rng& rng, int reps) {
  return diffusion_loss(
      gen.schedule(),
      [&gen](const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& c) {
        return gen.predict_noise(x_t, t, c);
      },
      z_targets, zhat, loss_mask, rng, reps);
}

torch::Tensor regression_loss(const Generator& gen, const torch::Tensor& z_targets, const torch::Tensor& zhat,
                              const torch::Tensor& loss_mask) {
  const auto idx = loss_indices(loss_mask);
  return (gen.predict_latent(selected_rows(zhat, idx)) - selected_rows(z_targets, idx)).square().mean();
}

torch::Tensor ddpm_sample(const Generator& gen, const torch::Tensor& zhat, Rng& rng, int steps) {
  const auto& s = gen.schedule();
  if (steps < 1 || steps > s.T) fail_config("sampling steps must be in [1, T]");
  std::vector<int> ts;
  for (int i = 0; i < steps; ++i) {
    const int t = steps == 1 ? s.T
                             : static_cast<int>(std::lround(1.0 + (s.T - 1.0) * (steps - 1 - i) / (steps - 1.0)));
    if (ts.empty() || ts.back() != t) ts.push_back(t);
  }
  const auto m = zhat.size(0);
  auto x = at::randn({m, gen.latent_dim()}, rng.torch(), zhat.options());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const double ab_t = s.alphabar[t], ab_prev = s.alphabar[prev];
    const double beta = 1.0 - ab_t / ab_prev;
    const auto eps = gen.predict_noise(x, torch::full({m}, t, torch::kLong), zhat);
    x = (x - beta / std::sqrt(1.0 - ab_t) * eps) / std::sqrt(1.0 - beta);
    if (prev > 0) {
      const double var = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
      x = x + std::sqrt(var) * at::randn(x.sizes(), rng.torch(), x.options());
    }
  }
  return x;
}

std::vector<GenExample> encode_corpus(const PVAE& pvae, const std::vector<MotionRecord>& corpus, bool credible_only) {
  std::vector<GenExample> out;
  for (const auto& r : corpus) {
    auto enc = encode_record(pvae, r, credible_only);
    out.push_back({enc.latents, enc.credible, r.prompt});
  }
  return out;
}

GenTrainResult train_generator(const std::vector<GenExample>& data, int latent_dim, int tokens_per_frame,
                               const GenConfig& config) {
  if (data.empty()) fail_data("train_generator needs a nonempty dataset");
  Generator gen(config, latent_dim, tokens_per_frame, TextVocab::from_grammar());

  std::int64_t shortest = std::numeric_limits<std::int64_t>::max();
  auto sum = torch::zeros({latent_dim}, torch::kFloat64), sq = sum.clone();
  double count = 0.0;
  for (const auto& ex : data) {
    if (ex.latents.dim() != 3 || ex.latents.size(1) != tokens_per_frame || ex.latents.size(2) != latent_dim)
      fail_data("generator example has the wrong latent shape");
    shortest = std::min(shortest, ex.latents.size(0));
    const auto keep = ex.credible.to(torch::kFloat64).unsqueeze(-1);
    const auto z = ex.latents.to(torch::kFloat64);
    sum += (z * keep).sum({0, 1});
    sq += (z.square() * keep).sum({0, 1});
    count += keep.sum().item<double>();
  }
  if (count == 0.0) fail_data("no credible latent tokens to train on");
  const auto mean = sum / count;
  gen.set_latent_stats(mean.to(torch::kFloat32),
                       (sq / count - mean.square()).clamp_min(0.0).sqrt().clamp_min(1e-4).to(torch::kFloat32));

  std::vector<torch::Tensor> latents;
  for (const auto& ex : data) latents.push_back(gen.standardize(ex.latents.to(torch::kFloat32)).detach());
  const int window = static_cast<int>(std::min<std::int64_t>(config.window, shortest));

  Rng rng(derive_seed(config.seed, "gen-train"));
  torch::optim::AdamW opt(gen.module().parameters(), torch::optim::AdamWOptions(config.learning_rate).weight_decay(0.01));
  GenTrainResult result{gen, {}, 0};
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const int steps_per_epoch = static_cast<int>((data.size() + config.batch_size - 1) / config.batch_size);
  const int total_steps = steps_per_epoch * config.epochs;
  const int warmup = std::max(1, total_steps / 20);
  int step = 0;

  gen.module().train();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double alpha = config.fixed_alpha > 0.0 ? config.fixed_alpha : rng.uniform(config.alpha_min, config.alpha_max);
      std::vector<torch::Tensor> zs, masked, loss_mask, cred;
      std::vector<std::string> prompts;
      for (std::size_t k = start; k < end; ++k) {
        const auto i = order[k];
        const auto off = rng.integer(0, latents[i].size(0) - window);
        const auto c = config.credible_only ? data[i].credible.narrow(0, off, window)
                                            : torch::ones({window, tokens_per_frame}, torch::kBool);
        const auto plan = make_mask_plan(c, alpha, rng, config.literal_mask_formula);
        zs.push_back(latents[i].narrow(0, off, window));
        masked.push_back(plan.masked);
        loss_mask.push_back(plan.loss_mask);
        cred.push_back(c);
        prompts.push_back(data[i].prompt);
      }
      const auto z = torch::stack(zs), m = torch::stack(masked), lm = torch::stack(loss_mask);
      const auto noisy = torch::logical_not(torch::stack(cred));
      result.noisy_reads += torch::logical_and(noisy, torch::logical_not(m)).sum().item<std::int64_t>() +
                            torch::logical_and(noisy, lm).sum().item<std::int64_t>();
      if (lm.sum().item<std::int64_t>() == 0) continue;

      ++step;
      const double lr = step <= warmup ? config.learning_rate * step / warmup
                                       : config.learning_rate *
                                             (0.1 + 0.9 * 0.5 * (1.0 + std::cos(M_PI * (step - warmup) /
                                                                                    std::max(1, total_steps - warmup))));
      for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

      const auto zhat = gen.forward(z, m, gen.embed_text(prompts));
      const auto loss = config.head == HeadKind::Diffusion
                            ? diffusion_loss(gen, z, zhat, lm, rng, config.diffusion_reps)
                            : regression_loss(gen, z, zhat, lm);
      const double value = loss.item<double>();
      nn::check_finite(value, "generator loss at epoch " + std::to_string(epoch));
      opt.zero_grad();
      loss.backward();
      torch::nn::utils::clip_grad_norm_(gen.module().parameters(), 1.0);
      opt.step();
      loss_sum += value;
      ++batches;
    }
    result.log.push_back({epoch, batches ? loss_sum / batches : std::nan("")});
  }
  gen.module().eval();
  result.model = gen;
  return result;
}

namespace {
thread_local std::vector<int> g_unmask_trace;
}

const std::vector<int>& last_unmask_trace() { return g_unmask_trace; }

std::vector<MotionRecord> sample_motions(const Generator& gen, const PVAE& pvae, const std::vector<std::string>& prompts,
                                         int frames, int decode_steps, Rng& rng, double fps) {
  if (decode_steps < 1) fail_config("decode steps K must be >= 1");
  if (gen.latent_dim() != pvae.latent_dim() || gen.tokens_per_frame() != pvae.tokens_per_frame())
    fail_data("generator and P-VAE checkpoints are incompatible");
  if (prompts.empty()) return {};
  const int f = pvae.config().downsample;
  const int n = frames / f;
  if (n < 1 || n > gen.config().max_frames)
    fail_data("requested length gives " + std::to_string(n) + " latent frames; supported range is [1, " +
              std::to_string(gen.config().max_frames) + "]");
  torch::NoGradGuard guard;
  const auto b = static_cast<std::int64_t>(prompts.size());
  const int p = gen.tokens_per_frame();
  const int cells = n * p;
  auto tokens = torch::zeros({b, n, p, gen.latent_dim()});
  auto masked = torch::ones({b, n, p}, torch::kBool);
  const auto text = gen.embed_text(prompts);

  std::vector<std::vector<std::int64_t>> order(b, std::vector<std::int64_t>(cells));
  for (auto& o : order) {
    std::iota(o.begin(), o.end(), 0);
    std::shuffle(o.begin(), o.end(), rng.engine());
  }
  g_unmask_trace = unmask_counts(cells, decode_steps);
  int filled = 0;
  for (int count : g_unmask_trace) {
    if (count == 0) continue;
    const auto zhat = gen.forward(tokens, masked, text).reshape({b * cells, gen.config().d_model});
    std::vector<std::int64_t> flat;
    for (std::int64_t g = 0; g < b; ++g)
      for (int k = filled; k < filled + count; ++k) flat.push_back(g * cells + order[g][k]);
    const auto idx = torch::tensor(flat, torch::kLong);
    const auto cond = zhat.index_select(0, idx);
    const auto z = gen.config().head == HeadKind::Diffusion ? ddpm_sample(gen, cond, rng, gen.config().sampling_steps)
                                                            : gen.predict_latent(cond);
    tokens.view({b * cells, gen.latent_dim()}).index_copy_(0, idx, z);
    masked.view({b * cells}).index_fill_(0, idx, false);
    filled += count;
  }

  std::vector<MotionRecord> out;
  for (std::int64_t g = 0; g < b; ++g) {
    const auto pos = decode_latents(pvae, gen.unstandardize(tokens[g]), RootAnchor{});
    MotionRecord r("sample-" + std::to_string(g), prompts[g], fps, static_cast<int>(pos.rows),
                   static_cast<int>(pos.cols));
    r.positions = pos;
    r.confidences = ConfidenceTrack(pos.rows, pos.cols, 1.0);
    out.push_back(std::move(r));
  }
  return out;
}

MotionRecord sample_motion(const Generator& gen, const PVAE& pvae, const std::string& prompt, int frames,
                           int decode_steps, Rng& rng, double fps) {
  return sample_motions(gen, pvae, {prompt}, frames, decode_steps, rng, fps).front();
}

}  // namespace ropar
