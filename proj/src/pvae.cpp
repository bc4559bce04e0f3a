#include "ropar/pvae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ropar/credibility.hpp"
#include "ropar/nn.hpp"

namespace ropar {

namespace F = torch::nn::functional;

std::string to_string(PVAEVariant v) {
  switch (v) {
    case PVAEVariant::Shared:
      return "shared";
    case PVAEVariant::PerPart:
      return "per_part";
    case PVAEVariant::FullBody:
      return "full_body";
  }
  return "?";
}

PVAEVariant pvae_variant_from_string(const std::string& s) {
  if (s == "shared") return PVAEVariant::Shared;
  if (s == "per_part") return PVAEVariant::PerPart;
  if (s == "full_body") return PVAEVariant::FullBody;
  fail_config("unknown P-VAE variant '" + s + "' (expected shared, per_part or full_body)");
}

void PVAEConfig::validate() const {
  if (latent_dim < 2) fail_config("vae.latent_dim must be >= 2");
  if (downsample != 1 && downsample != 2 && downsample != 4) fail_config("vae.downsample must be 1, 2 or 4");
  if (hidden < 1 || part_embed_dim < 0) fail_config("vae.hidden must be positive");
  if (kl_weight < 0.0) fail_config("vae.kl_weight must be >= 0");
  if (learning_rate <= 0.0 || epochs < 1 || batch_size < 1) fail_config("vae optimizer settings must be positive");
  if (crop_frames < downsample) fail_config("vae.crop_frames must be >= downsample");
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) fail_config("vae.validation_fraction must be in [0,1)");
  if (tau < 0.0 || tau > 1.0) fail_config("vae.tau must be in [0,1]");
  if (root_weight <= 0.0) fail_config("vae.root_weight must be positive");
}

nlohmann::json to_json(const PVAEConfig& c) {
  return {{"latent_dim", c.latent_dim},       {"hidden", c.hidden},
          {"part_embed_dim", c.part_embed_dim}, {"downsample", c.downsample},
          {"kl_weight", c.kl_weight},         {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},               {"batch_size", c.batch_size},
          {"crop_frames", c.crop_frames},     {"validation_fraction", c.validation_fraction},
          {"tau", c.tau},                     {"root_weight", c.root_weight},                     {"credible_only", c.credible_only},
          {"variant", to_string(c.variant)},  {"seed", c.seed}};
}

PVAEConfig pvae_config_from_json(const nlohmann::json& j) {
  PVAEConfig c;
  c.latent_dim = j.at("latent_dim");
  c.hidden = j.at("hidden");
  c.part_embed_dim = j.at("part_embed_dim");
  c.downsample = j.at("downsample");
  c.kl_weight = j.at("kl_weight");
  c.learning_rate = j.at("learning_rate");
  c.epochs = j.at("epochs");
  c.batch_size = j.at("batch_size");
  c.crop_frames = j.at("crop_frames");
  c.validation_fraction = j.at("validation_fraction");
  c.tau = j.at("tau");
  c.root_weight = j.at("root_weight");
  c.credible_only = j.at("credible_only");
  c.variant = pvae_variant_from_string(j.at("variant"));
  c.seed = j.at("seed");
  return c;
}

namespace detail {

struct CodecImpl : torch::nn::Module {
  CodecImpl(int in_dim, int embed_dim, int hidden, int latent, int f) : f(f) {
    const auto conv = [](int i, int o, int k) { return torch::nn::Conv1dOptions(i, o, k).padding(k / 2); };
    e1 = register_module("e1", torch::nn::Conv1d(conv(in_dim + embed_dim, hidden, 3)));
    e2 = register_module("e2", torch::nn::Conv1d(conv(hidden, hidden, 3)));
    e_out = register_module("e_out", torch::nn::Conv1d(conv(hidden, 2 * latent, 1)));
    d1 = register_module("d1", torch::nn::Conv1d(conv(latent + embed_dim, hidden, 3)));
    d2 = register_module("d2", torch::nn::Conv1d(conv(hidden, hidden, 3)));
    d_out = register_module("d_out", torch::nn::Conv1d(conv(hidden, in_dim, 1)));
  }

  // x: [N, C, T] -> (mu, logvar) [N, d, T/f]
  std::pair<torch::Tensor, torch::Tensor> encode(const torch::Tensor& x) {
    auto h = torch::silu(e1(x));
    h = h + torch::silu(e2(h));
    if (f > 1) h = F::avg_pool1d(h, F::AvgPool1dFuncOptions(f));
    auto out = e_out(h).chunk(2, 1);
    return {out[0], out[1].clamp(-8.0, 8.0)};
  }

  // z: [N, C, T'] -> [N, D, T'*f]
  torch::Tensor decode(const torch::Tensor& z) {
    auto h = f > 1 ? z.repeat_interleave(f, 2) : z;
    h = torch::silu(d1(h));
    h = h + torch::silu(d2(h));
    return d_out(h);
  }

  int f;
  torch::nn::Conv1d e1{nullptr}, e2{nullptr}, e_out{nullptr}, d1{nullptr}, d2{nullptr}, d_out{nullptr};
};
TORCH_MODULE(Codec);

struct PVAENetImpl : torch::nn::Module {
  PVAENetImpl(const PVAEConfig& c, int tokens, int max_dim) : variant(c.variant) {
    const bool embedded = c.variant == PVAEVariant::Shared && c.part_embed_dim > 0;
    embed_dim = embedded ? c.part_embed_dim : 0;
    const int codecs_needed = c.variant == PVAEVariant::PerPart ? tokens : 1;
    for (int k = 0; k < codecs_needed; ++k)
      codecs.push_back(register_module("codec" + std::to_string(k),
                                       Codec(max_dim, embed_dim, c.hidden, c.latent_dim, c.downsample)));
    if (embedded) part_embed = register_module("part_embed", torch::nn::Embedding(tokens, embed_dim));
    mean = register_buffer("mean", torch::zeros({tokens, max_dim}));
    stddev = register_buffer("stddev", torch::ones({tokens, max_dim}));
    valid = register_buffer("valid", torch::zeros({tokens, max_dim}));
  }

  // Appends the part embedding to every frame: [B, P, C, T] -> [B*P, C+E, T].
  torch::Tensor with_embedding(const torch::Tensor& x) {
    const auto b = x.size(0), p = x.size(1), t = x.size(3);
    auto flat = x.reshape({b * p, x.size(2), t});
    if (embed_dim == 0) return flat;
    auto e = part_embed->weight.to(x.dtype()).unsqueeze(0).expand({b, p, embed_dim}).reshape({b * p, embed_dim, 1});
    return torch::cat({flat, e.expand({b * p, embed_dim, t})}, 1);
  }

  PVAEVariant variant;
  int embed_dim = 0;
  std::vector<Codec> codecs;
  torch::nn::Embedding part_embed{nullptr};
  torch::Tensor mean, stddev, valid;
};

}  // namespace detail

PVAE::PVAE(const PVAEConfig& config, const SkeletonSpec& skeleton, const PartPartition& partition)
    : config_(config), skeleton_(skeleton), partition_(partition) {
  config_.validate();
  if (config_.variant == PVAEVariant::FullBody) {
    std::vector<int> all(skeleton_.num_joints());
    std::iota(all.begin(), all.end(), 0);
    token_sets_ = {all};
  } else {
    token_sets_ = partition_.joints_of;
  }
  for (const auto& set : token_sets_) max_dim_ = std::max(max_dim_, feature_dim(static_cast<int>(set.size())));
  torch::manual_seed(derive_seed(config_.seed, "pvae-init"));
  net_ = std::make_shared<detail::PVAENetImpl>(config_, tokens_per_frame(), max_dim_);
  for (int p = 0; p < tokens_per_frame(); ++p)
    net_->valid[p].narrow(0, 0, feature_dim(static_cast<int>(token_sets_[p].size()))).fill_(1.0);
}

torch::nn::Module& PVAE::module() { return *net_; }
const torch::nn::Module& PVAE::module() const { return *net_; }
const torch::Tensor& PVAE::valid_dims() const { return net_->valid; }

torch::Tensor PVAE::dim_weights() const {
  auto w = net_->valid.clone();
  w.narrow(1, 0, 3).mul_(config_.root_weight);
  return w;
}

std::int64_t PVAE::codec_parameter_count() const {
  std::int64_t n = 0;
  for (const auto& c : net_->codecs) n += nn::parameter_count(*c);
  return n;
}

void PVAE::zero_part_embeddings() {
  if (!net_->part_embed) return;
  torch::NoGradGuard guard;
  net_->part_embed->weight.zero_();
}

void PVAE::set_normalization(const torch::Tensor& mean, const torch::Tensor& stddev) {
  torch::NoGradGuard guard;
  net_->mean.copy_(mean);
  net_->stddev.copy_(stddev);
}

torch::Tensor PVAE::to_tensor(const std::vector<PartFeatureSequence>& features) const {
  if (static_cast<int>(features.size()) != tokens_per_frame())
    fail_data("expected " + std::to_string(tokens_per_frame()) + " feature sequences, got " +
              std::to_string(features.size()));
  const int frames = features.front().frames;
  auto out = torch::zeros({tokens_per_frame(), frames, max_dim_});
  for (int p = 0; p < tokens_per_frame(); ++p) {
    const auto& f = features[p];
    if (f.frames != frames || f.dim != feature_dim(static_cast<int>(token_sets_[p].size())))
      fail_data("feature sequence " + std::to_string(p) + " has inconsistent shape");
    for (double v : f.values)
      if (!std::isfinite(v)) fail_data("non-finite feature value");
    auto raw = torch::from_blob(const_cast<double*>(f.values.data()), {frames, f.dim}, torch::kFloat64)
                   .to(torch::kFloat32);
    out[p].narrow(1, 0, f.dim).copy_((raw - net_->mean[p].narrow(0, 0, f.dim)) / net_->stddev[p].narrow(0, 0, f.dim));
  }
  return out;
}

std::vector<PartFeatureSequence> PVAE::from_tensor(const torch::Tensor& x) const {
  std::vector<PartFeatureSequence> out;
  const auto xd = x.detach().to(torch::kFloat32);
  for (int p = 0; p < tokens_per_frame(); ++p) {
    const int dim = feature_dim(static_cast<int>(token_sets_[p].size()));
    auto raw = (xd[p].narrow(1, 0, dim) * net_->stddev[p].narrow(0, 0, dim) + net_->mean[p].narrow(0, 0, dim))
                   .to(torch::kFloat64)
                   .contiguous();
    PartFeatureSequence f;
    f.part_id = p;
    f.frames = static_cast<int>(x.size(1));
    f.dim = dim;
    f.values.assign(raw.data_ptr<double>(), raw.data_ptr<double>() + raw.numel());
    out.push_back(std::move(f));
  }
  return out;
}

Posterior PVAE::encode_batch(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != tokens_per_frame() || x.size(3) != max_dim_)
    fail_data("encode_batch expects [B, " + std::to_string(tokens_per_frame()) + ", T, " + std::to_string(max_dim_) +
              "]");
  const int f = config_.downsample;
  const auto windows = x.size(2) / f;
  if (windows < 1) fail_data("sequence shorter than the downsampling factor");
  const auto b = x.size(0), p = x.size(1);
  auto xt = x.narrow(2, 0, windows * f).transpose(2, 3);  // [B, P, D, T]
  torch::Tensor mu, logvar;
  if (net_->variant == PVAEVariant::PerPart) {
    std::vector<torch::Tensor> mus, lvs;
    for (int k = 0; k < p; ++k) {
      auto [m, l] = net_->codecs[k]->encode(xt.select(1, k));
      mus.push_back(m);
      lvs.push_back(l);
    }
    mu = torch::stack(mus, 1);
    logvar = torch::stack(lvs, 1);
  } else {
    auto [m, l] = net_->codecs[0]->encode(net_->with_embedding(xt));
    mu = m.reshape({b, p, m.size(1), m.size(2)});
    logvar = l.reshape({b, p, l.size(1), l.size(2)});
  }
  return {mu.transpose(2, 3), logvar.transpose(2, 3)};
}

torch::Tensor PVAE::decode_batch(const torch::Tensor& z) const {
  if (z.dim() != 4 || z.size(1) != tokens_per_frame() || z.size(3) != config_.latent_dim)
    fail_data("decode_batch expects [B, " + std::to_string(tokens_per_frame()) + ", T', " +
              std::to_string(config_.latent_dim) + "]");
  const auto b = z.size(0), p = z.size(1);
  auto zt = z.transpose(2, 3);
  torch::Tensor out;
  if (net_->variant == PVAEVariant::PerPart) {
    std::vector<torch::Tensor> parts;
    for (int k = 0; k < p; ++k) parts.push_back(net_->codecs[k]->decode(zt.select(1, k)));
    out = torch::stack(parts, 1);
  } else {
    auto y = net_->codecs[0]->decode(net_->with_embedding(zt));
    out = y.reshape({b, p, y.size(1), y.size(2)});
  }
  return out.transpose(2, 3);
}

Posterior PVAE::encode(const PartFeatureSequence& features, int token_set) const {
  if (token_set < 0 || token_set >= tokens_per_frame()) fail_data("token set out of range");
  if (features.frames < config_.downsample) fail_data("encode needs at least f feature frames");
  std::vector<PartFeatureSequence> all(tokens_per_frame());
  for (int p = 0; p < tokens_per_frame(); ++p) {
    all[p].frames = features.frames;
    all[p].dim = feature_dim(static_cast<int>(token_sets_[p].size()));
    all[p].values.assign(static_cast<std::size_t>(all[p].frames) * all[p].dim, 0.0);
  }
  all[token_set] = features;
  torch::NoGradGuard guard;
  const auto post = encode_batch(to_tensor(all).unsqueeze(0));
  return {post.mu[0][token_set], post.logvar[0][token_set]};
}

PartFeatureSequence PVAE::decode(const torch::Tensor& z, int token_set) const {
  if (token_set < 0 || token_set >= tokens_per_frame()) fail_data("token set out of range");
  if (z.dim() != 2 || z.size(1) != config_.latent_dim)
    fail_data("decode expects latents of dimension " + std::to_string(config_.latent_dim));
  torch::NoGradGuard guard;
  auto batch = torch::zeros({1, tokens_per_frame(), z.size(0), config_.latent_dim});
  batch[0][token_set].copy_(z);
  return from_tensor(decode_batch(batch)[0])[token_set];
}

void PVAE::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  nlohmann::json side = extra;
  side["kind"] = "pvae";
  side["config"] = to_json(config_);
  side["skeleton"] = skeleton_to_json(skeleton_, partition_);
  nn::save_checkpoint(*net_, path, side);
}

PVAE PVAE::load(const std::filesystem::path& path) {
  const auto side = nn::read_sidecar(path);
  if (side.value("kind", "") != "pvae") fail_data(path.string() + " is not a P-VAE checkpoint");
  const auto [skel, part] = skeleton_from_json(side.at("skeleton"));
  PVAE model(pvae_config_from_json(side.at("config")), skel, part);
  nn::load_checkpoint(*model.net_, path);
  return model;
}

torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& logvar, Rng& rng) {
  const auto eps = at::randn(mu.sizes(), rng.torch(), mu.options());
  return mu + torch::exp(0.5 * logvar) * eps;
}

torch::Tensor gaussian_kl(const torch::Tensor& mu, const torch::Tensor& logvar) {
  return 0.5 * (mu.square() + logvar.exp() - 1.0 - logvar).sum(-1);
}

torch::Tensor window_credible(const torch::Tensor& credible, int f) {
  const auto windows = credible.size(2) / f;
  auto c = credible.narrow(2, 0, windows * f);
  if (f == 1) return c;
  return c.reshape({c.size(0), c.size(1), windows, f}).all(3);
}

PVAELoss pvae_loss(const PVAE& model, const torch::Tensor& x, const torch::Tensor& credible, double kl_weight,
                   Rng& rng) {
  if (credible.dim() != 3 || credible.size(0) != x.size(0) || credible.size(1) != x.size(1) ||
      credible.size(2) != x.size(2))
    fail_data("credibility mask does not match the feature batch");
  const int f = model.config().downsample;
  const auto cw = window_credible(credible, f);
  const auto cells = cw.sum().item<std::int64_t>();
  if (cells == 0) fail_data("no credible cells in batch");
  const auto frames = cw.size(2) * f;
  const auto xs = x.narrow(2, 0, frames);
  const auto frame_ok = credible.narrow(2, 0, frames).unsqueeze(-1);
  const auto x_in = torch::where(frame_ok, xs, torch::zeros({}, xs.options()));

  const auto post = model.encode_batch(x_in);
  const auto z = reparameterize(post.mu, post.logvar, rng);
  const auto xhat = model.decode_batch(z);

  const auto loss_frames = (f > 1 ? cw.repeat_interleave(f, 2) : cw).unsqueeze(-1);
  const auto w = model.dim_weights().to(xs.dtype()).unsqueeze(0).unsqueeze(2);
  const auto m = torch::logical_and(loss_frames, w > 0);
  const auto sq = torch::where(m, (xhat - x_in).square() * w, torch::zeros({}, xs.options()));
  const auto recon = sq.sum() / static_cast<double>(cells * f);

  const auto kl_cell = gaussian_kl(post.mu, post.logvar);
  const auto kl = torch::where(cw, kl_cell, torch::zeros({}, xs.options())).sum() / static_cast<double>(cells);
  return {recon + kl_weight * kl, recon, kl, cells};
}

torch::Tensor feature_credibility(const MotionRecord& record, const PVAE& model, bool credible_only) {
  const int n = record.frames() - 1;
  auto out = torch::ones({model.tokens_per_frame(), n}, torch::kBool);
  if (!credible_only) return out;
  const auto mask = credibility_of(record, model.partition(), model.config().tau).credible;
  auto acc = out.accessor<bool, 2>();
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < kNumParts; ++p) {
      const bool ok = mask(i, p) && mask(i + 1, p);
      if (model.tokens_per_frame() == 1) {
        acc[0][i] = acc[0][i] && ok;
      } else {
        acc[p][i] = ok;
      }
    }
  return out;
}

namespace {

struct Prepared {
  torch::Tensor x;         // [P, T, D] normalized
  torch::Tensor credible;  // [P, T]
};

// Mean/stddev per token set and feature dim over credible frames.
std::pair<torch::Tensor, torch::Tensor> feature_stats(const std::vector<std::vector<PartFeatureSequence>>& feats,
                                                      const std::vector<torch::Tensor>& cred, int tokens,
                                                      int max_dim) {
  auto sum = torch::zeros({tokens, max_dim}, torch::kFloat64);
  auto sq = torch::zeros({tokens, max_dim}, torch::kFloat64);
  auto count = torch::zeros({tokens}, torch::kFloat64);
  for (std::size_t r = 0; r < feats.size(); ++r)
    for (int p = 0; p < tokens; ++p) {
      const auto& f = feats[r][p];
      auto raw = torch::from_blob(const_cast<double*>(f.values.data()), {f.frames, f.dim}, torch::kFloat64);
      auto keep = cred[r][p].to(torch::kFloat64).unsqueeze(1);
      sum[p].narrow(0, 0, f.dim) += (raw * keep).sum(0);
      sq[p].narrow(0, 0, f.dim) += (raw.square() * keep).sum(0);
      count[p] += keep.sum();
    }
  if ((count == 0).any().item<bool>()) fail_data("a token set has no credible frames in the training split");
  auto mean = sum / count.unsqueeze(1);
  auto var = (sq / count.unsqueeze(1) - mean.square()).clamp_min(0.0);
  auto stddev = var.sqrt().clamp_min(1e-3);
  return {mean.to(torch::kFloat32), stddev.to(torch::kFloat32)};
}

double eval_recon(const PVAE& model, const std::vector<Prepared>& data, const std::vector<std::size_t>& idx) {
  torch::NoGradGuard guard;
  const int f = model.config().downsample;
  const auto w = model.dim_weights().unsqueeze(1);
  double total = 0.0, weight = 0.0;
  for (auto r : idx) {
    const auto& d = data[r];
    const auto frames = (d.x.size(1) / f) * f;
    auto x = d.x.narrow(1, 0, frames);
    auto c = d.credible.narrow(1, 0, frames);
    auto x_in = torch::where(c.unsqueeze(-1), x, torch::zeros({}));
    auto post = model.encode_batch(x_in.unsqueeze(0));
    auto xhat = model.decode_batch(post.mu)[0];
    auto cw = window_credible(c.unsqueeze(0), f)[0];
    auto m = torch::logical_and((f > 1 ? cw.repeat_interleave(f, 1) : cw).unsqueeze(-1), w > 0);
    total += torch::where(m, (xhat - x_in).square() * w, torch::zeros({})).sum().item<double>();
    weight += cw.sum().item<double>() * f;
  }
  return weight > 0 ? total / weight : std::nan("");
}

}  // namespace

PVAETrainResult train_pvae(const std::vector<MotionRecord>& corpus, const SkeletonSpec& skeleton,
                           const PartPartition& partition, const PVAEConfig& config) {
  if (corpus.empty()) fail_data("train_pvae needs a nonempty corpus");
  PVAE model(config, skeleton, partition);
  const int f = config.downsample;
  const int tokens = model.tokens_per_frame();

  std::vector<std::vector<PartFeatureSequence>> feats;
  std::vector<torch::Tensor> cred;
  for (const auto& r : corpus) {
    feats.push_back(encode_features(r, skeleton, model.token_sets()));
    cred.push_back(feature_credibility(r, model, config.credible_only));
  }

  Rng rng(derive_seed(config.seed, "pvae-train"));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::size_t n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * corpus.size()));
  if (corpus.size() < 10) n_val = 0;
  std::vector<std::size_t> val(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train(order.begin() + n_val, order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());

  {
    std::vector<std::vector<PartFeatureSequence>> tf;
    std::vector<torch::Tensor> tc;
    for (auto r : train) {
      tf.push_back(feats[r]);
      tc.push_back(cred[r]);
    }
    auto [mean, stddev] = feature_stats(tf, tc, tokens, model.max_dim());
    model.set_normalization(mean, stddev);
  }

  std::vector<Prepared> data;
  int shortest = 1 << 30;
  for (std::size_t r = 0; r < corpus.size(); ++r) {
    data.push_back({model.to_tensor(feats[r]), cred[r]});
    shortest = std::min(shortest, feats[r].front().frames);
  }
  for (auto r : train) shortest = std::min(shortest, static_cast<int>(data[r].x.size(1)));
  const int crop = (std::min(config.crop_frames, shortest) / f) * f;
  if (crop < f) fail_data("training sequences are shorter than the downsampling factor");

  torch::optim::AdamW opt(model.module().parameters(), torch::optim::AdamWOptions(config.learning_rate).weight_decay(0.0));
  PVAETrainResult result{model, {}, 0};
  double best = std::numeric_limits<double>::infinity();
  std::vector<torch::Tensor> best_state = nn::snapshot(model.module());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double progress = static_cast<double>(epoch - 1) / std::max(1, config.epochs - 1);
    const double lr = config.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(M_PI * progress)));
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

    model.module().train();
    std::shuffle(train.begin(), train.end(), rng.engine());
    double recon_sum = 0.0, kl_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < train.size(); start += config.batch_size) {
      const std::size_t end = std::min(train.size(), start + config.batch_size);
      std::vector<torch::Tensor> xs, cs;
      for (std::size_t k = start; k < end; ++k) {
        const auto& d = data[train[k]];
        const auto off = rng.integer(0, d.x.size(1) - crop);
        xs.push_back(d.x.narrow(1, off, crop));
        cs.push_back(d.credible.narrow(1, off, crop));
      }
      const auto x = torch::stack(xs), c = torch::stack(cs);
      if (window_credible(c, f).sum().item<std::int64_t>() == 0) continue;
      auto loss = pvae_loss(model, x, c, config.kl_weight, rng);
      nn::check_finite(loss.total.item<double>(), "P-VAE loss at epoch " + std::to_string(epoch));
      opt.zero_grad();
      loss.total.backward();
      torch::nn::utils::clip_grad_norm_(model.module().parameters(), 100.0);
      opt.step();
      recon_sum += loss.recon.item<double>();
      kl_sum += loss.kl.item<double>();
      ++batches;
    }
    model.module().eval();
    PVAEEpoch entry{epoch, batches ? recon_sum / batches : std::nan(""), batches ? kl_sum / batches : std::nan(""),
                    0.0};
    entry.val_recon = val.empty() ? eval_recon(model, data, train) : eval_recon(model, data, val);
    nn::check_finite(entry.val_recon, "P-VAE validation loss at epoch " + std::to_string(epoch));
    result.log.push_back(entry);
    if (entry.val_recon < best) {
      best = entry.val_recon;
      best_state = nn::snapshot(model.module());
      result.best_epoch = epoch;
    }
  }
  nn::restore(model.module(), best_state);
  result.model = model;
  return result;
}

EncodedRecord encode_record(const PVAE& model, const MotionRecord& record, bool credible_only) {
  torch::NoGradGuard guard;
  const int f = model.config().downsample;
  const auto feats = encode_features(record, model.skeleton(), model.token_sets());
  auto x = model.to_tensor(feats);
  auto c = feature_credibility(record, model, credible_only);
  const auto frames = (x.size(1) / f) * f;
  if (frames < f) fail_data("record " + record.id + " is shorter than the downsampling factor");
  x = x.narrow(1, 0, frames);
  c = c.narrow(1, 0, frames);
  const auto x_in = torch::where(c.unsqueeze(-1), x, torch::zeros({}));
  const auto post = model.encode_batch(x_in.unsqueeze(0));
  return {post.mu[0].transpose(0, 1).contiguous(), window_credible(c.unsqueeze(0), f)[0].transpose(0, 1).contiguous(),
          root_anchor(record, model.skeleton())};
}

Positions decode_latents(const PVAE& model, const torch::Tensor& latents, const RootAnchor& anchor) {
  if (latents.dim() != 3 || latents.size(1) != model.tokens_per_frame() || latents.size(2) != model.latent_dim())
    fail_data("latent grid must be [N', " + std::to_string(model.tokens_per_frame()) + ", " +
              std::to_string(model.latent_dim()) + "]");
  torch::NoGradGuard guard;
  const auto x = model.decode_batch(latents.to(torch::kFloat32).transpose(0, 1).unsqueeze(0))[0];
  return decode_features(model.from_tensor(x), model.skeleton(), model.token_sets(), anchor);
}

Positions reconstruct(const PVAE& model, const MotionRecord& record) {
  const auto enc = encode_record(model, record, false);
  return decode_latents(model, enc.latents, enc.anchor);
}

}  // namespace ropar
