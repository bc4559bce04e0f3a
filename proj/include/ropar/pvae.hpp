#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "ropar/common.hpp"
#include "ropar/features.hpp"
#include "ropar/motion.hpp"
#include "ropar/skeleton.hpp"

namespace ropar {

/// shared: one encoder/decoder for all five parts plus a part-embedding table.
/// per_part: five independent encoder/decoders.
/// full_body: a single token per frame covering all joints.
enum class PVAEVariant { Shared, PerPart, FullBody };
std::string to_string(PVAEVariant v);
PVAEVariant pvae_variant_from_string(const std::string& s);

struct PVAEConfig {
  int latent_dim = 16;
  int hidden = 128;
  int part_embed_dim = 8;
  int downsample = 1;  // f
  double kl_weight = 1e-2;
  double learning_rate = 2e-3;
  int epochs = 100;
  int batch_size = 32;
  int crop_frames = 32;  // training window, in feature frames
  double validation_fraction = 0.1;
  double tau = 0.5;
  /// Loss weight of the three root-velocity dims relative to the other dims.
  double root_weight = 10.0;
  /// When false every cell counts as credible (the credibility-unaware baseline).
  bool credible_only = true;
  PVAEVariant variant = PVAEVariant::Shared;
  std::uint64_t seed = 0;

  void validate() const;
};
nlohmann::json to_json(const PVAEConfig& c);
PVAEConfig pvae_config_from_json(const nlohmann::json& j);

struct Posterior {
  torch::Tensor mu;      // [..., d]
  torch::Tensor logvar;  // [..., d], clamped to [-8, 8]
};

namespace detail {
struct PVAENetImpl;
}

/// Trained (or freshly initialized) P-VAE parameters together with the
/// feature normalization statistics they were trained under.
class PVAE {
 public:
  PVAE(const PVAEConfig& config, const SkeletonSpec& skeleton, const PartPartition& partition);

  const PVAEConfig& config() const { return config_; }
  const SkeletonSpec& skeleton() const { return skeleton_; }
  const PartPartition& partition() const { return partition_; }
  /// Joint sets that become tokens: the five parts, or one full-body set.
  const std::vector<std::vector<int>>& token_sets() const { return token_sets_; }
  int tokens_per_frame() const { return static_cast<int>(token_sets_.size()); }
  int max_dim() const { return max_dim_; }
  int latent_dim() const { return config_.latent_dim; }

  /// Normalized, zero-padded features of one record: [P, N-1, D_max].
  torch::Tensor to_tensor(const std::vector<PartFeatureSequence>& features) const;
  std::vector<PartFeatureSequence> from_tensor(const torch::Tensor& x) const;
  void set_normalization(const torch::Tensor& mean, const torch::Tensor& stddev);

  /// x: [B, P, T, D_max] normalized; returns posteriors [B, P, T/f, d].
  Posterior encode_batch(const torch::Tensor& x) const;
  /// z: [B, P, T', d]; returns [B, P, T'*f, D_max] normalized features.
  torch::Tensor decode_batch(const torch::Tensor& z) const;

  /// Single-token-set convenience wrappers on raw (unnormalized) features.
  Posterior encode(const PartFeatureSequence& features, int token_set) const;
  PartFeatureSequence decode(const torch::Tensor& z, int token_set) const;

  /// [P, D_max] mask of the real (non-padding) feature dimensions.
  const torch::Tensor& valid_dims() const;
  /// Per-dim reconstruction weights: valid_dims with root dims scaled by root_weight.
  torch::Tensor dim_weights() const;

  torch::nn::Module& module();
  const torch::nn::Module& module() const;
  /// Encoder/decoder parameters excluding the part-embedding table.
  std::int64_t codec_parameter_count() const;
  /// Zeroes the part-embedding table (diagnostic).
  void zero_part_embeddings();

  void save(const std::filesystem::path& path, const nlohmann::json& extra) const;
  static PVAE load(const std::filesystem::path& path);

 private:
  PVAEConfig config_;
  SkeletonSpec skeleton_;
  PartPartition partition_;
  std::vector<std::vector<int>> token_sets_;
  int max_dim_ = 0;
  std::shared_ptr<detail::PVAENetImpl> net_;
};

/// z = mu + exp(logvar / 2) * eps with eps drawn from `rng`.
torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& logvar, Rng& rng);

/// KL(N(mu, exp(logvar)) || N(0, I)) summed over the last dim.
torch::Tensor gaussian_kl(const torch::Tensor& mu, const torch::Tensor& logvar);

struct PVAELoss {
  torch::Tensor total;
  torch::Tensor recon;
  torch::Tensor kl;
  std::int64_t credible_cells = 0;
};

/// x: [B, P, T, D_max] normalized features; credible: [B, P, T] bool per frame.
/// A window of f frames is credible iff all of its frames are. The
/// reconstruction term is the weighted squared error summed over feature dims
/// and averaged over credible frames; KL is summed over latent dims and
/// averaged over credible windows. Noisy frames are replaced by zeros before
/// encoding so they cannot influence the loss.
PVAELoss pvae_loss(const PVAE& model, const torch::Tensor& x, const torch::Tensor& credible, double kl_weight,
                   Rng& rng);

/// Window-level credibility: [B, P, T] -> [B, P, T/f].
torch::Tensor window_credible(const torch::Tensor& credible, int f);

struct PVAEEpoch {
  int epoch = 0;
  double recon = 0.0;
  double kl = 0.0;
  double val_recon = 0.0;
};

struct PVAETrainResult {
  PVAE model;
  std::vector<PVAEEpoch> log;
  int best_epoch = 0;
};

/// Per-feature-frame credibility of each token set: a feature frame is
/// credible iff its two source frames are credible for every part the token
/// covers. Returns [P, N-1].
torch::Tensor feature_credibility(const MotionRecord& record, const PVAE& model, bool credible_only);

PVAETrainResult train_pvae(const std::vector<MotionRecord>& corpus, const SkeletonSpec& skeleton,
                           const PartPartition& partition, const PVAEConfig& config);

/// Posterior means and window credibility of one record.
struct EncodedRecord {
  torch::Tensor latents;   // [N', P, d]
  torch::Tensor credible;  // [N', P] bool
  RootAnchor anchor;
};
EncodedRecord encode_record(const PVAE& model, const MotionRecord& record, bool credible_only = true);

/// Latents [N', P, d] back to joint positions ([N'*f, J]).
Positions decode_latents(const PVAE& model, const torch::Tensor& latents, const RootAnchor& anchor);

/// Encode with posterior means and decode; rows align with record frames 0..N'*f-1.
Positions reconstruct(const PVAE& model, const MotionRecord& record);

}  // namespace ropar
