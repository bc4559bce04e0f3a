#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "ropar/common.hpp"
#include "ropar/motion.hpp"
#include "ropar/pvae.hpp"

namespace ropar {

/// Linear-beta DDPM schedule; index 0 is unused so that t runs over 1..T.
/// beta_start/beta_end describe the 1000-step reference schedule and are
/// scaled by 1000/T, so alphabar_T stays near zero for any T.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alphabar;

  static NoiseSchedule linear(int T, double beta_start, double beta_end);
};

/// x_t = sqrt(alphabar_t) z0 + sqrt(1 - alphabar_t) eps. `t` is a long tensor
/// broadcastable against the leading dims of z0, with values in [1, T].
torch::Tensor ddpm_forward(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                           const NoiseSchedule& schedule);
torch::Tensor ddpm_forward(const torch::Tensor& z0, int t, const torch::Tensor& eps, const NoiseSchedule& schedule);

struct MaskPlan {
  torch::Tensor masked;     // [N', P] bool
  torch::Tensor loss_mask;  // [N', P] bool
  double alpha = 0.0;
  double beta = 0.0;
  double credible_probability = 0.0;
  bool ratio_unreachable = false;
};

/// Noisy cells are always masked and never scored; each credible cell is
/// masked independently with p = (alpha - beta) / (1 - beta), clamped to [0, 1].
/// With `literal_formula` the probability is alpha - beta instead.
MaskPlan make_mask_plan(const torch::Tensor& credible, double alpha, Rng& rng, bool literal_formula = false);

/// Cells unmasked at each of the K steps under the cosine count schedule:
/// after step k, floor(M cos(pi k / 2K)) cells remain masked.
std::vector<int> unmask_counts(int cells, int steps);

/// Word-level vocabulary of the prompt grammar; index 0 is the unknown token.
class TextVocab {
 public:
  TextVocab() = default;
  explicit TextVocab(std::vector<std::string> words);
  static TextVocab from_grammar();

  std::vector<std::int64_t> tokenize(const std::string& prompt) const;
  const std::vector<std::string>& words() const { return words_; }
  std::size_t size() const { return words_.size() + 1; }

 private:
  std::vector<std::string> words_;
};

enum class HeadKind { Diffusion, Regression };

struct GenConfig {
  int d_model = 128;
  int layers = 4;
  int heads = 4;
  int ff_mult = 4;
  int head_width = 256;
  int head_layers = 3;
  int T = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double alpha_min = 0.5;
  double alpha_max = 1.0;
  /// Fixed training mask ratio; negative draws alpha uniformly per batch.
  double fixed_alpha = -1.0;
  bool literal_mask_formula = false;
  int max_frames = 64;
  int window = 16;  // latent frames per training grid
  double learning_rate = 4e-4;
  int epochs = 100;
  int batch_size = 32;
  int diffusion_reps = 4;
  /// When false the plan treats every cell as credible (baseline).
  bool credible_only = true;
  HeadKind head = HeadKind::Diffusion;
  int decode_steps = 8;     // K
  int sampling_steps = 100;  // DDPM steps used at inference (respaced when < T)
  std::uint64_t seed = 0;

  void validate() const;
};
nlohmann::json to_json(const GenConfig& c);
GenConfig gen_config_from_json(const nlohmann::json& j);

namespace detail {
struct GeneratorNetImpl;
}

/// Generator parameters: token projection, transformer, mask token, text
/// embedding and the prediction head, plus latent standardization stats.
class Generator {
 public:
  Generator(const GenConfig& config, int latent_dim, int tokens_per_frame, TextVocab vocab);

  const GenConfig& config() const { return config_; }
  const TextVocab& vocab() const { return vocab_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  int latent_dim() const { return latent_dim_; }
  int tokens_per_frame() const { return tokens_; }

  /// Mean of learned word embeddings, projected to d_model: [B, d_model].
  torch::Tensor embed_text(const std::vector<std::string>& prompts) const;
  /// tokens: [B, N', P, d] standardized latents; masked: [B, N', P] bool;
  /// text: [B, d_model]. Returns zhat [B, N', P, d_model].
  torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& masked, const torch::Tensor& text) const;

  /// Diffusion head: predicted noise for x_t at integer steps t given zhat.
  torch::Tensor predict_noise(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& zhat) const;
  /// Regression head: direct latent prediction from zhat.
  torch::Tensor predict_latent(const torch::Tensor& zhat) const;

  void set_latent_stats(const torch::Tensor& mean, const torch::Tensor& stddev);
  torch::Tensor standardize(const torch::Tensor& z) const;
  torch::Tensor unstandardize(const torch::Tensor& z) const;

  torch::nn::Module& module();
  const torch::nn::Module& module() const;
  /// Parameters of the prediction head only (used by head-only training).
  std::vector<torch::Tensor> head_parameters() const;

  void save(const std::filesystem::path& path, const nlohmann::json& extra) const;
  static Generator load(const std::filesystem::path& path);

 private:
  GenConfig config_;
  int latent_dim_;
  int tokens_;
  TextVocab vocab_;
  NoiseSchedule schedule_;
  std::shared_ptr<detail::GeneratorNetImpl> net_;
};

/// Squared error between eps and the head's prediction, averaged over the
/// cells selected by loss_mask (each drawn `reps` times with fresh t, eps).
/// Cells outside loss_mask are never read. Throws when loss_mask is empty.
torch::Tensor diffusion_loss(const Generator& gen, const torch::Tensor& z_targets, const torch::Tensor& zhat,
                             const torch::Tensor& loss_mask, Rng& rng, int reps = 1);

/// eps prediction for rows of x_t at steps t given conditioning rows zhat.
using Denoiser = std::function<torch::Tensor(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& zhat)>;
/// Same loss with an arbitrary denoiser. Loss cells are visited in row-major
/// order, and the selected rows are tiled `reps` times.
torch::Tensor diffusion_loss(const NoiseSchedule& schedule, const Denoiser& denoiser, const torch::Tensor& z_targets,
                             const torch::Tensor& zhat, const torch::Tensor& loss_mask, Rng& rng, int reps = 1);
/// MSE of the regression head over loss_mask cells.
torch::Tensor regression_loss(const Generator& gen, const torch::Tensor& z_targets, const torch::Tensor& zhat,
                              const torch::Tensor& loss_mask);

/// Ancestral sampling for a batch of cells: zhat [M, d_model] -> z [M, d].
/// Uses `steps` evenly respaced timesteps out of T.
torch::Tensor ddpm_sample(const Generator& gen, const torch::Tensor& zhat, Rng& rng, int steps);

/// One training sequence for the generator.
struct GenExample {
  torch::Tensor latents;   // [N', P, d] raw P-VAE means
  torch::Tensor credible;  // [N', P] bool
  std::string prompt;
};

std::vector<GenExample> encode_corpus(const PVAE& pvae, const std::vector<MotionRecord>& corpus, bool credible_only);

struct GenEpoch {
  int epoch = 0;
  double loss = 0.0;
};

struct GenTrainResult {
  Generator model;
  std::vector<GenEpoch> log;
  /// Noisy cells whose latent values reached the transformer input or the loss.
  std::int64_t noisy_reads = 0;
};

GenTrainResult train_generator(const std::vector<GenExample>& data, int latent_dim, int tokens_per_frame,
                               const GenConfig& config);

/// Generates one motion per prompt, all with `frames` output frames.
std::vector<MotionRecord> sample_motions(const Generator& gen, const PVAE& pvae, const std::vector<std::string>& prompts,
                                         int frames, int decode_steps, Rng& rng, double fps = 20.0);
MotionRecord sample_motion(const Generator& gen, const PVAE& pvae, const std::string& prompt, int frames,
                           int decode_steps, Rng& rng, double fps = 20.0);

/// Number of masked cells filled at each step by the most recent
/// sample_motions call on this thread (diagnostic).
const std::vector<int>& last_unmask_trace();

}  // namespace ropar
