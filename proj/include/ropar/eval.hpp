#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "ropar/common.hpp"
#include "ropar/motion.hpp"
#include "ropar/pvae.hpp"
#include "ropar/ropar.hpp"
#include "ropar/synthdata.hpp"

namespace ropar {

/// Mean Euclidean distance over frames and joints.
double mpjpe(const Positions& pred, const Positions& gt);

/// Frechet distance between Gaussian fits of two sample sets (rows are samples).
/// Each set needs at least dim + 1 rows.
double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct RPrecision {
  double r1 = 0.0;
  double r2 = 0.0;
  double r3 = 0.0;
  std::int64_t batches = 0;
};

/// Each round shuffles the pairs and splits them into batches of `batch_size`;
/// within a batch every motion ranks all batch texts by Euclidean distance.
/// The ground truth only loses rank to strictly closer distractors.
RPrecision r_precision(const Eigen::MatrixXd& motion, const Eigen::MatrixXd& text, Rng& rng, int batch_size = 32,
                       int rounds = 1);

/// Mean distance between paired rows.
double mm_distance(const Eigen::MatrixXd& motion, const Eigen::MatrixXd& text);

struct EvalConfig {
  int embed_dim = 32;
  int hidden = 128;
  int epochs = 40;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int crop_frames = 48;  // descriptor frames per training crop
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};
nlohmann::json to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const nlohmann::json& j);

namespace detail {
struct DualEncoderNetImpl;
}

/// Contrastive text/motion retrieval model; both outputs are unit vectors.
class DualEncoder {
 public:
  DualEncoder(const EvalConfig& config, const SkeletonSpec& skeleton, TextVocab vocab);

  const EvalConfig& config() const { return config_; }
  const TextVocab& vocab() const { return vocab_; }
  const SkeletonSpec& skeleton() const { return skeleton_; }

  /// desc: [B, T, D] raw body descriptors -> [B, e].
  torch::Tensor embed_descriptors(const torch::Tensor& desc) const;
  torch::Tensor embed_prompts(const std::vector<std::string>& prompts) const;
  torch::Tensor logit_scale() const;

  Eigen::MatrixXd encode_motions(const std::vector<MotionRecord>& records) const;
  Eigen::MatrixXd encode_texts(const std::vector<std::string>& prompts) const;

  void set_descriptor_stats(const torch::Tensor& mean, const torch::Tensor& stddev);
  torch::nn::Module& module();
  const torch::nn::Module& module() const;
  std::string checksum() const;

  void save(const std::filesystem::path& path, const nlohmann::json& extra) const;
  static DualEncoder load(const std::filesystem::path& path, const SkeletonSpec& skeleton);

 private:
  EvalConfig config_;
  SkeletonSpec skeleton_;
  TextVocab vocab_;
  std::shared_ptr<detail::DualEncoderNetImpl> net_;
};

/// [T, D] descriptor tensor of one record.
torch::Tensor descriptor_tensor(const MotionRecord& record, const SkeletonSpec& skeleton);

struct EvalTrainResult {
  DualEncoder model;
  std::vector<double> loss_log;
  RPrecision held_out;
  std::size_t held_out_pairs = 0;
};

EvalTrainResult train_evaluator(const std::vector<MotionRecord>& corpus, const SkeletonSpec& skeleton,
                                const EvalConfig& config);

struct MetricReport {
  double fid = 0.0;
  RPrecision r;
  double mm_distance = 0.0;
  std::optional<double> mpjpe;
  std::size_t generated = 0;
  std::size_t real = 0;
  std::string evaluator_checksum;
  std::string generator_checksum;
  std::uint64_t seed = 0;
};
nlohmann::json to_json(const MetricReport& m);

struct EvalRequest {
  int samples_per_prompt = 2;
  int frames = 64;
  int decode_steps = 8;
  int rounds = 20;  // r_precision rounds
  std::uint64_t seed = 0;
};
nlohmann::json to_json(const EvalRequest& r);

/// Real records are cropped to `frames` rows so both sets have equal length.
std::vector<MotionRecord> crop_records(const std::vector<MotionRecord>& records, int frames);

/// Metrics of `generated` (paired with `prompts`) against `real`.
MetricReport score_motions(const DualEncoder& evaluator, const std::vector<MotionRecord>& generated,
                           const std::vector<std::string>& prompts, const std::vector<MotionRecord>& real, Rng& rng,
                           int rounds);

/// Samples `samples_per_prompt` motions for each test prompt and scores them
/// against the held-out real motions.
MetricReport evaluate_model(const Generator& gen, const PVAE& pvae, const DualEncoder& evaluator,
                            const std::vector<MotionRecord>& test, const EvalRequest& request);

/// Round-trip MPJPE of the P-VAE over `test`, in meters.
double reconstruction_mpjpe(const PVAE& pvae, const std::vector<MotionRecord>& test);

/// Everything needed to train and score one model from scratch.
struct ExperimentConfig {
  CorpusConfig corpus;
  std::size_t test_size = 100;
  PVAEConfig vae;
  GenConfig gen;
  EvalRequest eval;
  std::function<void(const std::string&)> progress;
};

/// Clean held-out test motions for an experiment.
std::vector<MotionRecord> make_test_set(const ExperimentConfig& config);

struct SweepRow {
  double proportion = 0.0;
  std::string model;  // "ropar" or "baseline"
  MetricReport report;
};

/// For each credible proportion: synthesize a corpus, train the credibility-aware
/// model and the credibility-unaware baseline, score both.
std::vector<SweepRow> robustness_sweep(const std::vector<double>& proportions, const ExperimentConfig& config,
                                       const DualEncoder& evaluator);
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
/// Two panels (R@1 and FID against proportion) as an SVG image.
void write_sweep_plot(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

struct AblationRow {
  std::string variant;
  std::optional<MetricReport> generation;
  std::optional<double> reconstruction_mpjpe;
};

/// Variants: full, no_part_decomposition, no_shared_params, no_diffusion_head.
/// no_shared_params is a P-VAE ablation and reports reconstruction only.
std::vector<AblationRow> ablate(const std::vector<std::string>& variants, const ExperimentConfig& config,
                                const DualEncoder& evaluator);
nlohmann::json to_json(const std::vector<SweepRow>& rows);
nlohmann::json to_json(const std::vector<AblationRow>& rows);

}  // namespace ropar
