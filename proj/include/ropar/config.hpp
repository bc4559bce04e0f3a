#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ropar/credibility.hpp"
#include "ropar/eval.hpp"
#include "ropar/pvae.hpp"
#include "ropar/ropar.hpp"
#include "ropar/synthdata.hpp"

namespace ropar {

/// Every setting of a pipeline run. Stage seeds are derived from `seed`
/// through the named substreams corpus, vae, gen and eval.
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path root = "runs/demo";
  // Artifact directories, relative to root.
  std::string corpus_dir = "corpus";
  std::string checkpoint_dir = "checkpoints";
  std::string report_dir = "reports";

  CorpusConfig synth = [] {
    CorpusConfig c;
    c.length_min = c.length_max = 65;  // 64 feature frames
    return c;
  }();
  double tau = kDefaultTau;
  double cutoff_hz = 0.0;  // 0 keeps the motion unsmoothed
  SmoothingFilter filter = SmoothingFilter::Butterworth;

  PVAEConfig vae;
  GenConfig gen;
  EvalConfig eval;
  std::size_t eval_corpus_size = 500;
  std::size_t test_size = 100;
  EvalRequest request;

  std::vector<double> proportions{1.0, 0.6, 0.3};
  std::vector<std::string> variants{"full", "no_part_decomposition", "no_shared_params", "no_diffusion_head"};

  void validate() const;
  /// Canonical section/key/value dump, stable across runs.
  nlohmann::json to_json() const;
  /// Hash of the dump without run.root, so relocated runs hash alike.
  std::string hash() const;
};

/// Parses INI text; unknown sections or keys are configuration errors.
/// Overrides have the form "section.key=value" and win over the file.
RunConfig parse_run_config(const std::string& ini, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Applies the seed substreams to the stage configs.
RunConfig with_stage_seeds(RunConfig config);

ExperimentConfig experiment_config(const RunConfig& config);

}  // namespace ropar
