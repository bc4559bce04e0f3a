#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ropar/config.hpp"

namespace ropar {

/// Write-once artifact directory. Files are named `<name>.v<N><ext>`;
/// readers take the highest N, writers claim the next one.
class ArtifactStore {
 public:
  explicit ArtifactStore(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::optional<std::filesystem::path> latest(const std::string& dir, const std::string& name,
                                              const std::string& ext) const;
  /// Like latest() but a missing artifact is a data error naming `producer`.
  std::filesystem::path require(const std::string& dir, const std::string& name, const std::string& ext,
                                const std::string& producer) const;
  std::filesystem::path next(const std::string& dir, const std::string& name, const std::string& ext) const;
  std::string relative(const std::filesystem::path& p) const;

 private:
  std::filesystem::path root_;
};

/// Parses "<name>.v<N><ext>" and returns N, or 0 when the name does not match.
int artifact_version(const std::string& filename, const std::string& name, const std::string& ext);

std::string file_checksum(const std::filesystem::path& path);

/// Library and format versions recorded in every provenance file.
nlohmann::json version_info();

struct StageOutput {
  std::filesystem::path primary;             // the artifact the provenance describes
  std::vector<std::filesystem::path> files;  // every file written, primary included
  nlohmann::json summary;                    // printed by the CLI
};

struct SampleRequest {
  std::string prompt;
  int frames = 64;
  int steps = 8;
  std::optional<std::uint64_t> seed;
};

using Progress = std::function<void(const std::string&)>;

/// Pipeline stages. Each reads the latest upstream artifacts under
/// config.root, writes new versioned files and a `.provenance.json` record.
StageOutput run_synth(const RunConfig& config, const Progress& progress = {});
StageOutput run_curate(const RunConfig& config, const Progress& progress = {});
StageOutput run_train_vae(const RunConfig& config, const Progress& progress = {});
StageOutput run_train_gen(const RunConfig& config, const Progress& progress = {});
StageOutput run_train_eval(const RunConfig& config, const Progress& progress = {});
StageOutput run_sample(const RunConfig& config, const SampleRequest& request, const Progress& progress = {});
StageOutput run_evaluate(const RunConfig& config, const Progress& progress = {});
StageOutput run_sweep(const RunConfig& config, const Progress& progress = {});
StageOutput run_ablate(const RunConfig& config, const Progress& progress = {});

/// Clean corpus the retrieval evaluator is trained on.
std::vector<MotionRecord> evaluator_corpus(const RunConfig& config);

}  // namespace ropar
