#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ropar/credibility.hpp"
#include "ropar/motion.hpp"

namespace ropar {

inline constexpr const char* kGrammarVersion = "ropar-grammar-1";

enum class Locomotion { StandStill, WalkForward, WalkBackward, RunForward, TurnLeft, TurnRight };
enum class Action {
  None,
  WaveLeftArm,
  WaveRightArm,
  RaiseLeftArm,
  RaiseRightArm,
  RaiseBothArms,
  PunchLeftArm,
  PunchRightArm,
  TwistTorso,
  Nod,
  Bow,
  KickLeftLeg,
  KickRightLeg,
  Jump,
  Squat,
};

/// One grammar production: a locomotion mode plus an optional action.
struct MotionProgram {
  Locomotion locomotion = Locomotion::StandStill;
  Action action = Action::None;
  bool operator==(const MotionProgram&) const = default;
};

/// The compositional prompt grammar: every production maps to exactly one
/// prompt string and back.
class PromptGrammar {
 public:
  PromptGrammar();

  const std::vector<MotionProgram>& productions() const { return productions_; }
  const std::vector<std::string>& prompts() const { return prompts_; }
  std::string render(const MotionProgram& program) const;
  /// Throws a data error for text that is not a production.
  MotionProgram parse(const std::string& prompt) const;
  /// Sorted word list of every prompt.
  std::vector<std::string> vocabulary() const;

 private:
  std::vector<MotionProgram> productions_;
  std::vector<std::string> prompts_;
};

const PromptGrammar& default_grammar();

/// Deterministic clean motion for a grammar prompt; all confidences 1.0.
MotionRecord generate_clean(const std::string& prompt, int length, std::uint64_t seed, double fps = 20.0);

/// A measurable quantity tied to one verb of the grammar.
struct PromptCheck {
  std::string statistic;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
};
/// Statistics that the motion must satisfy for its prompt to be truthful.
std::vector<PromptCheck> check_prompt_consistency(const MotionRecord& record);

enum class CorruptionKind { Jitter, Freeze, Drift };

enum class NoiseTarget {
  FullBodyFraction,  // fraction of frames with all five parts credible
  CredibleFraction,  // fraction of (frame, part) cells credible
};

struct NoiseSpec {
  NoiseTarget target = NoiseTarget::FullBodyFraction;
  double target_full_body_fraction = 0.24;
  double target_credible_fraction = 1.0;
  /// Probability that a sequence is corrupted at all.
  double sequence_probability = 1.0;
  /// Relative chance that each part is picked for a corruption window.
  std::array<double, kNumParts> part_weights{0.6, 0.8, 0.8, 1.2, 1.2};
  std::array<double, 3> kind_weights{1.0, 1.0, 1.0};  // jitter, freeze, drift
  double jitter_sigma = 0.04;
  double drift_step = 0.02;
  double confidence_low = 0.3;
  double confidence_floor = 0.05;
  double clean_confidence_min = 0.9;
  int min_window = 8;
  std::uint64_t seed = 0;
};

struct NoisyRecord {
  MotionRecord record;
  BoolArray2 truth;  // frames x 5, 1 = credible
};

NoisyRecord inject_noise(const MotionRecord& record, const NoiseSpec& spec, const PartPartition& partition);

struct CorpusConfig {
  std::size_t size = 100;
  int length_min = 64;
  int length_max = 64;
  double fps = 20.0;
  bool noisy = true;
  NoiseSpec noise;
  std::uint64_t seed = 0;
};

struct Corpus {
  std::vector<MotionRecord> records;
  std::vector<BoolArray2> truth;
  nlohmann::json manifest() const;
  CorpusConfig config;
  double realized_full_body_fraction = 0.0;
  double realized_credible_fraction = 0.0;
};

/// Builds the corpus in memory; record i depends only on (config, i).
Corpus make_corpus(const CorpusConfig& config);
/// Writes `<path>` (JSON Lines), `<path>.manifest.json` and `<path>.truth.jsonl`.
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

nlohmann::json to_json(const NoiseSpec& spec);

}  // namespace ropar
