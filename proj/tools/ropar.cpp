// ropar: command-line driver for the synthetic motion pipeline.
//
//   ropar synth      --config demo.ini
//   ropar curate     --config demo.ini --tau 0.5 --cutoff-hz 6
//   ropar train-vae  --config demo.ini
//   ropar train-gen  --config demo.ini
//   ropar evaluate   --config demo.ini
//   ropar sample     --config demo.ini --prompt "a person walks forward" --length 64

#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ropar/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kConfig = 2, kData = 3, kDivergence = 4 };

int report_error(const std::string& kind, const std::string& message, int code) {
  nlohmann::json j{{"error", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Part-aware text-to-motion pipeline on synthetic data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ropar::version_info().dump());

  std::string config_path;
  std::vector<std::string> overrides;
  std::string root;
  bool quiet = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "INI configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "Override a config value: section.key=value")->allow_extra_args(false);
    sub->add_option("--root", root, "Artifact root directory (overrides run.root)");
    sub->add_flag("-q,--quiet", quiet, "Suppress progress messages");
  };

  struct Stage {
    const char* name;
    const char* help;
    ropar::StageOutput (*run)(const ropar::RunConfig&, const ropar::Progress&);
  };
  const Stage stages[] = {
      {"synth", "Synthesize a labelled motion corpus", ropar::run_synth},
      {"curate", "Smooth the corpus and report credibility statistics", ropar::run_curate},
      {"train-vae", "Train the part-aware VAE", ropar::run_train_vae},
      {"train-gen", "Train the masked generator", ropar::run_train_gen},
      {"train-eval", "Train the retrieval evaluator", ropar::run_train_eval},
      {"evaluate", "Score the latest generator (FID, R-precision, MM-distance, MPJPE)", ropar::run_evaluate},
      {"sweep", "Credible-proportion robustness sweep against the baseline", ropar::run_sweep},
      {"ablate", "Component ablations", ropar::run_ablate},
  };
  std::vector<std::pair<CLI::App*, const Stage*>> subs;
  for (const auto& s : stages) {
    auto* sub = app.add_subcommand(s.name, s.help);
    common(sub);
    subs.emplace_back(sub, &s);
  }

  // curate flags map onto the [curate] section.
  auto* curate = subs[1].first;
  std::optional<double> tau, cutoff;
  curate->add_option("--tau", tau, "Credibility threshold");
  curate->add_option("--cutoff-hz", cutoff, "Low-pass cutoff in Hz (0 disables smoothing)");

  ropar::SampleRequest request;
  std::optional<std::uint64_t> sample_seed;
  auto* sample = app.add_subcommand("sample", "Generate one motion for a prompt");
  common(sample);
  sample->add_option("-p,--prompt", request.prompt, "Text prompt")->required();
  sample->add_option("-n,--length", request.frames, "Output length in frames")->check(CLI::PositiveNumber);
  sample->add_option("-k,--steps", request.steps, "Iterative decoding steps")->check(CLI::PositiveNumber);
  sample->add_option("-s,--seed", sample_seed, "Sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  if (tau) overrides.push_back("curate.tau=" + std::to_string(*tau));
  if (cutoff) overrides.push_back("curate.cutoff_hz=" + std::to_string(*cutoff));
  if (!root.empty()) overrides.push_back("run.root=" + root);
  request.seed = sample_seed;

  const ropar::Progress progress = [&](const std::string& msg) {
    if (!quiet) std::cerr << "[ropar] " << msg << std::endl;
  };

  try {
    const auto config = ropar::load_run_config(config_path, overrides);
    ropar::StageOutput out;
    if (sample->parsed()) {
      out = ropar::run_sample(config, request, progress);
    } else {
      for (const auto& [sub, stage] : subs)
        if (sub->parsed()) out = stage->run(config, progress);
    }
    std::cout << out.summary.dump(2) << '\n';
    return kOk;
  } catch (const ropar::Error& e) {
    switch (e.kind()) {
      case ropar::ErrorKind::Config: return report_error("config", e.what(), kConfig);
      case ropar::ErrorKind::Data: return report_error("data", e.what(), kData);
      case ropar::ErrorKind::Divergence: return report_error("divergence", e.what(), kDivergence);
    }
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), kUnexpected);
  }
  return kUnexpected;
}
