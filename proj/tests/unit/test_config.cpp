#include "testing.hpp"

#include <nlohmann/json.hpp>

#include "ropar/config.hpp"

using namespace ropar;

namespace {

std::string error_of(const std::string& ini, const std::vector<std::string>& overrides = {}) {
  try {
    parse_run_config(ini, overrides);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config parsing") {
  const auto c = parse_run_config(
      "[run]\nseed = 7\nroot = out/x\n"
      "[synth]\nsize = 40\nlength_min = 65\nlength_max = 65\n"
      "[curate]\ntau = 0.4\ncutoff_hz = 4\nfilter = dct\n"
      "[vae]\ndownsample = 4\nvariant = per_part\n"
      "[gen]\nhead = regression\nwindow = 16\nmax_frames = 16\n"
      "[eval]\nframes = 64\n"
      "[sweep]\nproportions = 1.0, 0.5\nvariants = full\n");
  CHECK(c.seed == 7);
  CHECK(c.root == "out/x");
  CHECK(c.synth.size == 40);
  CHECK(c.tau == 0.4);
  CHECK(c.filter == SmoothingFilter::DctProjection);
  CHECK(c.vae.downsample == 4);
  CHECK(c.vae.variant == PVAEVariant::PerPart);
  CHECK(c.gen.head == HeadKind::Regression);
  CHECK(c.proportions == std::vector<double>{1.0, 0.5});
  CHECK(c.variants == std::vector<std::string>{"full"});

  const auto o = parse_run_config("[run]\nseed = 7\n[synth]\nlength_min=65\nlength_max=65\n",
                                  {"run.seed=9", "vae.kl_weight = 0"});
  CHECK(o.seed == 9);
  CHECK(o.vae.kl_weight == 0.0);
}

TEST_CASE("config errors name the key") {
  CHECK(error_of("[vae]\nlatnet_dim = 4\n").find("vae.latnet_dim") != std::string::npos);
  CHECK(error_of("[video]\nfps = 4\n").find("video.fps") != std::string::npos);
  CHECK(error_of("", {"gen.bogus=1"}).find("gen.bogus") != std::string::npos);
  CHECK(error_of("[gen]\nT = ten\n").find("gen.T") != std::string::npos);
  CHECK(error_of("[run]\nseed = -1\n").find("run.seed") != std::string::npos);
  CHECK(error_of("[gen]\nhead = lstm\n").find("gen.head") != std::string::npos);
  CHECK(!error_of("[curate]\ntau = 1.5\n").empty());
  CHECK(!error_of("", {"noequals"}).empty());
  CHECK(!error_of("seed = 1\n").empty());
}

TEST_CASE("config canonical form") {
  const auto a = parse_run_config("[run]\nseed=3\n[synth]\nlength_min = 65\nlength_max = 65\n");
  const auto b = parse_run_config("[synth]\nlength_max=65\nlength_min=65\n[run]\nseed = 3\n");
  CHECK(a.to_json() == b.to_json());
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  const auto c = parse_run_config("[run]\nseed=4\n[synth]\nlength_min = 65\nlength_max = 65\n");
  CHECK(a.hash() != c.hash());

  // The dump parses back to the same configuration.
  const auto dump = a.to_json();
  std::string ini;
  for (const auto& [section, body] : dump.items()) {
    ini += "[" + section + "]\n";
    for (const auto& [key, value] : body.items()) ini += key + " = " + value.get<std::string>() + "\n";
  }
  CHECK(parse_run_config(ini).hash() == a.hash());
}

TEST_CASE("stage seeds") {
  RunConfig c;
  c.seed = 11;
  const auto s = with_stage_seeds(c);
  CHECK(s.synth.seed == derive_seed(11, "corpus"));
  CHECK(s.vae.seed == derive_seed(11, "vae"));
  CHECK(s.gen.seed == derive_seed(11, "gen"));
  CHECK(s.eval.seed == derive_seed(11, "eval"));
  CHECK(s.vae.seed != s.gen.seed);
  c.tau = 0.3;
  CHECK(experiment_config(c).vae.tau == 0.3);
  CHECK(experiment_config(c).corpus.seed == s.synth.seed);
}
