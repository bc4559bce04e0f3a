#include "ropar/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

namespace ropar {
namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t") - a + 1);
}

[[noreturn]] void bad_value(const std::string& name, const std::string& value, const std::string& expected) {
  fail_config("invalid value '" + value + "' for " + name + " (expected " + expected + ")");
}

template <typename T>
Field number(const std::string& section, const std::string& key, T& ref) {
  const std::string name = section + "." + key;
  return {section, key,
          [&ref, name](const std::string& v) {
            std::istringstream in(v);
            T parsed{};
            if (!(in >> parsed) || !(in >> std::ws).eof()) bad_value(name, v, "a number");
            if constexpr (std::is_unsigned_v<T>)
              if (trim(v).rfind('-', 0) == 0) bad_value(name, v, "a non-negative integer");
            ref = parsed;
          },
          [&ref] {
            std::ostringstream out;
            out.precision(17);
            out << ref;
            return out.str();
          }};
}

Field flag(const std::string& section, const std::string& key, bool& ref) {
  const std::string name = section + "." + key;
  return {section, key,
          [&ref, name](const std::string& v) {
            if (v == "true" || v == "1" || v == "yes") ref = true;
            else if (v == "false" || v == "0" || v == "no") ref = false;
            else bad_value(name, v, "true or false");
          },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

Field text(const std::string& section, const std::string& key, std::function<void(const std::string&)> set,
           std::function<std::string()> get) {
  return {section, key, std::move(set), std::move(get)};
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  f.push_back(number("run", "seed", c.seed));
  f.push_back(text(
      "run", "root", [&c](const std::string& v) { c.root = v; }, [&c] { return c.root.string(); }));
  for (auto* dir : {&c.corpus_dir, &c.checkpoint_dir, &c.report_dir}) {
    const std::string key = dir == &c.corpus_dir ? "corpus" : dir == &c.checkpoint_dir ? "checkpoints" : "reports";
    f.push_back(text(
        "paths", key,
        [dir, key](const std::string& v) {
          if (v.empty() || std::filesystem::path(v).is_absolute()) bad_value("paths." + key, v, "a relative path");
          *dir = v;
        },
        [dir] { return *dir; }));
  }

  f.push_back(number("synth", "size", c.synth.size));
  f.push_back(number("synth", "length_min", c.synth.length_min));
  f.push_back(number("synth", "length_max", c.synth.length_max));
  f.push_back(number("synth", "fps", c.synth.fps));
  f.push_back(flag("synth", "noisy", c.synth.noisy));
  f.push_back(text(
      "synth", "target",
      [&c](const std::string& v) {
        if (v == "full_body") c.synth.noise.target = NoiseTarget::FullBodyFraction;
        else if (v == "credible") c.synth.noise.target = NoiseTarget::CredibleFraction;
        else bad_value("synth.target", v, "full_body or credible");
      },
      [&c] { return std::string(c.synth.noise.target == NoiseTarget::FullBodyFraction ? "full_body" : "credible"); }));
  f.push_back(number("synth", "full_body_fraction", c.synth.noise.target_full_body_fraction));
  f.push_back(number("synth", "credible_fraction", c.synth.noise.target_credible_fraction));
  f.push_back(number("synth", "sequence_probability", c.synth.noise.sequence_probability));

  f.push_back(number("curate", "tau", c.tau));
  f.push_back(number("curate", "cutoff_hz", c.cutoff_hz));
  f.push_back(text(
      "curate", "filter",
      [&c](const std::string& v) {
        if (v == "butterworth") c.filter = SmoothingFilter::Butterworth;
        else if (v == "dct") c.filter = SmoothingFilter::DctProjection;
        else bad_value("curate.filter", v, "butterworth or dct");
      },
      [&c] { return std::string(c.filter == SmoothingFilter::Butterworth ? "butterworth" : "dct"); }));

  auto& v = c.vae;
  f.push_back(number("vae", "latent_dim", v.latent_dim));
  f.push_back(number("vae", "hidden", v.hidden));
  f.push_back(number("vae", "part_embed_dim", v.part_embed_dim));
  f.push_back(number("vae", "downsample", v.downsample));
  f.push_back(number("vae", "kl_weight", v.kl_weight));
  f.push_back(number("vae", "learning_rate", v.learning_rate));
  f.push_back(number("vae", "epochs", v.epochs));
  f.push_back(number("vae", "batch_size", v.batch_size));
  f.push_back(number("vae", "crop_frames", v.crop_frames));
  f.push_back(number("vae", "validation_fraction", v.validation_fraction));
  f.push_back(number("vae", "root_weight", v.root_weight));
  f.push_back(flag("vae", "credible_only", v.credible_only));
  f.push_back(text(
      "vae", "variant", [&v](const std::string& s) { v.variant = pvae_variant_from_string(s); },
      [&v] { return to_string(v.variant); }));

  auto& g = c.gen;
  f.push_back(number("gen", "d_model", g.d_model));
  f.push_back(number("gen", "layers", g.layers));
  f.push_back(number("gen", "heads", g.heads));
  f.push_back(number("gen", "ff_mult", g.ff_mult));
  f.push_back(number("gen", "head_width", g.head_width));
  f.push_back(number("gen", "head_layers", g.head_layers));
  f.push_back(number("gen", "T", g.T));
  f.push_back(number("gen", "beta_start", g.beta_start));
  f.push_back(number("gen", "beta_end", g.beta_end));
  f.push_back(number("gen", "alpha_min", g.alpha_min));
  f.push_back(number("gen", "alpha_max", g.alpha_max));
  f.push_back(number("gen", "fixed_alpha", g.fixed_alpha));
  f.push_back(flag("gen", "literal_mask_formula", g.literal_mask_formula));
  f.push_back(number("gen", "max_frames", g.max_frames));
  f.push_back(number("gen", "window", g.window));
  f.push_back(number("gen", "learning_rate", g.learning_rate));
  f.push_back(number("gen", "epochs", g.epochs));
  f.push_back(number("gen", "batch_size", g.batch_size));
  f.push_back(number("gen", "diffusion_reps", g.diffusion_reps));
  f.push_back(flag("gen", "credible_only", g.credible_only));
  f.push_back(text(
      "gen", "head",
      [&g](const std::string& s) {
        if (s == "diffusion") g.head = HeadKind::Diffusion;
        else if (s == "regression") g.head = HeadKind::Regression;
        else bad_value("gen.head", s, "diffusion or regression");
      },
      [&g] { return std::string(g.head == HeadKind::Diffusion ? "diffusion" : "regression"); }));
  f.push_back(number("gen", "decode_steps", g.decode_steps));
  f.push_back(number("gen", "sampling_steps", g.sampling_steps));

  auto& e = c.eval;
  f.push_back(number("eval", "corpus_size", c.eval_corpus_size));
  f.push_back(number("eval", "embed_dim", e.embed_dim));
  f.push_back(number("eval", "hidden", e.hidden));
  f.push_back(number("eval", "epochs", e.epochs));
  f.push_back(number("eval", "batch_size", e.batch_size));
  f.push_back(number("eval", "learning_rate", e.learning_rate));
  f.push_back(number("eval", "crop_frames", e.crop_frames));
  f.push_back(number("eval", "validation_fraction", e.validation_fraction));
  f.push_back(number("eval", "test_size", c.test_size));
  f.push_back(number("eval", "samples_per_prompt", c.request.samples_per_prompt));
  f.push_back(number("eval", "frames", c.request.frames));
  f.push_back(number("eval", "rounds", c.request.rounds));

  f.push_back(text(
      "sweep", "proportions",
      [&c](const std::string& s) {
        c.proportions.clear();
        for (const auto& item : split_list(s)) {
          try {
            std::size_t used = 0;
            c.proportions.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
          } catch (const std::exception&) {
            bad_value("sweep.proportions", s, "a comma-separated list of numbers");
          }
        }
      },
      [&c] {
        std::ostringstream out;
        for (std::size_t k = 0; k < c.proportions.size(); ++k) out << (k ? "," : "") << c.proportions[k];
        return out.str();
      }));
  f.push_back(text(
      "sweep", "variants", [&c](const std::string& s) { c.variants = split_list(s); },
      [&c] {
        std::string out;
        for (std::size_t k = 0; k < c.variants.size(); ++k) out += (k ? "," : "") + c.variants[k];
        return out;
      }));
  return f;
}

void assign(std::vector<Field>& registry, const std::string& section, const std::string& key,
            const std::string& value) {
  for (auto& f : registry)
    if (f.section == section && f.key == key) {
      f.set(trim(value));
      return;
    }
  fail_config("unknown config key '" + section + "." + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  if (synth.size == 0) fail_config("synth.size must be positive");
  if (synth.length_min < 2 || synth.length_max < synth.length_min)
    fail_config("synth lengths must satisfy 2 <= length_min <= length_max");
  if (!(tau > 0.0 && tau < 1.0)) fail_config("curate.tau must be in (0, 1)");
  if (cutoff_hz < 0.0 || (cutoff_hz > 0.0 && cutoff_hz >= synth.fps / 2))
    fail_config("curate.cutoff_hz must be 0 or below the Nyquist frequency");
  vae.validate();
  gen.validate();
  eval.validate();
  if (request.samples_per_prompt < 1 || request.rounds < 1) fail_config("eval sampling settings must be positive");
  if (request.frames % vae.downsample != 0) fail_config("eval.frames must be a multiple of vae.downsample");
  if (request.frames / vae.downsample > gen.max_frames) fail_config("eval.frames exceeds gen.max_frames latent frames");
  if (request.frames >= synth.length_min) fail_config("eval.frames must be shorter than synth.length_min");
  const auto n_val = static_cast<std::size_t>(std::lround(eval.validation_fraction * eval_corpus_size));
  if (n_val < 32 || eval_corpus_size - n_val < static_cast<std::size_t>(eval.batch_size))
    fail_config("eval.corpus_size too small: need 32 held-out pairs and one training batch");
  if (test_size <= static_cast<std::size_t>(eval.embed_dim))
    fail_config("eval.test_size must exceed eval.embed_dim for a full-rank FID covariance");
  for (double q : proportions)
    if (!(q > 0.0 && q <= 1.0)) fail_config("sweep.proportions must lie in (0, 1]");
}

nlohmann::json RunConfig::to_json() const {
  auto copy = *this;
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : fields(copy)) out[f.section][f.key] = f.get();
  return out;
}

std::string RunConfig::hash() const {
  auto j = to_json();
  j["run"].erase("root");
  return hex64(fnv1a(j.dump()));
}

RunConfig parse_run_config(const std::string& ini, const std::vector<std::string>& overrides) {
  RunConfig config;
  auto registry = fields(config);
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(ini);
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail_config(std::string("malformed config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) fail_config("config key '" + section + "' must sit inside a [section]");
    for (const auto& [key, value] : body) assign(registry, section, key, value.data());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      fail_config("override '" + o + "' must look like section.key=value");
    assign(registry, trim(o.substr(0, dot)), trim(o.substr(dot + 1, eq - dot - 1)), o.substr(eq + 1));
  }
  config.validate();
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) fail_config("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), overrides);
}

RunConfig with_stage_seeds(RunConfig config) {
  config.synth.seed = derive_seed(config.seed, "corpus");
  config.synth.noise.seed = derive_seed(config.seed, "corpus-noise");
  config.vae.seed = derive_seed(config.seed, "vae");
  config.vae.tau = config.tau;
  config.gen.seed = derive_seed(config.seed, "gen");
  config.eval.seed = derive_seed(config.seed, "eval");
  config.request.seed = derive_seed(config.seed, "eval-request");
  config.request.decode_steps = config.gen.decode_steps;
  return config;
}

ExperimentConfig experiment_config(const RunConfig& raw) {
  const auto c = with_stage_seeds(raw);
  ExperimentConfig x;
  x.corpus = c.synth;
  x.test_size = c.test_size;
  x.vae = c.vae;
  x.gen = c.gen;
  x.eval = c.request;
  return x;
}

}  // namespace ropar
