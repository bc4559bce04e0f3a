#include "ropar/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <torch/version.h>

#include "ropar/credibility.hpp"
#include "ropar/eval.hpp"
#include "ropar/pvae.hpp"
#include "ropar/ropar.hpp"
#include "ropar/synthdata.hpp"

#ifndef ROPAR_VERSION
#define ROPAR_VERSION "0.0.0"
#endif

namespace ropar {

namespace fs = std::filesystem;

int artifact_version(const std::string& filename, const std::string& name, const std::string& ext) {
  const std::string head = name + ".v";
  if (filename.size() <= head.size() + ext.size() || filename.rfind(head, 0) != 0) return 0;
  if (filename.compare(filename.size() - ext.size(), ext.size(), ext) != 0) return 0;
  const auto digits = filename.substr(head.size(), filename.size() - head.size() - ext.size());
  if (digits.empty() || digits.size() > 6 || digits[0] == '0') return 0;
  for (char ch : digits)
    if (ch < '0' || ch > '9') return 0;
  return std::stoi(digits);
}

std::optional<fs::path> ArtifactStore::latest(const std::string& dir, const std::string& name,
                                              const std::string& ext) const {
  const auto d = root_ / dir;
  if (!fs::is_directory(d)) return std::nullopt;
  int best = 0;
  for (const auto& entry : fs::directory_iterator(d))
    best = std::max(best, artifact_version(entry.path().filename().string(), name, ext));
  if (best == 0) return std::nullopt;
  return d / (name + ".v" + std::to_string(best) + ext);
}

fs::path ArtifactStore::require(const std::string& dir, const std::string& name, const std::string& ext,
                                const std::string& producer) const {
  auto p = latest(dir, name, ext);
  if (!p) fail_data("no " + name + ext + " artifact under " + (root_ / dir).string() + "; run `" + producer + "` first");
  return *p;
}

fs::path ArtifactStore::next(const std::string& dir, const std::string& name, const std::string& ext) const {
  const auto d = root_ / dir;
  fs::create_directories(d);
  int n = 1;
  if (auto p = latest(dir, name, ext)) n = artifact_version(p->filename().string(), name, ext) + 1;
  return d / (name + ".v" + std::to_string(n) + ext);
}

std::string ArtifactStore::relative(const fs::path& p) const {
  return fs::relative(p, root_).generic_string();
}

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

nlohmann::json version_info() {
  return {{"ropar", ROPAR_VERSION}, {"libtorch", TORCH_VERSION}, {"artifact_format", 1}};
}

namespace {

struct Context {
  RunConfig config;  // with stage seeds applied
  ArtifactStore store;
  Progress progress;

  Context(const RunConfig& raw, Progress p) : config(with_stage_seeds(raw)), store(raw.root), progress(std::move(p)) {
    raw.validate();
  }
  void say(const std::string& msg) const {
    if (progress) progress(msg);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (fs::exists(path)) fail_data("refusing to overwrite " + path.string());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_data("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<fs::path> checkpoint_files(const fs::path& p) { return {p, fs::path(p.string() + ".json")}; }

/// Writes `<primary>.provenance.json` describing how every output was made.
void write_provenance(const Context& ctx, const std::string& stage, std::uint64_t stage_seed,
                      const std::vector<fs::path>& inputs, StageOutput& out, nlohmann::json extra = {}) {
  auto config = ctx.config.to_json();
  config["run"].erase("root");
  nlohmann::json prov;
  prov["stage"] = stage;
  prov["config_hash"] = ctx.config.hash();
  prov["config"] = config;
  prov["seed"] = ctx.config.seed;
  prov["stage_seed"] = stage_seed;
  prov["versions"] = version_info();
  auto files = [&](const std::vector<fs::path>& ps) {
    auto arr = nlohmann::json::array();
    for (const auto& p : ps) arr.push_back({{"path", ctx.store.relative(p)}, {"checksum", file_checksum(p)}});
    return arr;
  };
  prov["inputs"] = files(inputs);
  prov["outputs"] = files(out.files);
  if (!extra.is_null()) prov["details"] = std::move(extra);
  const fs::path path = out.primary.string() + ".provenance.json";
  write_json(path, prov);
  out.files.push_back(path);
}

std::vector<fs::path> corpus_files(const fs::path& p) {
  return {p, fs::path(p.string() + ".manifest.json"), fs::path(p.string() + ".truth.jsonl")};
}

fs::path require_curated(const Context& ctx) {
  return ctx.store.require(ctx.config.corpus_dir, "curated", ".jsonl", "ropar curate");
}

void check_pair(const Generator& gen, const PVAE& pvae) {
  if (gen.latent_dim() != pvae.latent_dim() || gen.tokens_per_frame() != pvae.tokens_per_frame())
    fail_data("generator checkpoint does not match the P-VAE (latent " + std::to_string(gen.latent_dim()) + "x" +
              std::to_string(gen.tokens_per_frame()) + " vs " + std::to_string(pvae.latent_dim()) + "x" +
              std::to_string(pvae.tokens_per_frame()) + ")");
}

/// Latest evaluator, or a freshly trained one written as a new artifact.
DualEncoder evaluator_for(const Context& ctx, const RunConfig& raw, std::vector<fs::path>& inputs) {
  const auto [skel, part] = build_default_skeleton();
  auto path = ctx.store.latest(ctx.config.checkpoint_dir, "evaluator", ".bin");
  if (!path) {
    ctx.say("no evaluator checkpoint; training one");
    path = run_train_eval(raw, ctx.progress).primary;
  }
  auto model = DualEncoder::load(*path, skel);
  for (const auto& f : checkpoint_files(*path)) inputs.push_back(f);
  return model;
}

ExperimentConfig experiment_for(const Context& ctx, const RunConfig& raw) {
  auto x = experiment_config(raw);
  x.progress = ctx.progress;
  return x;
}

}  // namespace

std::vector<MotionRecord> evaluator_corpus(const RunConfig& raw) {
  CorpusConfig c = raw.synth;
  c.noisy = false;
  c.size = raw.eval_corpus_size;
  c.seed = derive_seed(raw.seed, "eval-corpus");
  return make_corpus(c).records;
}

StageOutput run_synth(const RunConfig& raw, const Progress& progress) {
  const Context ctx(raw, progress);
  ctx.say("synthesizing " + std::to_string(ctx.config.synth.size) + " sequences");
  const auto corpus = make_corpus(ctx.config.synth);
  StageOutput out;
  out.primary = ctx.store.next(ctx.config.corpus_dir, "corpus", ".jsonl");
  for (const auto& f : corpus_files(out.primary))
    if (fs::exists(f)) fail_data("refusing to overwrite " + f.string());
  write_corpus(corpus, out.primary);
  out.files = corpus_files(out.primary);
  out.summary = corpus.manifest();
  out.summary["path"] = out.primary.string();
  write_provenance(ctx, "synth", ctx.config.synth.seed, {}, out);
  return out;
}

StageOutput run_curate(const RunConfig& raw, const Progress& progress) {
  const Context ctx(raw, progress);
  const auto& c = ctx.config;
  const auto source = ctx.store.require(c.corpus_dir, "corpus", ".jsonl", "ropar synth");
  auto records = read_jsonl(source);
  const auto [skel, part] = build_default_skeleton();
  if (c.cutoff_hz > 0.0) {
    ctx.say("smoothing at " + std::to_string(c.cutoff_hz) + " Hz");
    for (auto& r : records) r = lowpass_smooth(r, c.cutoff_hz, c.synth.fps, c.filter);
  }
  const auto stats = corpus_stats(records, part, c.tau);

  StageOutput out;
  out.primary = ctx.store.next(c.corpus_dir, "curated", ".jsonl");
  if (fs::exists(out.primary)) fail_data("refusing to overwrite " + out.primary.string());
  write_jsonl(out.primary, records);
  const fs::path stats_path = out.primary.string() + ".stats.json";
  write_json(stats_path, to_json(stats, part));
  out.files = {out.primary, stats_path};
  out.summary = to_json(stats, part);
  out.summary["path"] = out.primary.string();
  write_provenance(ctx, "curate", 0, {source}, out);
  return out;
}

StageOutput run_train_vae(const RunConfig& raw, const Progress& progress) {
  const Context ctx(raw, progress);
  const auto& c = ctx.config;
  const auto source = require_curated(ctx);
  const auto records = read_jsonl(source);
  const auto [skel, part] = build_default_skeleton();
  ctx.say("training P-VAE on " + std::to_string(records.size()) + " sequences");
  const auto res = train_pvae(records, skel, part, c.vae);
  const auto& last = res.log.back();
  nlohmann::json extra{{"best_epoch", res.best_epoch},
                       {"final_recon", last.recon},
                       {"final_kl", last.kl},
                       {"final_val_recon", last.val_recon}};

  StageOutput out;
  out.primary = ctx.store.next(c.checkpoint_dir, "pvae", ".bin");
  res.model.save(out.primary, extra);
  out.files = checkpoint_files(out.primary);
  out.summary = extra;
  out.summary["path"] = out.primary.string();
  write_provenance(ctx, "train-vae", c.vae.seed, {source}, out);
  return out;
}

StageOutput run_train_gen(const RunConfig& raw, const Progress& progress) {
  const Context ctx(raw, progress);
  const auto& c = ctx.config;
  const auto source = require_curated(ctx);
  const auto vae_path = ctx.store.require(c.checkpoint_dir, "pvae", ".bin", "ropar train-vae");
  const auto pvae = PVAE::load(vae_path);
  const auto records = read_jsonl(source);
  ctx.say("encoding " + std::to_string(records.size()) + " sequences");
  const auto data = encode_corpus(pvae, records, c.gen.credible_only);
  ctx.say("training generator");
  const auto res = train_generator(data, pvae.latent_dim(), pvae.tokens_per_frame(), c.gen);
  nlohmann::json extra{{"final_loss", res.log.back().loss}, {"noisy_reads", res.noisy_reads}};

  StageOutput out;
  out.primary = ctx.store.next(c.checkpoint_dir, "gen", ".bin");
  res.model.save(out.primary, extra);
  out.files = checkpoint_files(out.primary);
  out.summary = extra;
  out.summary["path"] = out.primary.string();
  std::vector<fs::path> inputs{source};
  for (const auto& f : checkpoint_files(vae_path)) inputs.push_back(f);
  write_provenance(ctx, "train-gen", c.gen.seed, inputs, out);
  return out;
}

StageOutput run_train_eval(const RunConfig& raw, const Progress& progress) {
  const Context ctx(raw, progress);
  const auto& c = ctx.config;
  const auto [skel, part] = build_default_skeleton();
  ctx.say("training retrieval evaluator on " + std::to_string(c.eval_corpus_size) + " clean sequences");
  const auto res = train_evaluator(evaluator_corpus(raw), skel, c.eval);
  nlohmann::json extra{{"held_out_pairs", res.held_out_pairs},
                       {"held_out_r1", res.held_out.r1},
                       {"held_out_r2", res.held_out.r2},
                       {"held_out_r3", res.held_out.r3},
                       {"final_loss", res.loss_log.back()}};

  StageOutput out;
  out.primary = ctx.store.next(c.checkpoint_dir, "evaluator", ".bin");
  res.model.save(out.primary, extra);
  out.files = checkpoint_files(out.primary);
  out.summary = extra;
  out.summary["path"] = out.primary.string();
  write_provenance(ctx, "train-eval", c.eval.seed, {}, out,
                   {{"corpus_seed", derive_seed(raw.seed, "eval-corpus")}});
  return out;
}

StageOutput run_sample(const RunConfig& raw, const SampleRequest& request, const Progress& progress) {
  const Context ctx(raw, progress);
  const auto& c = ctx.config;
  if (request.prompt.empty()) fail_config("sample needs a prompt");
  const auto vae_path = ctx.store.require(c.checkpoint_dir, "pvae", ".bin", "ropar train-vae");
  const auto gen_path = ctx.store.require(c.checkpoint_dir, "gen", ".bin", "ropar train-gen");
  const auto pvae = PVAE::load(vae_path);
  const auto gen = Generator::load(gen_path);
  check_pair(gen, pvae);
  const std::uint64_t seed = request.seed.value_or(derive_seed(raw.seed, "sample"));
  Rng rng(seed);
  auto motion = sample_motion(gen, pvae, request.prompt, request.frames, request.steps, rng, c.synth.fps);

  StageOutput out;
  out.primary = ctx.store.next("samples", "sample", ".jsonl");
  if (fs::exists(out.primary)) fail_data("refusing to overwrite " + out.primary.string());
  write_jsonl(out.primary, {motion});
  out.files = {out.primary};
  // Consistency statistics exist only for prompts the grammar can parse.
  nlohmann::json checks = nullptr;
  const auto& known = default_grammar().prompts();
  if (std::find(known.begin(), known.end(), request.prompt) != known.end()) {
    checks = nlohmann::json::array();
    for (const auto& k : check_prompt_consistency(motion))
      checks.push_back({{"statistic", k.statistic}, {"value", k.value}, {"threshold", k.threshold}, {"passed", k.passed}});
  }
  out.summary = {{"path", out.primary.string()}, {"frames", motion.frames()}, {"checks", checks}};
  std::vector<fs::path> inputs;
  for (const auto& f : checkpoint_files(vae_path)) inputs.push_back(f);
  for (const auto& f : checkpoint_files(gen_path)) inputs.push_back(f);
  write_provenance(ctx, "sample", seed, inputs, out,
                   {{"prompt", request.prompt}, {"frames", request.frames}, {"steps", request.steps}});
  return out;
}

StageOutput run_evaluate(const RunConfig& raw, const Progress& progress) {
  const Context ctx(raw, progress);
  const auto& c = ctx.config;
  const auto vae_path = ctx.store.require(c.checkpoint_dir, "pvae", ".bin", "ropar train-vae");
  const auto gen_path = ctx.store.require(c.checkpoint_dir, "gen", ".bin", "ropar train-gen");
  const auto pvae = PVAE::load(vae_path);
  const auto gen = Generator::load(gen_path);
  check_pair(gen, pvae);
  std::vector<fs::path> inputs;
  for (const auto& f : checkpoint_files(vae_path)) inputs.push_back(f);
  for (const auto& f : checkpoint_files(gen_path)) inputs.push_back(f);
  const auto evaluator = evaluator_for(ctx, raw, inputs);

  const auto test = make_test_set(experiment_config(raw));
  ctx.say("scoring " + std::to_string(test.size()) + " prompts");
  auto report = evaluate_model(gen, pvae, evaluator, test, c.request);
  report.mpjpe = reconstruction_mpjpe(pvae, test);

  StageOutput out;
  out.primary = ctx.store.next(c.report_dir, "metrics", ".json");
  auto j = to_json(report);
  j["request"] = to_json(c.request);
  write_json(out.primary, j);
  out.files = {out.primary};
  out.summary = j;
  out.summary["path"] = out.primary.string();
  write_provenance(ctx, "evaluate", c.request.seed, inputs, out);
  return out;
}

StageOutput run_sweep(const RunConfig& raw, const Progress& progress) {
  const Context ctx(raw, progress);
  const auto& c = ctx.config;
  std::vector<fs::path> inputs;
  const auto evaluator = evaluator_for(ctx, raw, inputs);
  const auto rows = robustness_sweep(c.proportions, experiment_for(ctx, raw), evaluator);

  StageOutput out;
  out.primary = ctx.store.next(c.report_dir, "sweep", ".json");
  const auto stem = out.primary.string().substr(0, out.primary.string().size() - 5);
  const fs::path csv = stem + ".csv", svg = stem + ".svg";
  for (const auto& p : {csv, svg})
    if (fs::exists(p)) fail_data("refusing to overwrite " + p.string());
  write_json(out.primary, to_json(rows));
  write_sweep_csv(rows, csv);
  write_sweep_plot(rows, svg);
  out.files = {out.primary, csv, svg};
  out.summary = {{"path", out.primary.string()}, {"rows", to_json(rows)}};
  write_provenance(ctx, "sweep", c.seed, inputs, out);
  return out;
}

StageOutput run_ablate(const RunConfig& raw, const Progress& progress) {
  const Context ctx(raw, progress);
  const auto& c = ctx.config;
  std::vector<fs::path> inputs;
  const auto evaluator = evaluator_for(ctx, raw, inputs);
  const auto rows = ablate(c.variants, experiment_for(ctx, raw), evaluator);

  StageOutput out;
  out.primary = ctx.store.next(c.report_dir, "ablation", ".json");
  write_json(out.primary, to_json(rows));
  out.files = {out.primary};
  out.summary = {{"path", out.primary.string()}, {"rows", to_json(rows)}};
  write_provenance(ctx, "ablate", c.seed, inputs, out);
  return out;
}

}  // namespace ropar
