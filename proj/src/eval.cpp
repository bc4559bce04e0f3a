#include "ropar/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "ropar/features.hpp"
#include "ropar/nn.hpp"

namespace ropar {

double mpjpe(const Positions& pred, const Positions& gt) {
  if (pred.rows != gt.rows || pred.cols != gt.cols) fail_data("mpjpe: shape mismatch");
  if (pred.data.empty()) fail_data("mpjpe: empty input");
  double sum = 0.0;
  for (std::size_t k = 0; k < pred.data.size(); ++k) sum += (pred.data[k] - gt.data[k]).norm();
  return sum / static_cast<double>(pred.data.size());
}

namespace {

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mean) {
  const Eigen::MatrixXd c = x.rowwise() - mean;
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

// Symmetric PSD square root; tiny negative eigenvalues from roundoff are clipped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, Eigen::VectorXd* eigenvalues = nullptr) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    if (ev[k] < -1e-8) fail_data("fid: covariance product has eigenvalue " + std::to_string(ev[k]));
    ev[k] = std::max(ev[k], 0.0);
  }
  if (eigenvalues) *eigenvalues = ev;
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) fail_data("fid: feature dimensions differ");
  const auto need = a.cols() + 1;
  if (a.rows() < need || b.rows() < need)
    fail_data("fid: insufficient samples (need at least " + std::to_string(need) + " per set)");
  const Eigen::RowVectorXd ma = a.colwise().mean(), mb = b.colwise().mean();
  const Eigen::MatrixXd sa = covariance(a, ma), sb = covariance(b, mb);
  const Eigen::MatrixXd ra = psd_sqrt(sa);
  Eigen::MatrixXd inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::VectorXd ev;
  psd_sqrt(inner, &ev);
  const double value = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * ev.cwiseSqrt().sum();
  return std::max(value, 0.0);
}

RPrecision r_precision(const Eigen::MatrixXd& motion, const Eigen::MatrixXd& text, Rng& rng, int batch_size,
                       int rounds) {
  if (motion.rows() != text.rows() || motion.cols() != text.cols()) fail_data("r_precision: shape mismatch");
  if (batch_size < 1 || rounds < 1) fail_config("r_precision: batch_size and rounds must be positive");
  if (motion.rows() < batch_size)
    fail_data("r_precision: " + std::to_string(motion.rows()) + " pairs is fewer than the batch size " +
              std::to_string(batch_size));
  std::vector<Eigen::Index> order(motion.rows());
  std::iota(order.begin(), order.end(), 0);
  std::int64_t hits[3] = {0, 0, 0}, queries = 0;
  RPrecision out;
  for (int round = 0; round < rounds; ++round) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start + batch_size <= order.size(); start += batch_size) {
      ++out.batches;
      for (int i = 0; i < batch_size; ++i) {
        const auto m = motion.row(order[start + i]);
        const double truth = (m - text.row(order[start + i])).norm();
        int rank = 0;
        for (int j = 0; j < batch_size; ++j)
          if (j != i && (m - text.row(order[start + j])).norm() < truth) ++rank;
        for (int k = 0; k < 3; ++k) hits[k] += rank <= k;
        ++queries;
      }
    }
  }
  out.r1 = static_cast<double>(hits[0]) / queries;
  out.r2 = static_cast<double>(hits[1]) / queries;
  out.r3 = static_cast<double>(hits[2]) / queries;
  return out;
}

double mm_distance(const Eigen::MatrixXd& motion, const Eigen::MatrixXd& text) {
  if (motion.rows() != text.rows() || motion.cols() != text.cols()) fail_data("mm_distance: shape mismatch");
  if (motion.rows() == 0) fail_data("mm_distance: empty input");
  return (motion - text).rowwise().norm().mean();
}

void EvalConfig::validate() const {
  if (embed_dim < 1 || hidden < 1) fail_config("eval network sizes must be positive");
  if (epochs < 1 || batch_size < 2 || learning_rate <= 0.0) fail_config("eval optimizer settings must be positive");
  if (crop_frames < 4) fail_config("eval.crop_frames must be >= 4");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) fail_config("eval.validation_fraction must be in (0, 1)");
}

nlohmann::json to_json(const EvalConfig& c) {
  return {{"embed_dim", c.embed_dim},   {"hidden", c.hidden},
          {"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate}, {"crop_frames", c.crop_frames},
          {"validation_fraction", c.validation_fraction}, {"seed", c.seed}};
}

EvalConfig eval_config_from_json(const nlohmann::json& j) {
  EvalConfig c;
  c.embed_dim = j.at("embed_dim");
  c.hidden = j.at("hidden");
  c.epochs = j.at("epochs");
  c.batch_size = j.at("batch_size");
  c.learning_rate = j.at("learning_rate");
  c.crop_frames = j.at("crop_frames");
  c.validation_fraction = j.at("validation_fraction");
  c.seed = j.at("seed");
  return c;
}

namespace detail {

struct DualEncoderNetImpl : torch::nn::Module {
  DualEncoderNetImpl(int desc_dim, int hidden, int embed, int vocab) {
    using torch::nn::Conv1dOptions;
    conv1 = register_module("conv1", torch::nn::Conv1d(Conv1dOptions(desc_dim, hidden, 3).padding(1)));
    conv2 = register_module("conv2", torch::nn::Conv1d(Conv1dOptions(hidden, hidden, 3).padding(1)));
    conv3 = register_module("conv3", torch::nn::Conv1d(Conv1dOptions(hidden, hidden, 3).padding(1)));
    motion_out = register_module("motion_out", torch::nn::Linear(hidden, embed));
    words = register_module("words", torch::nn::Embedding(vocab, hidden));
    text_hidden = register_module("text_hidden", torch::nn::Linear(hidden, hidden));
    text_out = register_module("text_out", torch::nn::Linear(hidden, embed));
    log_scale = register_parameter("log_scale", torch::full({1}, std::log(1.0 / 0.07)));
    desc_mean = register_buffer("desc_mean", torch::zeros({desc_dim}));
    desc_std = register_buffer("desc_std", torch::ones({desc_dim}));
  }

  torch::nn::Conv1d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::Linear motion_out{nullptr}, text_hidden{nullptr}, text_out{nullptr};
  torch::nn::Embedding words{nullptr};
  torch::Tensor log_scale, desc_mean, desc_std;
};

}  // namespace detail

DualEncoder::DualEncoder(const EvalConfig& config, const SkeletonSpec& skeleton, TextVocab vocab)
    : config_(config), skeleton_(skeleton), vocab_(std::move(vocab)) {
  config_.validate();
  torch::manual_seed(derive_seed(config_.seed, "eval-init"));
  net_ = std::make_shared<detail::DualEncoderNetImpl>(body_descriptor_dim(skeleton_.num_joints()), config_.hidden,
                                                       config_.embed_dim, static_cast<int>(vocab_.size()));
}

torch::nn::Module& DualEncoder::module() { return *net_; }
const torch::nn::Module& DualEncoder::module() const { return *net_; }
std::string DualEncoder::checksum() const { return nn::state_checksum(*net_); }

void DualEncoder::set_descriptor_stats(const torch::Tensor& mean, const torch::Tensor& stddev) {
  torch::NoGradGuard guard;
  net_->desc_mean.copy_(mean);
  net_->desc_std.copy_(stddev);
}

torch::Tensor DualEncoder::embed_descriptors(const torch::Tensor& desc) const {
  auto x = ((desc - net_->desc_mean) / net_->desc_std).transpose(1, 2);
  auto h = torch::gelu(net_->conv1(x));
  h = h + torch::gelu(net_->conv2(h));
  h = h + torch::gelu(net_->conv3(h));
  return torch::nn::functional::normalize(net_->motion_out(h.mean(2)),
                                          torch::nn::functional::NormalizeFuncOptions().dim(1));
}

torch::Tensor DualEncoder::embed_prompts(const std::vector<std::string>& prompts) const {
  std::vector<torch::Tensor> rows;
  for (const auto& p : prompts) rows.push_back(net_->words(torch::tensor(vocab_.tokenize(p), torch::kLong)).mean(0));
  auto h = torch::gelu(net_->text_hidden(torch::stack(rows)));
  return torch::nn::functional::normalize(net_->text_out(h), torch::nn::functional::NormalizeFuncOptions().dim(1));
}

torch::Tensor DualEncoder::logit_scale() const { return net_->log_scale.clamp_max(std::log(100.0)).exp(); }

namespace {

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat64).contiguous();
  Eigen::MatrixXd out(c.size(0), c.size(1));
  const double* p = c.data_ptr<double>();
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = p[i * out.cols() + j];
  return out;
}

}  // namespace

torch::Tensor descriptor_tensor(const MotionRecord& record, const SkeletonSpec& skeleton) {
  const auto rows = body_descriptor(record, skeleton);
  const auto dim = static_cast<std::int64_t>(rows.front().size());
  auto out = torch::empty({static_cast<std::int64_t>(rows.size()), dim});
  auto* p = out.data_ptr<float>();
  for (const auto& r : rows) p = std::copy(r.begin(), r.end(), p);
  return out;
}

Eigen::MatrixXd DualEncoder::encode_motions(const std::vector<MotionRecord>& records) const {
  torch::NoGradGuard guard;
  std::map<std::int64_t, std::vector<std::size_t>> by_length;
  std::vector<torch::Tensor> descs;
  for (std::size_t i = 0; i < records.size(); ++i) {
    descs.push_back(descriptor_tensor(records[i], skeleton_));
    by_length[descs.back().size(0)].push_back(i);
  }
  Eigen::MatrixXd out(records.size(), config_.embed_dim);
  for (const auto& [len, idx] : by_length) {
    for (std::size_t start = 0; start < idx.size(); start += 256) {
      std::vector<torch::Tensor> batch;
      const std::size_t end = std::min(idx.size(), start + 256);
      for (std::size_t k = start; k < end; ++k) batch.push_back(descs[idx[k]]);
      const auto e = to_eigen(embed_descriptors(torch::stack(batch)));
      for (std::size_t k = start; k < end; ++k) out.row(idx[k]) = e.row(k - start);
    }
  }
  return out;
}

Eigen::MatrixXd DualEncoder::encode_texts(const std::vector<std::string>& prompts) const {
  torch::NoGradGuard guard;
  return to_eigen(embed_prompts(prompts));
}

void DualEncoder::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  nlohmann::json side = extra;
  side["kind"] = "evaluator";
  side["config"] = to_json(config_);
  side["vocabulary"] = vocab_.words();
  side["joints"] = skeleton_.num_joints();
  nn::save_checkpoint(*net_, path, side);
}

DualEncoder DualEncoder::load(const std::filesystem::path& path, const SkeletonSpec& skeleton) {
  const auto side = nn::read_sidecar(path);
  if (side.value("kind", "") != "evaluator") fail_data(path.string() + " is not an evaluator checkpoint");
  if (side.at("joints").get<int>() != skeleton.num_joints()) fail_data("evaluator skeleton does not match");
  DualEncoder e(eval_config_from_json(side.at("config")), skeleton,
                TextVocab(side.at("vocabulary").get<std::vector<std::string>>()));
  nn::load_checkpoint(*e.net_, path);
  return e;
}

EvalTrainResult train_evaluator(const std::vector<MotionRecord>& corpus, const SkeletonSpec& skeleton,
                                const EvalConfig& config) {
  config.validate();
  DualEncoder model(config, skeleton, TextVocab::from_grammar());
  const auto n = corpus.size();
  const auto n_val = static_cast<std::size_t>(std::lround(config.validation_fraction * n));
  if (n_val < 32 || n - n_val < static_cast<std::size_t>(config.batch_size))
    fail_data("train_evaluator needs at least 32 held-out pairs and one training batch");

  Rng split(derive_seed(config.seed, "eval-split"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), split.engine());
  std::vector<std::size_t> train(order.begin() + n_val, order.end()), val(order.begin(), order.begin() + n_val);

  std::vector<torch::Tensor> descs(n);
  for (std::size_t i = 0; i < n; ++i) descs[i] = descriptor_tensor(corpus[i], skeleton);
  {
    std::vector<torch::Tensor> frames;
    for (auto i : train) frames.push_back(descs[i]);
    const auto all = torch::cat(frames);
    model.set_descriptor_stats(all.mean(0), all.std(0).clamp_min(1e-3));
  }

  Rng rng(derive_seed(config.seed, "eval-train"));
  torch::optim::AdamW opt(model.module().parameters(),
                          torch::optim::AdamWOptions(config.learning_rate).weight_decay(0.01));
  EvalTrainResult result{model, {}, {}, n_val};
  model.module().train();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng.engine());
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start + config.batch_size <= train.size(); start += config.batch_size) {
      std::int64_t len = config.crop_frames;
      for (int k = 0; k < config.batch_size; ++k) len = std::min(len, descs[train[start + k]].size(0));
      std::vector<torch::Tensor> crops;
      std::vector<std::string> prompts;
      for (int k = 0; k < config.batch_size; ++k) {
        const auto& d = descs[train[start + k]];
        crops.push_back(d.narrow(0, rng.integer(0, d.size(0) - len), len));
        prompts.push_back(corpus[train[start + k]].prompt);
      }
      // Pairs sharing a prompt are all positives.
      auto same = torch::zeros({config.batch_size, config.batch_size});
      for (int a = 0; a < config.batch_size; ++a)
        for (int b = 0; b < config.batch_size; ++b) same[a][b] = prompts[a] == prompts[b] ? 1.0f : 0.0f;
      const auto target = same / same.sum(1, true);
      const auto logits = model.logit_scale() * torch::matmul(model.embed_descriptors(torch::stack(crops)),
                                                              model.embed_prompts(prompts).t());
      const auto loss = -0.5 * ((target * torch::log_softmax(logits, 1)).sum(1).mean() +
                                (target * torch::log_softmax(logits.t(), 1)).sum(1).mean());
      const double value = loss.item<double>();
      nn::check_finite(value, "evaluator loss at epoch " + std::to_string(epoch));
      opt.zero_grad();
      loss.backward();
      opt.step();
      sum += value;
      ++batches;
    }
    result.loss_log.push_back(sum / batches);
  }
  model.module().eval();

  std::vector<MotionRecord> held;
  std::vector<std::string> prompts;
  for (auto i : val) {
    held.push_back(corpus[i]);
    prompts.push_back(corpus[i].prompt);
  }
  Rng eval_rng(derive_seed(config.seed, "eval-heldout"));
  result.held_out = r_precision(model.encode_motions(held), model.encode_texts(prompts), eval_rng, 32, 20);
  result.model = model;
  return result;
}

nlohmann::json to_json(const MetricReport& m) {
  return {{"fid", m.fid},
          {"r1", m.r.r1},
          {"r2", m.r.r2},
          {"r3", m.r.r3},
          {"r_batches", m.r.batches},
          {"mm_distance", m.mm_distance},
          {"mpjpe", m.mpjpe ? nlohmann::json(*m.mpjpe) : nlohmann::json(nullptr)},
          {"generated", m.generated},
          {"real", m.real},
          {"evaluator_checksum", m.evaluator_checksum},
          {"generator_checksum", m.generator_checksum},
          {"seed", m.seed}};
}

nlohmann::json to_json(const EvalRequest& r) {
  return {{"samples_per_prompt", r.samples_per_prompt},
          {"frames", r.frames},
          {"decode_steps", r.decode_steps},
          {"rounds", r.rounds},
          {"seed", r.seed}};
}

std::vector<MotionRecord> crop_records(const std::vector<MotionRecord>& records, int frames) {
  std::vector<MotionRecord> out;
  for (const auto& r : records) {
    if (r.frames() < frames) fail_data("record " + r.id + " is shorter than " + std::to_string(frames) + " frames");
    MotionRecord c(r.id, r.prompt, r.fps, frames, r.joints());
    std::copy_n(r.positions.data.begin(), c.positions.data.size(), c.positions.data.begin());
    std::copy_n(r.confidences.data.begin(), c.confidences.data.size(), c.confidences.data.begin());
    out.push_back(std::move(c));
  }
  return out;
}

MetricReport score_motions(const DualEncoder& evaluator, const std::vector<MotionRecord>& generated,
                           const std::vector<std::string>& prompts, const std::vector<MotionRecord>& real, Rng& rng,
                           int rounds) {
  if (generated.size() != prompts.size()) fail_data("score_motions: one prompt per generated motion");
  MetricReport m;
  const auto g = evaluator.encode_motions(generated);
  const auto t = evaluator.encode_texts(prompts);
  m.fid = fid(evaluator.encode_motions(real), g);
  m.r = r_precision(g, t, rng, 32, rounds);
  m.mm_distance = mm_distance(g, t);
  m.generated = generated.size();
  m.real = real.size();
  m.evaluator_checksum = evaluator.checksum();
  return m;
}

MetricReport evaluate_model(const Generator& gen, const PVAE& pvae, const DualEncoder& evaluator,
                            const std::vector<MotionRecord>& test, const EvalRequest& request) {
  if (gen.vocab().words() != evaluator.vocab().words())
    fail_data("generator and evaluator vocabularies differ");
  if (request.samples_per_prompt < 1) fail_config("eval.samples_per_prompt must be >= 1");
  std::vector<std::string> prompts;
  for (const auto& r : test)
    for (int k = 0; k < request.samples_per_prompt; ++k) prompts.push_back(r.prompt);
  Rng rng(derive_seed(request.seed, "eval-sample"));
  std::vector<MotionRecord> generated;
  for (std::size_t start = 0; start < prompts.size(); start += 64) {
    const std::vector<std::string> chunk(prompts.begin() + start,
                                         prompts.begin() + std::min(prompts.size(), start + 64));
    for (auto& m : sample_motions(gen, pvae, chunk, request.frames, request.decode_steps, rng)) {
      m.id = "gen-" + std::to_string(generated.size());
      generated.push_back(std::move(m));
    }
  }
  Rng score_rng(derive_seed(request.seed, "eval-score"));
  auto report = score_motions(evaluator, generated, prompts, crop_records(test, generated.front().frames()), score_rng,
                              request.rounds);
  report.generator_checksum = nn::state_checksum(gen.module());
  report.seed = request.seed;
  return report;
}

double reconstruction_mpjpe(const PVAE& pvae, const std::vector<MotionRecord>& test) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& r : test) {
    const auto p = reconstruct(pvae, r);
    for (std::size_t k = 0; k < p.data.size(); ++k) sum += (p.data[k] - r.positions.data[k]).norm();
    count += p.data.size();
  }
  if (count == 0) fail_data("reconstruction_mpjpe: empty test set");
  return sum / static_cast<double>(count);
}

std::vector<MotionRecord> make_test_set(const ExperimentConfig& config) {
  CorpusConfig tc = config.corpus;
  tc.noisy = false;
  tc.size = config.test_size;
  tc.seed = derive_seed(config.corpus.seed, "test");
  return make_corpus(tc).records;
}

namespace {

void say(const ExperimentConfig& c, const std::string& msg) {
  if (c.progress) c.progress(msg);
}

PVAE fit_pvae(const std::vector<MotionRecord>& corpus, PVAEConfig vc, const ExperimentConfig& config,
              const std::string& label) {
  const auto [skeleton, partition] = build_default_skeleton();
  say(config, label + ": training P-VAE (" + to_string(vc.variant) + ")");
  return train_pvae(corpus, skeleton, partition, vc).model;
}

Generator fit_generator(const PVAE& pvae, const std::vector<MotionRecord>& corpus, GenConfig gc,
                        const ExperimentConfig& config, const std::string& label) {
  say(config, label + ": training generator");
  const auto data = encode_corpus(pvae, corpus, gc.credible_only);
  return train_generator(data, pvae.latent_dim(), pvae.tokens_per_frame(), gc).model;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

}  // namespace

std::vector<SweepRow> robustness_sweep(const std::vector<double>& proportions, const ExperimentConfig& config,
                                       const DualEncoder& evaluator) {
  for (double q : proportions)
    if (!(q > 0.0 && q <= 1.0)) fail_config("sweep proportions must lie in (0, 1]");
  const auto test = make_test_set(config);
  std::vector<SweepRow> rows;
  for (double q : proportions) {
    CorpusConfig cc = config.corpus;
    cc.noisy = q < 1.0;
    cc.noise.target = NoiseTarget::CredibleFraction;
    cc.noise.target_credible_fraction = q;
    say(config, "proportion " + fmt(q) + ": synthesizing corpus");
    const auto corpus = make_corpus(cc);
    for (const bool aware : {true, false}) {
      const std::string name = aware ? "ropar" : "baseline";
      const std::string label = name + " @ " + fmt(q);
      PVAEConfig vc = config.vae;
      vc.credible_only = aware;
      GenConfig gc = config.gen;
      gc.credible_only = aware;
      const auto pvae = fit_pvae(corpus.records, vc, config, label);
      const auto gen = fit_generator(pvae, corpus.records, gc, config, label);
      say(config, label + ": evaluating");
      rows.push_back({q, name, evaluate_model(gen, pvae, evaluator, test, config.eval)});
    }
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail_data("cannot write " + path.string());
  out << "proportion,model,fid,r1,r2,r3,mmd\n";
  out.precision(8);
  for (const auto& r : rows)
    out << r.proportion << ',' << r.model << ',' << r.report.fid << ',' << r.report.r.r1 << ',' << r.report.r.r2
        << ',' << r.report.r.r3 << ',' << r.report.mm_distance << '\n';
}

void write_sweep_plot(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  constexpr double W = 360, H = 260, L = 56, R = 16, T = 30, B = 44;
  std::map<std::string, std::vector<std::pair<double, const MetricReport*>>> series;
  for (const auto& r : rows) series[r.model].push_back({r.proportion, &r.report});
  for (auto& [name, pts] : series) std::sort(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.first < b.first; });
  const std::map<std::string, std::string> colors{{"ropar", "#1f77b4"}, {"baseline", "#ff7f0e"}};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const std::pair<const char*, double (*)(const MetricReport&)> panels[] = {
      {"R@1", [](const MetricReport& m) { return m.r.r1; }}, {"FID", [](const MetricReport& m) { return m.fid; }}};
  for (int p = 0; p < 2; ++p) {
    const double ox = p * W;
    double lo = 0.0, hi = 1e-9;
    for (const auto& r : rows) hi = std::max(hi, panels[p].second(r.report));
    hi *= 1.1;
    auto px = [&](double q) { return ox + L + q * (W - L - R); };
    auto py = [&](double v) { return T + (1.0 - (v - lo) / (hi - lo)) * (H - T - B); };
    svg << "<text x=\"" << ox + W / 2 << "\" y=\"18\" text-anchor=\"middle\">" << panels[p].first
        << " vs credible proportion</text>\n";
    svg << "<line x1=\"" << px(0) << "\" y1=\"" << py(lo) << "\" x2=\"" << px(1) << "\" y2=\"" << py(lo)
        << "\" stroke=\"black\"/>\n<line x1=\"" << px(0) << "\" y1=\"" << py(lo) << "\" x2=\"" << px(0)
        << "\" y2=\"" << py(hi) << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double q = k / 4.0, v = lo + (hi - lo) * k / 4.0;
      svg << "<text x=\"" << px(q) << "\" y=\"" << py(lo) + 14 << "\" text-anchor=\"middle\">" << fmt(q)
          << "</text>\n<text x=\"" << px(0) - 4 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">"
          << fmt(std::round(v * 1000) / 1000) << "</text>\n";
    }
    svg << "<text x=\"" << px(0.5) << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">credible proportion</text>\n";
    int legend = 0;
    for (const auto& [name, pts] : series) {
      const auto it = colors.find(name);
      const std::string color = it == colors.end() ? "gray" : it->second;
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (const auto& [q, m] : pts) svg << px(q) << ',' << py(panels[p].second(*m)) << ' ';
      svg << "\"/>\n";
      for (const auto& [q, m] : pts)
        svg << "<circle cx=\"" << px(q) << "\" cy=\"" << py(panels[p].second(*m)) << "\" r=\"3\" fill=\"" << color
            << "\"/>\n";
      svg << "<text x=\"" << ox + W - R - 70 << "\" y=\"" << T + 14 * (legend + 1) << "\" fill=\"" << color << "\">"
          << name << "</text>\n";
      ++legend;
    }
  }
  svg << "</svg>\n";
  std::ofstream out(path);
  if (!out) fail_data("cannot write " + path.string());
  out << svg.str();
}

std::vector<AblationRow> ablate(const std::vector<std::string>& variants, const ExperimentConfig& config,
                                const DualEncoder& evaluator) {
  static const std::vector<std::string> known{"full", "no_part_decomposition", "no_shared_params",
                                              "no_diffusion_head"};
  for (const auto& v : variants)
    if (std::find(known.begin(), known.end(), v) == known.end())
      fail_config("unknown ablation variant '" + v + "'");
  say(config, "synthesizing the noisy corpus");
  const auto corpus = make_corpus(config.corpus);
  const auto test = make_test_set(config);

  std::map<PVAEVariant, std::shared_ptr<PVAE>> pvaes;
  auto pvae_for = [&](PVAEVariant kind, const std::string& label) -> const PVAE& {
    auto& slot = pvaes[kind];
    if (!slot) {
      PVAEConfig vc = config.vae;
      vc.variant = kind;
      slot = std::make_shared<PVAE>(fit_pvae(corpus.records, vc, config, label));
    }
    return *slot;
  };

  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    AblationRow row{v, std::nullopt, std::nullopt};
    const PVAEVariant kind = v == "no_part_decomposition" ? PVAEVariant::FullBody
                             : v == "no_shared_params"    ? PVAEVariant::PerPart
                                                          : PVAEVariant::Shared;
    const auto& pvae = pvae_for(kind, v);
    row.reconstruction_mpjpe = reconstruction_mpjpe(pvae, test);
    if (v != "no_shared_params") {
      GenConfig gc = config.gen;
      if (v == "no_diffusion_head") gc.head = HeadKind::Regression;
      const auto gen = fit_generator(pvae, corpus.records, gc, config, v);
      say(config, v + ": evaluating");
      row.generation = evaluate_model(gen, pvae, evaluator, test, config.eval);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json to_json(const std::vector<SweepRow>& rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) {
    auto j = to_json(r.report);
    j["proportion"] = r.proportion;
    j["model"] = r.model;
    out.push_back(j);
  }
  return out;
}

nlohmann::json to_json(const std::vector<AblationRow>& rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"variant", r.variant},
                   {"generation", r.generation ? to_json(*r.generation) : nlohmann::json(nullptr)},
                   {"reconstruction_mpjpe",
                    r.reconstruction_mpjpe ? nlohmann::json(*r.reconstruction_mpjpe) : nlohmann::json(nullptr)}});
  }
  return out;
}

}  // namespace ropar
