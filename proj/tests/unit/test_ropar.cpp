#include "testing.hpp"

#include <cmath>
#include <filesystem>

#include "ropar/nn.hpp"
#include "ropar/ropar.hpp"
#include "ropar/synthdata.hpp"

using namespace ropar;

namespace {

// Exactly round(beta * cells) noisy cells, spread over the grid.
torch::Tensor planted(int frames, int parts, double beta) {
  const int cells = frames * parts;
  const int noisy = static_cast<int>(std::lround(beta * cells));
  auto c = torch::ones({cells}, torch::kBool);
  for (int k = 0; k < noisy; ++k) c[(k * 7) % cells] = false;
  REQUIRE(torch::logical_not(c).sum().item<int>() == noisy);
  return c.reshape({frames, parts});
}

GenConfig tiny_gen() {
  GenConfig g;
  g.d_model = 32;
  g.layers = 2;
  g.heads = 2;
  g.head_width = 64;
  g.max_frames = 16;
  g.window = 8;
  g.seed = 17;
  return g;
}

Generator tiny_generator(int tokens = kNumParts, int latent = 4) {
  return Generator(tiny_gen(), latent, tokens, TextVocab::from_grammar());
}

PVAE tiny_pvae() {
  const auto [skel, part] = build_default_skeleton();
  PVAEConfig c;
  c.latent_dim = 4;
  c.hidden = 16;
  c.downsample = 4;
  c.seed = 2;
  return PVAE(c, skel, part);
}

}  // namespace

TEST_CASE("mask plan probability") {
  Rng rng(1);
  const auto clean = torch::ones({10, 5}, torch::kBool);
  CHECK(make_mask_plan(clean, 0.7, rng).credible_probability == doctest::Approx(0.7));
  const auto plan = make_mask_plan(planted(10, 5, 0.4), 0.7, rng);
  CHECK(plan.beta == doctest::Approx(0.4));
  CHECK(plan.credible_probability == doctest::Approx(0.5));
  CHECK(make_mask_plan(planted(10, 5, 0.4), 0.7, rng, true).credible_probability == doctest::Approx(0.3));
  CHECK_THROWS_AS(make_mask_plan(clean, 0.0, rng), Error);
  CHECK_THROWS_AS(make_mask_plan(clean, 1.5, rng), Error);
}

TEST_CASE("mask plan law over many draws") {
  Rng rng(2);
  for (double beta : {0.0, 0.2, 0.4, 0.6}) {
    const auto c = planted(16, 5, beta);
    const auto noisy = torch::logical_not(c);
    double masked = 0.0;
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) {
      const auto p = make_mask_plan(c, 0.7, rng);
      masked += p.masked.to(torch::kFloat64).mean().item<double>();
      REQUIRE(p.masked.index({noisy}).all().item<bool>());
      REQUIRE_FALSE(p.loss_mask.index({noisy}).any().item<bool>());
      REQUIRE_FALSE(torch::logical_and(p.loss_mask, torch::logical_not(p.masked)).any().item<bool>());
    }
    CHECK(std::abs(masked / draws - 0.7) <= 0.01);
  }
}

TEST_CASE("mask plan edge cases") {
  Rng rng(3);
  const auto all_noisy = torch::zeros({4, 5}, torch::kBool);
  const auto p = make_mask_plan(all_noisy, 0.5, rng);
  CHECK(p.masked.all().item<bool>());
  CHECK_FALSE(p.loss_mask.any().item<bool>());
  CHECK(p.ratio_unreachable);

  const auto q = make_mask_plan(planted(10, 5, 0.6), 0.5, rng);
  CHECK(q.ratio_unreachable);
  CHECK(q.credible_probability == 0.0);
  CHECK_FALSE(q.loss_mask.any().item<bool>());
}

TEST_CASE("noise schedule") {
  const auto s = NoiseSchedule::linear(100, 1e-4, 0.02);
  for (int t = 1; t <= s.T; ++t) {
    CHECK(s.beta[t] > 0.0);
    CHECK(s.beta[t] < 1.0);
    CHECK(s.alphabar[t] < s.alphabar[t - 1]);
    if (t > 1) CHECK(s.beta[t] >= s.beta[t - 1]);
  }
  CHECK(s.alphabar[1] > 0.99);
  CHECK(s.alphabar[s.T] < 1e-3);
  CHECK_THROWS_AS(NoiseSchedule::linear(0, 1e-4, 0.02), Error);
  CHECK_THROWS_AS(NoiseSchedule::linear(100, 0.02, 1e-4), Error);
}

TEST_CASE("forward process") {
  const auto s = NoiseSchedule::linear(100, 1e-4, 0.02);
  const auto z0 = torch::randn({1000, 4}, torch::kFloat64);
  const auto eps = torch::randn({1000, 4}, torch::kFloat64);
  CHECK((ddpm_forward(z0, 1, eps, s) - z0).square().mean().item<double>() < 2e-3);
  CHECK((ddpm_forward(z0, s.T, eps, s) - eps).square().mean().item<double>() < 1e-3);
  CHECK_THROWS_AS(ddpm_forward(z0, 0, eps, s), Error);
  CHECK_THROWS_AS(ddpm_forward(z0, s.T + 1, eps, s), Error);
  CHECK_THROWS_AS(ddpm_forward(z0, torch::full({1000}, 0, torch::kLong), eps, s), Error);

  // Var(x_t) = alphabar Var(z0) + 1 - alphabar, with Var(z0) = 4.
  const int t = 40;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(5);
  const auto big_z0 = 2.0 * at::randn({100000}, gen, torch::kFloat64);
  const auto big_eps = at::randn({100000}, gen, torch::kFloat64);
  const auto ab = s.alphabar[t];
  const auto x = ddpm_forward(big_z0, t, big_eps, s);
  CHECK(x.var().item<double>() == doctest::Approx(4 * ab + 1 - ab).epsilon(0.01));
  const auto noise_only = ddpm_forward(torch::zeros({100000}, torch::kFloat64), t, big_eps, s);
  CHECK(noise_only.var().item<double>() == doctest::Approx(1 - ab).epsilon(0.01));
  const auto tensor_t = ddpm_forward(big_z0, torch::full({100000}, t, torch::kLong), big_eps, s);
  CHECK(torch::allclose(tensor_t, x));
}

TEST_CASE("diffusion loss with an exact denoiser is zero") {
  const auto s = NoiseSchedule::linear(100, 1e-4, 0.02);
  const auto z = torch::randn({2, 6, 5, 4}, torch::kFloat64);
  const auto mask = torch::rand({2, 6, 5}) < 0.5;
  // The conditioning carries z0, so the stub can solve for eps.
  const Denoiser exact = [&s](const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& z0) {
    const auto ab = torch::tensor(s.alphabar, torch::kFloat64).index_select(0, t).unsqueeze(1);
    return (x_t - ab.sqrt() * z0) / (1 - ab).sqrt();
  };
  Rng rng(8);
  CHECK(diffusion_loss(s, exact, z, z, mask, rng, 3).item<double>() < 1e-20);
  const Denoiser zero = [](const torch::Tensor& x_t, const torch::Tensor&, const torch::Tensor&) {
    return torch::zeros_like(x_t);
  };
  // E|eps|^2 per element is 1.
  Rng big(9);
  const auto ones = torch::ones({1, 200, 5}, torch::kBool);
  CHECK(diffusion_loss(s, zero, torch::zeros({1, 200, 5, 4}), torch::zeros({1, 200, 5, 4}), ones, big, 10)
            .item<double>() == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("diffusion loss ignores cells outside the loss mask") {
  const auto gen = tiny_generator();
  const auto z = torch::randn({2, 6, 5, 4});
  const auto zhat = torch::randn({2, 6, 5, 32});
  auto mask = torch::rand({2, 6, 5}) < 0.5;
  mask[0][0][0] = true;
  mask[1][5][4] = false;
  auto z2 = z.clone();
  z2.index_put_({torch::logical_not(mask)}, 100.0);
  auto zhat2 = zhat.clone();
  zhat2.index_put_({torch::logical_not(mask)}, -7.0);
  Rng r1(4), r2(4);
  const auto a = diffusion_loss(gen, z, zhat, mask, r1, 2);
  const auto b = diffusion_loss(gen, z2, zhat2, mask, r2, 2);
  CHECK(a.item<float>() == b.item<float>());
  CHECK(std::isfinite(a.item<double>()));
  CHECK(a.item<double>() > 0.0);

  auto zg = z.clone().requires_grad_(true);
  Rng r3(4);
  diffusion_loss(gen, zg, zhat, mask, r3, 2).backward();
  CHECK(zg.grad().index({torch::logical_not(mask)}).abs().max().item<double>() == 0.0);

  Rng r4(1);
  CHECK_THROWS_AS(diffusion_loss(gen, z, zhat, torch::zeros({2, 6, 5}, torch::kBool), r4), Error);
}

TEST_CASE("cosine unmask counts") {
  for (int cells : {1, 5, 80, 160}) {
    for (int steps : {1, 2, 8, 12}) {
      const auto counts = unmask_counts(cells, steps);
      REQUIRE(static_cast<int>(counts.size()) == steps);
      int remaining = cells, total = 0;
      for (int k = 1; k <= steps; ++k) {
        const int expect_left = k == steps ? 0 : static_cast<int>(std::floor(cells * std::cos(M_PI * k / (2.0 * steps))));
        CHECK(counts[k - 1] == remaining - expect_left);
        CHECK(counts[k - 1] >= 0);
        remaining = expect_left;
        total += counts[k - 1];
      }
      CHECK(total == cells);
    }
  }
  CHECK(unmask_counts(80, 1) == std::vector<int>{80});
  CHECK_THROWS_AS(unmask_counts(80, 0), Error);
}

TEST_CASE("text vocabulary") {
  const auto vocab = TextVocab::from_grammar();
  const auto a = vocab.tokenize("a person waves the left arm");
  CHECK(a == vocab.tokenize("a person waves the left arm"));
  for (auto id : a) CHECK(id > 0);
  CHECK(vocab.tokenize("a person juggles")[2] == 0);
  CHECK_THROWS_AS(vocab.tokenize("   "), Error);
  const auto gen = tiny_generator();
  torch::NoGradGuard guard;
  const auto e = gen.embed_text({"a person waves the left arm", "a person waves the left arm"});
  CHECK(torch::equal(e[0], e[1]));
}

TEST_CASE("masked cells are replaced by the mask token") {
  const auto gen = tiny_generator();
  torch::NoGradGuard guard;
  auto tokens = torch::randn({1, 6, 5, 4});
  auto masked = torch::rand({1, 6, 5}) < 0.5;
  masked[0][2][3] = true;
  const auto text = gen.embed_text({"a person stands still"});
  const auto base = gen.forward(tokens, masked, text);
  auto changed = tokens.clone();
  changed[0][2][3] = torch::full({4}, 1e3);
  CHECK(torch::equal(base, gen.forward(changed, masked, text)));
  masked[0][2][3] = false;
  CHECK_FALSE(torch::equal(base, gen.forward(changed, masked, text)));
}

TEST_CASE("positional embeddings distinguish masked cells") {
  const auto gen = tiny_generator();
  torch::NoGradGuard guard;
  auto tokens = torch::randn({1, 6, 5, 4});
  auto masked = torch::zeros({1, 6, 5}, torch::kBool);
  masked[0][1][0] = true;
  masked[0][4][3] = true;
  const auto text = gen.embed_text({"a person stands still"});
  const auto out = gen.forward(tokens, masked, text);
  // Swapping the two masked inputs leaves the input identical, so the
  // unpermuted outputs can only match if position were ignored.
  auto swapped = out.clone();
  auto a = swapped[0][1][0].clone();
  swapped[0][1][0] = swapped[0][4][3];
  swapped[0][4][3] = a;
  CHECK_FALSE(torch::allclose(swapped, out));
}

TEST_CASE("forward is a per-grid function of the batch") {
  const auto gen = tiny_generator();
  torch::NoGradGuard guard;
  const auto tokens = torch::randn({2, 6, 5, 4});
  const auto masked = torch::rand({2, 6, 5}) < 0.5;
  const auto text = gen.embed_text({"a person stands still", "a person runs forward"});
  const auto out = gen.forward(tokens, masked, text);
  const auto flip = torch::tensor({1, 0}, torch::kLong);
  const auto rev = gen.forward(tokens.index_select(0, flip), masked.index_select(0, flip), text.index_select(0, flip));
  CHECK(torch::allclose(rev.index_select(0, flip), out, 1e-5, 1e-6));
  CHECK_THROWS_AS(gen.forward(torch::randn({2, 6, 4, 4}), masked, text), Error);
  CHECK_THROWS_AS(gen.forward(tokens, masked, torch::randn({2, 7})), Error);
  CHECK_THROWS_AS(gen.forward(torch::randn({2, 17, 5, 4}), torch::ones({2, 17, 5}, torch::kBool), text), Error);
}

TEST_CASE("ancestral sampling is reproducible") {
  const auto gen = tiny_generator();
  torch::NoGradGuard guard;
  const auto zhat = torch::randn({7, 32});
  Rng a(3), b(3);
  const auto x = ddpm_sample(gen, zhat, a, 100);
  CHECK(torch::equal(x, ddpm_sample(gen, zhat, b, 100)));
  CHECK(x.sizes() == torch::IntArrayRef({7, 4}));
  Rng c(3);
  CHECK(ddpm_sample(gen, zhat, c, 10).isfinite().all().item<bool>());
  CHECK_THROWS_AS(ddpm_sample(gen, zhat, c, 101), Error);
}

TEST_CASE("sampling fills the grid on the cosine schedule") {
  const auto gen = tiny_generator();
  const auto pvae = tiny_pvae();
  Rng rng(6);
  const auto one = sample_motion(gen, pvae, "a person stands still", 32, 1, rng);
  CHECK(last_unmask_trace() == std::vector<int>{8 * 5});
  CHECK(one.frames() == 32);
  const auto r = sample_motions(gen, pvae, {"a person stands still", "a person runs forward"}, 32, 8, rng);
  CHECK(last_unmask_trace() == unmask_counts(40, 8));
  REQUIRE(r.size() == 2);
  for (const auto& m : r) {
    CHECK_NOTHROW(m.validate());
    for (double c : m.confidences.data) CHECK(c == 1.0);
  }
  Rng x(11), y(11);
  CHECK(sample_motion(gen, pvae, "a person stands still", 32, 4, x) ==
        sample_motion(gen, pvae, "a person stands still", 32, 4, y));
  CHECK_THROWS_AS(sample_motion(gen, pvae, "a person stands still", 32, 0, x), Error);
  CHECK_THROWS_AS(sample_motion(gen, pvae, "a person stands still", 4 * 17, 4, x), Error);
}

TEST_CASE("generator training: noisy cells never read, deterministic, loss falls") {
  const auto [skel, part] = build_default_skeleton();
  CorpusConfig cc;
  cc.size = 24;
  cc.length_min = cc.length_max = 33;
  cc.seed = 4;
  cc.noise.target = NoiseTarget::CredibleFraction;
  cc.noise.target_credible_fraction = 0.6;
  const auto corpus = make_corpus(cc);
  const auto pvae = tiny_pvae();
  const auto data = encode_corpus(pvae, corpus.records, true);
  double noisy = 0, cells = 0;
  for (const auto& ex : data) {
    noisy += torch::logical_not(ex.credible).sum().item<double>();
    cells += ex.credible.numel();
  }
  REQUIRE(noisy / cells > 0.2);

  auto g = tiny_gen();
  g.epochs = 150;
  g.batch_size = 8;
  g.learning_rate = 1e-3;
  const auto a = train_generator(data, 4, kNumParts, g);
  CHECK(a.noisy_reads == 0);
  REQUIRE(a.log.size() == 150);
  double late = 1e30;
  for (std::size_t k = a.log.size() - 5; k < a.log.size(); ++k) late = std::min(late, a.log[k].loss);
  CHECK(a.log.front().loss / late >= 5.0);

  const auto b = train_generator(data, 4, kNumParts, g);
  CHECK(nn::state_checksum(a.model.module()) == nn::state_checksum(b.model.module()));

  torch::NoGradGuard guard;
  const auto& gen = a.model;
  const auto e = gen.embed_text({"a person waves the left arm", "a person waves the right arm"});
  CHECK_FALSE(torch::allclose(e[0], e[1]));
  const auto all = torch::ones({2, 8, kNumParts}, torch::kBool);
  const auto zhat = gen.forward(torch::zeros({2, 8, kNumParts, 4}), all, e);
  CHECK_FALSE(torch::allclose(zhat[0], zhat[1]));
}

TEST_CASE("generator checkpoint round trip") {
  auto cfg = tiny_gen();
  cfg.head = HeadKind::Regression;
  const Generator gen(cfg, 4, kNumParts, TextVocab::from_grammar());
  const auto dir = std::filesystem::temp_directory_path() / "ropar_gen_ckpt";
  std::filesystem::remove_all(dir);
  gen.save(dir / "gen.bin", {{"epoch", 1}});
  const auto side = nn::read_sidecar(dir / "gen.bin");
  CHECK(side.at("schedule").at("T") == 100);
  CHECK(side.at("vocabulary").size() == gen.vocab().words().size());
  const auto loaded = Generator::load(dir / "gen.bin");
  CHECK(loaded.config().head == HeadKind::Regression);
  CHECK(nn::state_checksum(loaded.module()) == nn::state_checksum(gen.module()));
  torch::NoGradGuard guard;
  const auto zhat = torch::randn({3, 32});
  CHECK(torch::equal(loaded.predict_latent(zhat), gen.predict_latent(zhat)));
  CHECK_THROWS_AS(gen.predict_noise(torch::zeros({3, 4}), torch::ones({3}, torch::kLong), zhat), Error);
  std::filesystem::remove_all(dir);
}
