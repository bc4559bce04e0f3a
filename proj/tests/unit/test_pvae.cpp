#include "testing.hpp"

#include <cmath>
#include <filesystem>

#include "ropar/nn.hpp"
#include "ropar/pvae.hpp"
#include "ropar/synthdata.hpp"

using namespace ropar;

namespace {

PVAEConfig small_config(int f = 1) {
  PVAEConfig c;
  c.latent_dim = 4;
  c.hidden = 16;
  c.downsample = f;
  c.seed = 5;
  return c;
}

PVAE small_model(int f = 1, PVAEVariant v = PVAEVariant::Shared) {
  const auto [skel, part] = build_default_skeleton();
  auto c = small_config(f);
  c.variant = v;
  return PVAE(c, skel, part);
}

std::vector<MotionRecord> clean_corpus(std::size_t n, int length, std::uint64_t seed) {
  CorpusConfig cc;
  cc.size = n;
  cc.length_min = cc.length_max = length;
  cc.noisy = false;
  cc.seed = seed;
  return make_corpus(cc).records;
}

// Noisy frames in the second half of part 3 for every batch element.
torch::Tensor half_noisy_mask(int b, int t) {
  auto c = torch::ones({b, kNumParts, t}, torch::kBool);
  c.select(1, 3).narrow(1, t / 2, t - t / 2).fill_(false);
  return c;
}

}  // namespace

TEST_CASE("encode/decode shapes follow the downsampling factor") {
  for (int f : {1, 2, 4}) {
    const auto m = small_model(f);
    const auto x = torch::randn({2, kNumParts, 16, m.max_dim()});
    const auto post = m.encode_batch(x);
    CHECK(post.mu.sizes() == torch::IntArrayRef({2, kNumParts, 16 / f, 4}));
    CHECK(m.decode_batch(post.mu).sizes() == torch::IntArrayRef({2, kNumParts, 16, m.max_dim()}));
  }
  const auto full = small_model(1, PVAEVariant::FullBody);
  CHECK(full.tokens_per_frame() == 1);
  CHECK(full.max_dim() == 3 + 12 * 22);
}

TEST_CASE("untrained decoder maps zero latents to finite motion") {
  const auto m = small_model(2);
  const auto pos = decode_latents(m, torch::zeros({6, kNumParts, 4}), RootAnchor{});
  CHECK(pos.rows == 12);
  for (const auto& v : pos.data) CHECK(v.allFinite());
}

TEST_CASE("part embedding is the only thing distinguishing parts") {
  auto m = small_model();
  auto x = torch::zeros({1, kNumParts, 8, m.max_dim()});
  const auto arm = torch::randn({8, 99});
  x[0][1].narrow(1, 0, 99).copy_(arm);
  x[0][2].narrow(1, 0, 99).copy_(arm);
  torch::NoGradGuard guard;
  CHECK_FALSE(torch::equal(m.encode_batch(x).mu[0][1], m.encode_batch(x).mu[0][2]));
  m.zero_part_embeddings();
  const auto post = m.encode_batch(x);
  CHECK(torch::equal(post.mu[0][1], post.mu[0][2]));
}

TEST_CASE("log-variance is clamped") {
  const auto m = small_model();
  torch::NoGradGuard guard;
  const auto post = m.encode_batch(1e4 * torch::randn({1, kNumParts, 8, m.max_dim()}));
  CHECK(post.logvar.max().item<double>() <= 8.0);
  CHECK(post.logvar.min().item<double>() >= -8.0);
}

TEST_CASE("reparameterize draws from N(mu, exp(logvar))") {
  Rng rng(3);
  const auto mu = torch::full({100000}, 1.0);
  const auto z = reparameterize(mu, torch::full({100000}, std::log(4.0)), rng);
  CHECK(z.mean().item<double>() == doctest::Approx(1.0).epsilon(0.02));
  CHECK(z.var().item<double>() == doctest::Approx(4.0).epsilon(0.02));
  Rng again(3);
  CHECK(torch::equal(z, reparameterize(mu, torch::full({100000}, std::log(4.0)), again)));
}

TEST_CASE("KL term") {
  const auto zero = torch::zeros({3, 4}, torch::kFloat64);
  CHECK(gaussian_kl(zero, zero).abs().max().item<double>() < 1e-9);
  const auto mu = torch::randn({200, 4}, torch::kFloat64);
  const auto lv = 3 * torch::randn({200, 4}, torch::kFloat64);
  CHECK(gaussian_kl(mu, lv).min().item<double>() > 0.0);
  // Closed form for one dim: mu = 1, var = e -> (1 + e - 1 - 1) / 2.
  const auto one = gaussian_kl(torch::ones({1, 1}, torch::kFloat64), torch::ones({1, 1}, torch::kFloat64));
  CHECK(one.item<double>() == doctest::Approx((std::exp(1.0) - 1.0) / 2.0));
}

TEST_CASE("loss rejects batches without credible cells") {
  const auto m = small_model();
  Rng rng(1);
  const auto x = torch::randn({2, kNumParts, 8, m.max_dim()});
  try {
    pvae_loss(m, x, torch::zeros({2, kNumParts, 8}, torch::kBool), 1e-2, rng);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("no credible cells") != std::string::npos);
  }
}

TEST_CASE("window credibility requires every frame") {
  auto c = torch::ones({1, 1, 8}, torch::kBool);
  c[0][0][5] = false;
  const auto w = window_credible(c, 4);
  CHECK(w[0][0][0].item<bool>());
  CHECK_FALSE(w[0][0][1].item<bool>());
}

TEST_CASE("noisy cells do not influence the loss") {
  for (int f : {1, 2}) {
    const auto m = small_model(f);
    const auto c = half_noisy_mask(2, 16);
    auto x = torch::randn({2, kNumParts, 16, m.max_dim()});
    auto y = x.clone();
    y.select(1, 3).narrow(1, 8, 8).normal_(0.0, 50.0);
    Rng r1(9), r2(9);
    const auto a = pvae_loss(m, x, c, 1e-2, r1).total.item<float>();
    const auto b = pvae_loss(m, y, c, 1e-2, r2).total.item<float>();
    CHECK(a == b);
  }
}

TEST_CASE("gradients at noisy inputs are exactly zero") {
  const auto m = small_model(2);
  const auto c = half_noisy_mask(2, 16);
  auto x = torch::randn({2, kNumParts, 16, m.max_dim()}).requires_grad_(true);
  Rng rng(4);
  pvae_loss(m, x, c, 1e-2, rng).total.backward();
  const auto g = x.grad();
  CHECK(g.select(1, 3).narrow(1, 8, 8).abs().max().item<double>() == 0.0);
  CHECK(g.select(1, 3).narrow(1, 0, 8).narrow(2, 0, 99).abs().max().item<double>() > 0.0);
  CHECK(g.select(1, 0).abs().max().item<double>() > 0.0);
}

TEST_CASE("analytic gradients match central differences") {
  auto m = small_model();
  m.module().to(torch::kFloat64);
  const auto x = torch::randn({2, kNumParts, 8, m.max_dim()}, torch::kFloat64);
  const auto c = half_noisy_mask(2, 8);
  auto eval = [&] {
    Rng rng(21);
    return pvae_loss(m, x, c, 1e-2, rng).total;
  };
  auto w = m.module().named_parameters()["codec0.e1.weight"];
  for (auto& p : m.module().parameters()) p.mutable_grad() = torch::Tensor();
  eval().backward();
  const auto grad = w.grad().reshape(-1).clone();
  auto flat = w.detach().view(-1);
  const double h = 1e-6;
  for (int k = 0; k < 10; ++k) {
    const auto idx = k * 37;
    const double orig = flat[idx].item<double>();
    flat[idx] = orig + h;
    const double up = eval().item<double>();
    flat[idx] = orig - h;
    const double down = eval().item<double>();
    flat[idx] = orig;
    const double fd = (up - down) / (2 * h);
    const double an = grad[idx].item<double>();
    CHECK(std::abs(fd - an) <= 1e-4 * std::max(std::abs(an), 1e-6));
  }
}

TEST_CASE("shared codec serves every part") {
  const auto m = small_model();
  const auto count = nn::parameter_count(m.module());
  for (int part = 0; part < kNumParts; ++part) {
    auto c = torch::zeros({1, kNumParts, 8}, torch::kBool);
    c.select(1, part).fill_(true);
    for (auto& p : m.module().parameters()) p.mutable_grad() = torch::Tensor();
    Rng rng(2);
    pvae_loss(m, torch::randn({1, kNumParts, 8, m.max_dim()}), c, 1e-2, rng).total.backward();
    for (const auto& item : m.module().named_parameters())
      if (item.key().rfind("codec0.", 0) == 0) CHECK(item.value().grad().defined());
    CHECK(nn::parameter_count(m.module()) == count);
  }
  const auto [skel, part] = build_default_skeleton();
  auto plain = small_config();
  plain.part_embed_dim = 0;
  const auto per_part = small_model(1, PVAEVariant::PerPart);
  CHECK(per_part.codec_parameter_count() == 5 * PVAE(plain, skel, part).codec_parameter_count());
}

TEST_CASE("training reduces validation error tenfold and is deterministic") {
  const auto [skel, part] = build_default_skeleton();
  const auto corpus = clean_corpus(20, 33, 12);
  PVAEConfig c;
  c.seed = 5;
  c.epochs = 200;
  c.crop_frames = 32;
  c.batch_size = 4;
  c.validation_fraction = 0.2;
  const auto a = train_pvae(corpus, skel, part, c);
  REQUIRE(a.log.size() == 200);
  double best = 1e30;
  for (const auto& e : a.log) best = std::min(best, e.val_recon);
  CHECK(a.log.front().val_recon / best >= 10.0);
  CHECK(a.log[a.best_epoch - 1].val_recon == best);

  const auto b = train_pvae(corpus, skel, part, c);
  CHECK(nn::state_checksum(a.model.module()) == nn::state_checksum(b.model.module()));

  auto c0 = c;
  c0.kl_weight = 0.0;
  c0.epochs = 60;
  auto c1 = c0;
  c1.kl_weight = 1e-2;
  const auto r0 = train_pvae(corpus, skel, part, c0);
  const auto r1 = train_pvae(corpus, skel, part, c1);
  CHECK(r0.log.back().recon < r1.log.back().recon);
}

TEST_CASE("checkpoint round trip") {
  const auto m = small_model(2);
  const auto dir = std::filesystem::temp_directory_path() / "ropar_pvae_ckpt";
  std::filesystem::remove_all(dir);
  m.save(dir / "vae.bin", {{"epoch", 3}});
  const auto side = nn::read_sidecar(dir / "vae.bin");
  CHECK(side.at("epoch") == 3);
  CHECK(side.at("parameter_count") == nn::parameter_count(m.module()));
  const auto loaded = PVAE::load(dir / "vae.bin");
  CHECK(loaded.config().downsample == 2);
  CHECK(nn::state_checksum(loaded.module()) == nn::state_checksum(m.module()));
  const auto rec = generate_clean("a person waves the left arm", 17, 3);
  CHECK(reconstruct(loaded, rec) == reconstruct(m, rec));
  std::filesystem::remove_all(dir);
}
