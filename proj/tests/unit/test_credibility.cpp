#include "testing.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "ropar/credibility.hpp"
#include "ropar/synthdata.hpp"

using namespace ropar;

namespace {

ConfidenceTrack random_track(int frames, std::mt19937& rng) {
  ConfidenceTrack t(frames, 22);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Amplitude of the component at `hz` over samples [lo, hi), by least squares
// against sin/cos at that frequency.
double amplitude_at(const std::vector<double>& x, double hz, double fps, int lo, int hi) {
  double ss = 0, cc = 0, sc = 0, xs = 0, xc = 0;
  for (int i = lo; i < hi; ++i) {
    const double w = 2.0 * std::numbers::pi * hz * i / fps;
    const double s = std::sin(w), c = std::cos(w);
    ss += s * s;
    cc += c * c;
    sc += s * c;
    xs += x[i] * s;
    xc += x[i] * c;
  }
  const double det = ss * cc - sc * sc;
  const double a = (xs * cc - xc * sc) / det;
  const double b = (xc * ss - xs * sc) / det;
  return std::hypot(a, b);
}

// |H(e^{jw})|^2: zero-phase forward-backward gain of the biquad.
double filtfilt_gain(const BiquadCoefficients& c, double hz, double fps) {
  const std::complex<double> z = std::polar(1.0, -2.0 * std::numbers::pi * hz / fps);
  const auto h = (c.b0 + c.b1 * z + c.b2 * z * z) / (1.0 + c.a1 * z + c.a2 * z * z);
  return std::norm(h);
}

MotionRecord sinusoid_record(double hz, double fps, int frames) {
  MotionRecord r("sin", "a person stands still", fps, frames, 22);
  for (int i = 0; i < frames; ++i)
    for (int j = 0; j < 22; ++j) r.at(i, j) = Vec3(std::sin(2 * std::numbers::pi * hz * i / fps), 0.5 * j, 0.0);
  return r;
}

}  // namespace

TEST_CASE("part confidence of constant track is constant") {
  const auto part = build_default_skeleton().second;
  const auto c = part_confidence(ConfidenceTrack(7, 22, 1.0), part);
  CHECK(c.rows == 7);
  CHECK(c.cols == 5);
  for (double v : c.data) CHECK(v == 1.0);
}

TEST_CASE("part confidence averages the chain joints") {
  const auto part = build_default_skeleton().second;
  ConfidenceTrack t(1, 22, 1.0);
  const auto chain = part.chain_joints(1);
  REQUIRE(chain.size() == 4);
  const double vals[] = {0.9, 0.2, 0.1, 0.4};
  for (int k = 0; k < 4; ++k) t(0, chain[k]) = vals[k];
  CHECK(part_confidence(t, part)(0, 1) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("part confidence matches a brute-force per-chain mean") {
  const auto [skel, part] = build_default_skeleton();
  // Oracle chains written out by joint name, independent of chain_joints().
  const std::vector<std::vector<std::string>> chains = {
      {"pelvis", "spine1", "spine2", "spine3", "neck", "head"},
      {"left_collar", "left_shoulder", "left_elbow", "left_wrist"},
      {"right_collar", "right_shoulder", "right_elbow", "right_wrist"},
      {"left_hip", "left_knee", "left_ankle", "left_foot"},
      {"right_hip", "right_knee", "right_ankle", "right_foot"},
  };
  std::mt19937 rng(3);
  const auto track = random_track(40, rng);
  const auto c = part_confidence(track, part);
  for (int i = 0; i < 40; ++i)
    for (int p = 0; p < 5; ++p) {
      double s = 0;
      for (const auto& name : chains[p]) s += track(i, skel.index_of(name));
      CHECK(c(i, p) == doctest::Approx(s / chains[p].size()).epsilon(1e-14));
    }
}

TEST_CASE("part confidence rejects a mismatched track") {
  const auto part = build_default_skeleton().second;
  CHECK_THROWS_AS(part_confidence(ConfidenceTrack(3, 21, 1.0), part), Error);
  CHECK_THROWS_AS(part_confidence(ConfidenceTrack(3, 24, 1.0), part), Error);
}

TEST_CASE("part confidence is invariant to joint order within a chain") {
  const auto part = build_default_skeleton().second;
  std::mt19937 rng(5);
  auto track = random_track(10, rng);
  const auto before = part_confidence(track, part);
  const auto chain = part.chain_joints(3);
  for (int i = 0; i < 10; ++i) std::swap(track(i, chain[0]), track(i, chain[3]));
  const auto after = part_confidence(track, part);
  for (std::size_t k = 0; k < before.data.size(); ++k) CHECK(after.data[k] == doctest::Approx(before.data[k]));
}

TEST_CASE("classification uses a strict threshold") {
  Array2<double> c(1, 2);
  c(0, 0) = 0.9;
  c(0, 1) = 0.5;
  const auto m = classify_parts(c, 0.5);
  CHECK(m.credible(0, 0) == 1);
  CHECK(m.credible(0, 1) == 0);
  CHECK_THROWS_AS(classify_parts(c, 1.5), Error);
}

TEST_CASE("classification equals elementwise comparison and is monotone in tau") {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  Array2<double> c(50, 5);
  for (auto& v : c.data) v = u(rng);
  for (double tau : {0.0, 0.2, 0.5, 0.77, 1.0}) {
    const auto m = classify_parts(c, tau);
    for (std::size_t k = 0; k < c.data.size(); ++k) CHECK((m.credible.data[k] != 0) == (c.data[k] > tau));
  }
  for (int trial = 0; trial < 50; ++trial) {
    const double lo = u(rng), hi = lo + (1 - lo) * u(rng);
    const auto a = classify_parts(c, lo), b = classify_parts(c, hi);
    for (std::size_t k = 0; k < c.data.size(); ++k)
      if (!a.credible.data[k]) CHECK_FALSE(b.credible.data[k]);
  }
}

TEST_CASE("sequence noise ratio counts noisy cells") {
  CredibilityMask m;
  m.credible = BoolArray2(2, 5, 1);
  CHECK(sequence_noise_ratio(m) == 0.0);
  m.credible = BoolArray2(2, 5, 0);
  CHECK(sequence_noise_ratio(m) == 1.0);
  m.credible = BoolArray2(2, 5, 1);
  m.credible(0, 1) = m.credible(1, 2) = m.credible(1, 4) = 0;
  CHECK(sequence_noise_ratio(m) == doctest::Approx(0.3));

  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(1e-6, 1);
  Array2<double> c(20, 5);
  for (auto& v : c.data) v = u(rng);
  CHECK(sequence_noise_ratio(classify_parts(c, 0.0)) == 0.0);
}

TEST_CASE("low-pass keeps a constant signal") {
  MotionRecord r("c", "a person stands still", 20.0, 50, 22);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 22; ++j) r.at(i, j) = Vec3(0.3, 1.2 + j, -4.0);
  for (auto f : {SmoothingFilter::Butterworth, SmoothingFilter::DctProjection}) {
    const auto s = lowpass_smooth(r, 6.0, 20.0, f);
    for (std::size_t k = 0; k < r.positions.data.size(); ++k)
      CHECK((s.positions.data[k] - r.positions.data[k]).norm() < 1e-9);
    CHECK(s.confidences == r.confidences);
    CHECK(s.prompt == r.prompt);
    CHECK(s.frames() == r.frames());
  }
}

TEST_CASE("low-pass frequency response matches the filter's analytic gain") {
  const double fps = 20.0, cutoff = 6.0;
  const int n = 200;
  const auto coeff = butterworth_lowpass(cutoff, fps);
  for (double hz : {0.5, 1.0, 8.0, 9.0}) {
    const auto s = lowpass_smooth(sinusoid_record(hz, fps, n), cutoff, fps);
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) x[i] = s.at(i, 0).x();
    const double measured = amplitude_at(x, hz, fps, 40, 160);
    const double oracle = filtfilt_gain(coeff, hz, fps);
    CHECK(measured == doctest::Approx(oracle).epsilon(0.02));
    if (hz > cutoff) CHECK(measured <= 0.5);
    if (hz <= 1.0) CHECK(std::abs(measured - 1.0) < 0.05);
  }
}

TEST_CASE("projection low-pass passes slow and removes fast sinusoids") {
  const double fps = 20.0;
  const auto slow = lowpass_smooth(sinusoid_record(1.0, fps, 200), 6.0, fps, SmoothingFilter::DctProjection);
  const auto fast = lowpass_smooth(sinusoid_record(9.0, fps, 200), 6.0, fps, SmoothingFilter::DctProjection);
  std::vector<double> a(200), b(200);
  for (int i = 0; i < 200; ++i) {
    a[i] = slow.at(i, 0).x();
    b[i] = fast.at(i, 0).x();
  }
  CHECK(std::abs(amplitude_at(a, 1.0, fps, 40, 160) - 1.0) < 0.05);
  CHECK(amplitude_at(b, 9.0, fps, 40, 160) <= 0.5);
}

TEST_CASE("smoothing a second time") {
  const auto clean = generate_clean("a person waves the left arm while running forward", 64, 4);
  SUBCASE("projection filter is idempotent") {
    const auto once = lowpass_smooth(clean, 6.0, 20.0, SmoothingFilter::DctProjection);
    const auto twice = lowpass_smooth(once, 6.0, 20.0, SmoothingFilter::DctProjection);
    double worst = 0;
    for (std::size_t k = 0; k < once.positions.data.size(); ++k)
      worst = std::max(worst, (twice.positions.data[k] - once.positions.data[k]).norm());
    CHECK(worst < 1e-6);
  }
  SUBCASE("butterworth second pass moves positions less than the first") {
    const auto once = lowpass_smooth(clean, 6.0, 20.0);
    const auto twice = lowpass_smooth(once, 6.0, 20.0);
    double first = 0, second = 0;
    for (std::size_t k = 0; k < once.positions.data.size(); ++k) {
      first = std::max(first, (once.positions.data[k] - clean.positions.data[k]).norm());
      second = std::max(second, (twice.positions.data[k] - once.positions.data[k]).norm());
    }
    CHECK(second < first);
  }
}

TEST_CASE("low-pass rejects invalid cutoffs") {
  const auto r = sinusoid_record(1.0, 20.0, 30);
  CHECK_THROWS_AS(lowpass_smooth(r, 0.0, 20.0), Error);
  CHECK_THROWS_AS(lowpass_smooth(r, 10.0, 20.0), Error);
  CHECK_THROWS_AS(lowpass_smooth(r, -1.0, 20.0), Error);
}

TEST_CASE("corpus statistics") {
  const auto part = build_default_skeleton().second;
  std::vector<MotionRecord> data;
  for (int k = 0; k < 3; ++k) data.emplace_back("r" + std::to_string(k), "a person stands still", 20.0, 12, 22);

  SUBCASE("all confident") {
    const auto s = corpus_stats(data, part);
    CHECK(s.full_body_fraction == 1.0);
    CHECK(s.noise_ratio_histogram[0] == 3);
  }
  SUBCASE("left arm always hidden") {
    for (auto& r : data)
      for (int i = 0; i < r.frames(); ++i)
        for (int j : part.chain_joints(1)) r.confidences(i, j) = 0.1;
    const auto s = corpus_stats(data, part);
    CHECK(s.part_credible_fraction[1] == 0.0);
    CHECK(s.part_credible_fraction[0] == 1.0);
    CHECK(s.full_body_fraction == 0.0);
  }
  SUBCASE("planted 24% full-body frames") {
    CorpusConfig cfg;
    cfg.size = 150;
    cfg.seed = 17;
    cfg.noise.target_full_body_fraction = 0.24;
    const auto corpus = make_corpus(cfg);
    const auto s = corpus_stats(corpus.records, part);
    CHECK(std::abs(s.full_body_fraction - 0.24) <= 0.01);
  }
}
