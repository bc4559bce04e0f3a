#include "ropar/credibility.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include <nlohmann/json.hpp>

namespace ropar {

Array2<double> part_confidence(const ConfidenceTrack& track, const PartPartition& partition) {
  std::size_t covered = 0;
  for (int p = 0; p < partition.num_parts(); ++p)
    for (int j : partition.chain_joints(p)) {
      if (j < 0 || static_cast<std::size_t>(j) >= track.cols)
        fail_data("confidence track has " + std::to_string(track.cols) +
                  " joints but the partition references joint " + std::to_string(j));
      ++covered;
    }
  if (covered != track.cols)
    fail_data("confidence track has " + std::to_string(track.cols) + " joints, partition covers " +
              std::to_string(covered));

  Array2<double> out(track.rows, partition.num_parts());
  for (int p = 0; p < partition.num_parts(); ++p) {
    const auto chain = partition.chain_joints(p);
    for (std::size_t i = 0; i < track.rows; ++i) {
      double sum = 0.0;
      for (int j : chain) sum += track(i, j);
      out(i, p) = sum / static_cast<double>(chain.size());
    }
  }
  return out;
}

CredibilityMask classify_parts(const Array2<double>& confidences, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) fail_config("tau must lie in [0,1], got " + std::to_string(tau));
  CredibilityMask mask;
  mask.tau = tau;
  mask.credible = BoolArray2(confidences.rows, confidences.cols);
  for (std::size_t k = 0; k < confidences.data.size(); ++k)
    mask.credible.data[k] = confidences.data[k] > tau ? 1 : 0;
  return mask;
}

double sequence_noise_ratio(const CredibilityMask& mask) {
  if (mask.credible.data.empty()) return 0.0;
  const auto noisy = std::count(mask.credible.data.begin(), mask.credible.data.end(), 0);
  return static_cast<double>(noisy) / static_cast<double>(mask.credible.data.size());
}

CredibilityMask credibility_of(const MotionRecord& record, const PartPartition& partition, double tau) {
  return classify_parts(part_confidence(record.confidences, partition), tau);
}

BiquadCoefficients butterworth_lowpass(double cutoff_hz, double fps) {
  const double k = std::tan(std::numbers::pi * cutoff_hz / fps);
  const double k2 = k * k;
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k2);
  BiquadCoefficients c{};
  c.b0 = k2 * norm;
  c.b1 = 2.0 * c.b0;
  c.b2 = c.b0;
  c.a1 = 2.0 * (k2 - 1.0) * norm;
  c.a2 = (1.0 - std::numbers::sqrt2 * k + k2) * norm;
  return c;
}

int butterworth_pad_length(const BiquadCoefficients& c, int frames) {
  // Settling length: samples until the slowest pole decays below 1e-4.
  const std::complex<double> disc = std::sqrt(std::complex<double>(c.a1 * c.a1 - 4.0 * c.a2));
  const double r = std::max(std::abs((-c.a1 + disc) / 2.0), std::abs((-c.a1 - disc) / 2.0));
  int settle = 6;
  if (r > 0.0 && r < 1.0) settle = static_cast<int>(std::ceil(std::log(1e-4) / std::log(r)));
  return std::clamp(settle / 2, 0, std::max(frames - 1, 0));
}

namespace {

// Direct form II transposed, state initialised to the steady state of x[0].
std::vector<double> lfilter_steady(const BiquadCoefficients& c, const std::vector<double>& x) {
  std::vector<double> y(x.size());
  if (x.empty()) return y;
  double z2 = (c.b2 - c.a2) * x[0];
  double z1 = (c.b1 - c.a1) * x[0] + z2;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double out = c.b0 * x[n] + z1;
    z1 = c.b1 * x[n] - c.a1 * out + z2;
    z2 = c.b2 * x[n] - c.a2 * out;
    y[n] = out;
  }
  return y;
}

std::vector<double> dct_project(const std::vector<double>& x, double cutoff_hz, double fps) {
  const std::size_t n = x.size();
  const double pi = std::numbers::pi;
  // Basis k oscillates at k * fps / (2n) Hz.
  const std::size_t keep =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::floor(2.0 * n * cutoff_hz / fps)) + 1);
  std::vector<double> coeff(keep, 0.0);
  for (std::size_t k = 0; k < keep; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    double s = 0.0;
    for (std::size_t t = 0; t < n; ++t) s += x[t] * std::cos(pi * (t + 0.5) * k / n);
    coeff[k] = scale * s;
  }
  std::vector<double> y(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double s = 0.0;
    for (std::size_t k = 0; k < keep; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      s += scale * coeff[k] * std::cos(pi * (t + 0.5) * k / n);
    }
    y[t] = s;
  }
  return y;
}

}  // namespace

std::vector<double> filtfilt(const BiquadCoefficients& c, const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n == 0) return {};
  const int pad = butterworth_pad_length(c, n);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (int k = pad; k >= 1; --k) ext.push_back(x[k]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (int k = 1; k <= pad; ++k) ext.push_back(x[n - 1 - k]);

  auto forward = lfilter_steady(c, ext);
  std::reverse(forward.begin(), forward.end());
  auto backward = lfilter_steady(c, forward);
  std::reverse(backward.begin(), backward.end());
  return {backward.begin() + pad, backward.begin() + pad + n};
}

MotionRecord lowpass_smooth(const MotionRecord& motion, double cutoff_hz, double fps, SmoothingFilter filter) {
  if (!(fps > 0.0) || !(cutoff_hz > 0.0) || !(cutoff_hz < fps / 2.0))
    fail_config("low-pass cutoff must satisfy 0 < cutoff_hz < fps/2 (cutoff " + std::to_string(cutoff_hz) +
                ", fps " + std::to_string(fps) + ")");
  MotionRecord out = motion;
  const BiquadCoefficients coeff = butterworth_lowpass(cutoff_hz, fps);
  std::vector<double> channel(motion.frames());
  for (int j = 0; j < motion.joints(); ++j)
    for (int axis = 0; axis < 3; ++axis) {
      for (int i = 0; i < motion.frames(); ++i) channel[i] = motion.at(i, j)[axis];
      const auto smoothed = filter == SmoothingFilter::Butterworth ? filtfilt(coeff, channel)
                                                                   : dct_project(channel, cutoff_hz, fps);
      for (int i = 0; i < motion.frames(); ++i) out.at(i, j)[axis] = smoothed[i];
    }
  return out;
}

CorpusStats corpus_stats(const std::vector<MotionRecord>& dataset, const PartPartition& partition, double tau) {
  CorpusStats stats;
  stats.tau = tau;
  std::size_t full_body = 0;
  std::array<std::size_t, kNumParts> part_credible{};
  for (const auto& record : dataset) {
    const auto mask = credibility_of(record, partition, tau);
    for (std::size_t i = 0; i < mask.frames(); ++i) {
      bool all = true;
      for (int p = 0; p < kNumParts; ++p) {
        const bool ok = mask.credible(i, p) != 0;
        part_credible[p] += ok;
        all = all && ok;
      }
      full_body += all;
    }
    stats.frames += mask.frames();
    const double ratio = sequence_noise_ratio(mask);
    stats.noise_ratio_histogram[std::min<std::size_t>(9, static_cast<std::size_t>(ratio * 10.0))]++;
  }
  stats.sequences = dataset.size();
  if (stats.frames > 0) {
    stats.full_body_fraction = static_cast<double>(full_body) / stats.frames;
    for (int p = 0; p < kNumParts; ++p)
      stats.part_credible_fraction[p] = static_cast<double>(part_credible[p]) / stats.frames;
  }
  return stats;
}

nlohmann::json to_json(const CorpusStats& stats, const PartPartition& partition) {
  nlohmann::json j;
  j["sequences"] = stats.sequences;
  j["frames"] = stats.frames;
  j["tau"] = stats.tau;
  j["full_body_fraction"] = stats.full_body_fraction;
  auto& parts = j["part_credible_fraction"] = nlohmann::json::object();
  for (int p = 0; p < kNumParts; ++p) parts[partition.parts[p]] = stats.part_credible_fraction[p];
  j["noise_ratio_histogram"] = stats.noise_ratio_histogram;
  return j;
}

}  // namespace ropar
