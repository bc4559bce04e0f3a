#pragma once

#include <array>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ropar/motion.hpp"

namespace ropar {

inline constexpr double kDefaultTau = 0.5;

/// Per-frame, per-part credible flags (rows are frames).
struct CredibilityMask {
  BoolArray2 credible;
  double tau = kDefaultTau;

  std::size_t frames() const { return credible.rows; }
  std::size_t parts() const { return credible.cols; }
};

/// Mean confidence of each part's kinematic chain at every frame (N x 5).
Array2<double> part_confidence(const ConfidenceTrack& track, const PartPartition& partition);

/// credible(i,p) iff C(i,p) > tau. Ties are noisy.
CredibilityMask classify_parts(const Array2<double>& confidences, double tau);

/// Fraction of (frame, part) cells labelled noisy.
double sequence_noise_ratio(const CredibilityMask& mask);

/// Convenience: classify a record's confidence track.
CredibilityMask credibility_of(const MotionRecord& record, const PartPartition& partition,
                               double tau = kDefaultTau);

enum class SmoothingFilter {
  Butterworth,    // zero-phase forward-backward 2nd-order IIR
  DctProjection,  // orthogonal projection onto the DCT basis below cutoff
};

struct BiquadCoefficients {
  double b0, b1, b2, a1, a2;  // a0 normalised to 1
};

/// Second-order Butterworth low-pass via the bilinear transform.
BiquadCoefficients butterworth_lowpass(double cutoff_hz, double fps);

/// Number of reflected samples padded on each end before filtering.
int butterworth_pad_length(const BiquadCoefficients& c, int frames);

/// Zero-phase filtering of one channel (forward pass, then backward pass).
std::vector<double> filtfilt(const BiquadCoefficients& c, const std::vector<double>& x);

/// Low-pass filter every joint trajectory. Confidences and prompt are untouched.
/// Requires 0 < cutoff_hz < fps/2.
MotionRecord lowpass_smooth(const MotionRecord& motion, double cutoff_hz, double fps,
                            SmoothingFilter filter = SmoothingFilter::Butterworth);

struct CorpusStats {
  std::size_t sequences = 0;
  std::size_t frames = 0;
  double tau = kDefaultTau;
  double full_body_fraction = 0.0;
  std::array<double, kNumParts> part_credible_fraction{};
  /// Per-sequence noise-ratio histogram over [0,1] in ten equal bins.
  std::array<std::size_t, 10> noise_ratio_histogram{};
};

CorpusStats corpus_stats(const std::vector<MotionRecord>& dataset, const PartPartition& partition,
                         double tau = kDefaultTau);
nlohmann::json to_json(const CorpusStats& stats, const PartPartition& partition);

}  // namespace ropar
