#pragma once

#include <cstdint>
#include <string>

#include "oescn/common.hpp"

namespace oescn {

// One labeled multichannel EEG trial. Samples are stored as 32-bit floats,
// matching the on-disk container, and promoted to double for all analysis.
struct TrialRecording {
  MatrixF samples;  // C channels x T time points
  double rate_hz = 1000.0;
  int label = 0;
  std::string subject_id;

  Eigen::Index channels() const { return samples.rows(); }
  Eigen::Index time_points() const { return samples.cols(); }
};

struct WelchConfig {
  int window_len = 200;
  int overlap_points = 8;
  int fft_len = 1000;
  double f_lo_hz = 0.5;
  double f_hi_hz = 70.0;

  int hop() const { return window_len - overlap_points; }
  void validate(double rate_hz) const;
};

// Per-channel power densities on a fixed frequency grid inside the analysis
// band. freqs_hz is strictly increasing; values are nonnegative.
struct PsdFeatures {
  Matrix values;   // C x P
  Vector freqs_hz; // P

  Eigen::Index channels() const { return values.rows(); }
  Eigen::Index bins() const { return values.cols(); }
};

// w[k] = 0.54 - 0.46 cos(2 pi k / (n-1)); single-point window is [1].
Vector hamming_window(int n);

// Splits one channel into overlapping windows, one column per segment.
// Trailing samples that do not fill a window are discarded.
Matrix segment_signal(const Eigen::Ref<const Vector>& channel,
                      const WelchConfig& cfg);

// The frequency grid the Welch estimate is evaluated on: FFT bins
// j * rate / fft_len restricted to [f_lo, f_hi].
Vector welch_grid_hz(const WelchConfig& cfg, double rate_hz);

// Averaged windowed periodograms per channel, one-sided scaling with power
// doubling for bins strictly between DC and Nyquist.
PsdFeatures welch_psd(const TrialRecording& trial, const WelchConfig& cfg);

}  // namespace oescn
