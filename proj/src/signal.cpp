#include "oescn/signal.hpp"

#include <cmath>
#include <vector>

namespace oescn {

void WelchConfig::validate(double rate_hz) const {
  if (window_len < 1) throw InvalidArgument("welch: window_len must be >= 1");
  if (overlap_points < 0 || overlap_points >= window_len)
    throw InvalidArgument("welch: overlap must satisfy 0 <= overlap < window_len");
  if (window_len > fft_len)
    throw InvalidArgument("welch: window_len must not exceed fft_len");
  if (!(f_lo_hz < f_hi_hz))
    throw InvalidArgument("welch: f_lo must be below f_hi");
  if (f_hi_hz > rate_hz / 2.0 + 1e-9)
    throw InvalidArgument("welch: f_hi exceeds Nyquist frequency");
}

Vector hamming_window(int n) {
  if (n < 1) throw InvalidArgument("hamming_window: n must be >= 1");
  Vector w(n);
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  for (int k = 0; k < n; ++k)
    w[k] = 0.54 - 0.46 * std::cos(2.0 * M_PI * k / (n - 1));
  return w;
}

Matrix segment_signal(const Eigen::Ref<const Vector>& channel,
                      const WelchConfig& cfg) {
  const Eigen::Index t = channel.size();
  if (t < cfg.window_len)
    throw InvalidArgument("segment_signal: signal shorter than window");
  const int hop = cfg.hop();
  const Eigen::Index n_seg = (t - cfg.window_len) / hop + 1;
  Matrix segs(cfg.window_len, n_seg);
  for (Eigen::Index j = 0; j < n_seg; ++j)
    segs.col(j) = channel.segment(j * hop, cfg.window_len);
  return segs;
}

namespace {

struct BinRange {
  int lo = 0;
  int count = 0;
};

BinRange retained_bins(const WelchConfig& cfg, double rate_hz) {
  const double hz_per_bin = rate_hz / cfg.fft_len;
  int lo = static_cast<int>(std::ceil(cfg.f_lo_hz / hz_per_bin - 1e-9));
  int hi = static_cast<int>(std::floor(cfg.f_hi_hz / hz_per_bin + 1e-9));
  lo = std::max(lo, 0);
  hi = std::min(hi, cfg.fft_len / 2);
  if (hi < lo)
    throw InvalidArgument("welch: no FFT bins inside the analysis band");
  return {lo, hi - lo + 1};
}

}  // namespace

Vector welch_grid_hz(const WelchConfig& cfg, double rate_hz) {
  cfg.validate(rate_hz);
  const BinRange bins = retained_bins(cfg, rate_hz);
  Vector f(bins.count);
  for (int i = 0; i < bins.count; ++i)
    f[i] = (bins.lo + i) * rate_hz / cfg.fft_len;
  return f;
}

PsdFeatures welch_psd(const TrialRecording& trial, const WelchConfig& cfg) {
  cfg.validate(trial.rate_hz);
  if (trial.channels() < 1)
    throw InvalidArgument("welch: trial must have at least one channel");
  if (trial.time_points() < cfg.window_len)
    throw InvalidArgument("welch: trial shorter than the analysis window");
  if (!trial.samples.allFinite())
    throw DataError("welch: trial contains non-finite samples");

  const BinRange bins = retained_bins(cfg, trial.rate_hz);
  const int p = bins.count;
  const int win = cfg.window_len;
  const Vector w = hamming_window(win);
  const double win_energy = w.squaredNorm();

  // DFT of a zero-padded segment only sums over the window support, so the
  // retained bins come from two P x win trig tables and a GEMM per channel.
  Matrix cos_t(p, win), sin_t(p, win);
  for (int i = 0; i < p; ++i) {
    const long bin = bins.lo + i;
    for (int k = 0; k < win; ++k) {
      const long m = (bin * k) % cfg.fft_len;
      const double ang = 2.0 * M_PI * static_cast<double>(m) / cfg.fft_len;
      cos_t(i, k) = std::cos(ang);
      sin_t(i, k) = std::sin(ang);
    }
  }

  Vector scale(p);
  for (int i = 0; i < p; ++i) {
    const int bin = bins.lo + i;
    const bool interior = bin > 0 && 2 * bin < cfg.fft_len;
    scale[i] = (interior ? 2.0 : 1.0) / (trial.rate_hz * win_energy);
  }

  const Eigen::Index c_count = trial.channels();
  PsdFeatures out;
  out.freqs_hz = welch_grid_hz(cfg, trial.rate_hz);
  out.values.resize(c_count, p);

  for (Eigen::Index c = 0; c < c_count; ++c) {
    const Vector channel = trial.samples.row(c).cast<double>();
    Matrix segs = segment_signal(channel, cfg);
    segs.array().colwise() *= w.array();
    const Matrix re = cos_t * segs;  // p x n_seg
    const Matrix im = sin_t * segs;
    const Vector mean_power =
        (re.array().square() + im.array().square()).rowwise().mean();
    out.values.row(c) = (mean_power.array() * scale.array()).transpose();
  }
  return out;
}

}  // namespace oescn
