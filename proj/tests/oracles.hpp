// Independent reference implementations used to cross-check the library.
// Everything here is deliberately written as plain loops over std types,
// sharing no code with the implementation paths it verifies.
#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "oescn/attention.hpp"
#include "oescn/bandgen.hpp"
#include "oescn/grid.hpp"
#include "oescn/signal.hpp"

namespace oracle {

// Brute-force Welch estimate: full-length complex DFT per retained bin,
// per-segment periodograms averaged afterwards.
inline oescn::Matrix welch_psd(const oescn::TrialRecording& trial,
                               const oescn::WelchConfig& cfg) {
  const int win = cfg.window_len;
  const int hop = win - cfg.overlap_points;
  const int fft = cfg.fft_len;
  const int t_len = static_cast<int>(trial.time_points());
  const int n_seg = (t_len - win) / hop + 1;

  std::vector<double> w(win);
  for (int k = 0; k < win; ++k)
    w[k] = win == 1 ? 1.0 : 0.54 - 0.46 * std::cos(2.0 * M_PI * k / (win - 1));
  double energy = 0.0;
  for (double v : w) energy += v * v;

  std::vector<int> bins;
  for (int j = 0; j <= fft / 2; ++j) {
    const double f = j * trial.rate_hz / fft;
    if (f >= cfg.f_lo_hz - 1e-9 && f <= cfg.f_hi_hz + 1e-9) bins.push_back(j);
  }

  oescn::Matrix out(trial.channels(), static_cast<Eigen::Index>(bins.size()));
  for (Eigen::Index c = 0; c < trial.channels(); ++c) {
    for (std::size_t bi = 0; bi < bins.size(); ++bi) {
      const int j = bins[bi];
      double acc = 0.0;
      for (int s = 0; s < n_seg; ++s) {
        std::complex<double> x(0.0, 0.0);
        for (int m = 0; m < fft; ++m) {
          const double v =
              m < win
                  ? w[m] * static_cast<double>(trial.samples(c, s * hop + m))
                  : 0.0;
          const double ang = -2.0 * M_PI * j * m / fft;
          x += v * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        const bool interior = j > 0 && 2 * j < fft;
        acc += (interior ? 2.0 : 1.0) * std::norm(x) /
               (trial.rate_hz * energy);
      }
      out(c, static_cast<Eigen::Index>(bi)) = acc / n_seg;
    }
  }
  return out;
}

// Nested-loop band combination: per channel, per scale, per slice, per bin.
inline oescn::Matrix band_combination(const oescn::Matrix& psd,
                                      const std::vector<int>& widths, int g) {
  const int p = static_cast<int>(psd.cols());
  std::vector<int> counts;
  int k_total = 0;
  for (int l : widths) {
    counts.push_back((p - l) / g);
    k_total += counts.back();
  }
  oescn::Matrix s(psd.rows(), k_total);
  for (Eigen::Index c = 0; c < psd.rows(); ++c) {
    int col = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      for (int j = 0; j < counts[i]; ++j) {
        double acc = 0.0;
        for (int m = 0; m < widths[i]; ++m) acc += psd(c, j * g + m);
        s(c, col++) = acc / widths[i];
      }
    }
  }
  return s;
}

// Elementwise evaluation of one self-attention head.
struct AttentionHead {
  oescn::Matrix h;
  oescn::Matrix a;
};

inline AttentionHead self_attention(const oescn::Matrix& x,
                                    const oescn::Matrix& wq,
                                    const oescn::Matrix& wk,
                                    const oescn::Matrix& wv, double scale) {
  const int c = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  auto matmul = [](const oescn::Matrix& a, const oescn::Matrix& b) {
    oescn::Matrix r(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < b.cols(); ++j) {
        double acc = 0.0;
        for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
        r(i, j) = acc;
      }
    return r;
  };
  const oescn::Matrix q = matmul(x, wq);
  const oescn::Matrix kk = matmul(x, wk);
  const oescn::Matrix v = matmul(x, wv);

  oescn::Matrix logits(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int r = 0; r < c; ++r) acc += q(r, i) * kk(r, j);
      logits(i, j) = acc / scale;
    }

  oescn::Matrix a(d, d);
  for (int j = 0; j < d; ++j) {
    double mx = logits(0, j);
    for (int i = 1; i < d; ++i) mx = std::max(mx, logits(i, j));
    double sum = 0.0;
    for (int i = 0; i < d; ++i) {
      a(i, j) = std::exp(logits(i, j) - mx);
      sum += a(i, j);
    }
    for (int i = 0; i < d; ++i) a(i, j) /= sum;
  }

  AttentionHead head;
  head.a = a;
  head.h = matmul(v, a);
  return head;
}

// Full attention stage: global head, local heads, max/avg fusion, skip.
inline oescn::Matrix attention_chain(const oescn::Matrix& s,
                                     const oescn::BandLayout& layout,
                                     const oescn::AttentionParams& params,
                                     double scale) {
  const AttentionHead glo =
      self_attention(s, params.global_wq, params.global_wk, params.global_wv,
                     scale);
  oescn::Matrix h_loc(s.rows(), s.cols());
  for (int i = 0; i < layout.scales(); ++i) {
    const int off = layout.offsets[i];
    const int b = layout.per_scale_counts[i];
    oescn::Matrix block(s.rows(), b);
    for (Eigen::Index r = 0; r < s.rows(); ++r)
      for (int j = 0; j < b; ++j) block(r, j) = s(r, off + j);
    const AttentionHead loc =
        self_attention(block, params.local_qkv[i][0], params.local_qkv[i][1],
                       params.local_qkv[i][2], scale);
    for (Eigen::Index r = 0; r < s.rows(); ++r)
      for (int j = 0; j < b; ++j) h_loc(r, off + j) = loc.h(r, j);
  }
  oescn::Matrix m_prime(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r)
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      const double g = glo.h(r, c);
      const double l = h_loc(r, c);
      const double fused = params.fusion_w_max * std::max(g, l) +
                           params.fusion_w_avg * 0.5 * (g + l) +
                           params.fusion_bias;
      m_prime(r, c) = fused + s(r, c);
    }
  return m_prime;
}

// Plain-scalar Adam, one parameter vector, analytic gradient supplied.
inline std::vector<std::vector<double>> adam_trace(
    std::vector<double> theta,
    const std::function<std::vector<double>(const std::vector<double>&)>& grad,
    int steps, double lr, double beta1, double beta2, double eps) {
  std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0);
  std::vector<std::vector<double>> trace;
  for (int t = 1; t <= steps; ++t) {
    const std::vector<double> g = grad(theta);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mh = m[i] / (1.0 - std::pow(beta1, t));
      const double vh = v[i] / (1.0 - std::pow(beta2, t));
      theta[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    trace.push_back(theta);
  }
  return trace;
}

inline double rel_err(double a, double b, double floor_mag = 1e-300) {
  const double denom = std::max({std::abs(a), std::abs(b), floor_mag});
  return std::abs(a - b) / denom;
}

// Central finite differences against analytic gradients. Failures are
// re-estimated with a smaller step: truncation/kink artifacts shrink, real
// gradient bugs do not.
struct FdOutcome {
  double max_err = 0.0;
  std::size_t checked = 0;
  bool ok = true;
};

inline FdOutcome finite_difference_check(
    const std::function<double()>& eval, oescn::Grid& param,
    const oescn::Grid& analytic, double step = 1e-4, double tol = 1e-4) {
  FdOutcome out;
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double saved = param[i];
    param[i] = saved + step;
    const double fp = eval();
    param[i] = saved - step;
    const double fm = eval();
    param[i] = saved;
    double fd = (fp - fm) / (2.0 * step);
    const double g = analytic[i];
    auto err_of = [&](double fd_est) {
      return std::abs(fd_est - g) / std::max({std::abs(fd_est), std::abs(g),
                                              1e-2});
    };
    double err = err_of(fd);
    if (err >= tol) {
      const double h2 = step / 8.0;
      param[i] = saved + h2;
      const double fp2 = eval();
      param[i] = saved - h2;
      const double fm2 = eval();
      param[i] = saved;
      fd = (fp2 - fm2) / (2.0 * h2);
      err = err_of(fd);
    }
    out.max_err = std::max(out.max_err, err);
    if (err >= tol) out.ok = false;
    ++out.checked;
  }
  return out;
}

}  // namespace oracle
