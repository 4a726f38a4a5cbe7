#include "oescn/attention.hpp"

#include <cmath>
#include <ostream>

namespace oescn {

void AttentionParams::validate(const BandLayout& layout) const {
  const int k = layout.total_k;
  auto square = [](const Matrix& m, int d, const char* what) {
    if (m.rows() != d || m.cols() != d)
      throw InvalidArgument(std::string("attention: ") + what +
                            " projection has wrong shape");
    if (!m.allFinite())
      throw NumericError(std::string("attention: ") + what +
                         " projection contains non-finite values");
  };
  square(global_wq, k, "global query");
  square(global_wk, k, "global key");
  square(global_wv, k, "global value");
  if (static_cast<int>(local_qkv.size()) != layout.scales())
    throw InvalidArgument("attention: local head count does not match layout");
  for (int i = 0; i < layout.scales(); ++i) {
    square(local_qkv[i][0], layout.per_scale_counts[i], "local query");
    square(local_qkv[i][1], layout.per_scale_counts[i], "local key");
    square(local_qkv[i][2], layout.per_scale_counts[i], "local value");
  }
  if (!std::isfinite(fusion_w_max) || !std::isfinite(fusion_w_avg) ||
      !std::isfinite(fusion_bias))
    throw NumericError("attention: fusion parameters non-finite");
}

void AttentionParams::set_zero() {
  global_wq.setZero();
  global_wk.setZero();
  global_wv.setZero();
  for (auto& qkv : local_qkv)
    for (auto& m : qkv) m.setZero();
  fusion_w_max = 0.0;
  fusion_w_avg = 0.0;
  fusion_bias = 0.0;
}

Matrix softmax_columns(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - mx).exp();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

SelfAttentionResult self_attention(const Matrix& x, const Matrix& wq,
                                   const Matrix& wk, const Matrix& wv,
                                   double scale) {
  const Eigen::Index d = x.cols();
  if (wq.rows() != d || wq.cols() != d || wk.rows() != d || wk.cols() != d ||
      wv.rows() != d || wv.cols() != d)
    throw InvalidArgument("self_attention: projection shapes do not match x");
  if (!(scale > 0.0))
    throw InvalidArgument("self_attention: scale must be positive");

  const Matrix q = x * wq;
  const Matrix k = x * wk;
  const Matrix v = x * wv;
  const Matrix logits = (q.transpose() * k) / scale;
  if (!logits.allFinite())
    throw NumericError("self_attention: non-finite attention logits");
  SelfAttentionResult res;
  res.a = softmax_columns(logits);
  res.h = v * res.a;
  if (!res.h.allFinite() || !res.a.allFinite())
    throw NumericError("self_attention: non-finite attention output");
  return res;
}

std::vector<Matrix> split_local(const BandCombination& s) {
  std::vector<Matrix> blocks;
  blocks.reserve(s.layout.scales());
  for (int i = 0; i < s.layout.scales(); ++i)
    blocks.push_back(s.s.middleCols(s.layout.offsets[i],
                                    s.layout.per_scale_counts[i]));
  return blocks;
}

HeadOutputs band_attention(const BandCombination& s,
                           const AttentionParams& params, double scale) {
  params.validate(s.layout);
  if (s.s.cols() != s.layout.total_k)
    throw InvalidArgument("band_attention: S width does not match layout");

  HeadOutputs out;
  const SelfAttentionResult glo = self_attention(
      s.s, params.global_wq, params.global_wk, params.global_wv, scale);
  out.h_glo = glo.h;
  out.global_weights = glo.a;

  out.h_loc.resize(s.s.rows(), s.layout.total_k);
  const std::vector<Matrix> blocks = split_local(s);
  for (int i = 0; i < s.layout.scales(); ++i) {
    const SelfAttentionResult loc =
        self_attention(blocks[i], params.local_qkv[i][0],
                       params.local_qkv[i][1], params.local_qkv[i][2], scale);
    out.h_loc.middleCols(s.layout.offsets[i], s.layout.per_scale_counts[i]) =
        loc.h;
    out.local_weights.push_back(loc.a);
  }
  return out;
}

Matrix head_fusion(const HeadOutputs& h, const AttentionParams& params) {
  if (h.h_glo.rows() != h.h_loc.rows() || h.h_glo.cols() != h.h_loc.cols())
    throw InvalidArgument("head_fusion: head outputs have mismatched shapes");
  const Matrix p_max = h.h_glo.cwiseMax(h.h_loc);
  const Matrix p_avg = 0.5 * (h.h_glo + h.h_loc);
  return (params.fusion_w_max * p_max + params.fusion_w_avg * p_avg).array() +
         params.fusion_bias;
}

Matrix apply_skip(const Matrix& m, const BandCombination& s) {
  if (m.rows() != s.s.rows() || m.cols() != s.s.cols())
    throw InvalidArgument("apply_skip: shape mismatch between M and S");
  return m + s.s;
}

AttentionParams random_attention_params(const BandLayout& layout, Rng& rng) {
  auto init = [&rng](int d) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix m(d, d);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c) m(r, c) = rng.uniform(-bound, bound);
    return m;
  };
  AttentionParams p;
  p.global_wq = init(layout.total_k);
  p.global_wk = init(layout.total_k);
  p.global_wv = init(layout.total_k);
  for (int i = 0; i < layout.scales(); ++i) {
    const int b = layout.per_scale_counts[i];
    p.local_qkv.push_back({init(b), init(b), init(b)});
  }
  p.fusion_w_max = 0.5;
  p.fusion_w_avg = 0.5;
  p.fusion_bias = 0.0;
  return p;
}

void write_attention_csv(std::ostream& os, const Matrix& weights) {
  for (Eigen::Index r = 0; r < weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < weights.cols(); ++c) {
      if (c) os << ',';
      os << format_double(weights(r, c));
    }
    os << '\n';
  }
}

}  // namespace oescn
