#pragma once

#include <array>
#include <iosfwd>
#include <vector>

#include "oescn/bandgen.hpp"
#include "oescn/common.hpp"

namespace oescn {

// Projection matrices for the global head and each local head, plus the two
// weights and bias of the 1x1 fusion convolution.
struct AttentionParams {
  Matrix global_wq, global_wk, global_wv;            // K x K
  std::vector<std::array<Matrix, 3>> local_qkv;      // B_i x B_i per scale
  double fusion_w_max = 0.5;
  double fusion_w_avg = 0.5;
  double fusion_bias = 0.0;

  void validate(const BandLayout& layout) const;
  void set_zero();
};

struct HeadOutputs {
  Matrix h_glo;                    // C x K
  Matrix h_loc;                    // C x K, block i in layout.offsets[i]
  Matrix global_weights;           // K x K column-stochastic
  std::vector<Matrix> local_weights;  // B_i x B_i column-stochastic
};

// Column softmax with per-column max subtraction; every column sums to 1.
Matrix softmax_columns(const Matrix& logits);

// h = V softmax(Q^T K / scale) with Q = x Wq, K = x Wk, V = x Wv.
// Returns the attended features and the attention-weight matrix.
struct SelfAttentionResult {
  Matrix h;  // C x D
  Matrix a;  // D x D
};
SelfAttentionResult self_attention(const Matrix& x, const Matrix& wq,
                                   const Matrix& wk, const Matrix& wv,
                                   double scale);

// The per-scale column blocks of S, in layout order.
std::vector<Matrix> split_local(const BandCombination& s);

// One global head over the whole S plus one local head per scale, all using
// the same softmax scale.
HeadOutputs band_attention(const BandCombination& s,
                           const AttentionParams& params, double scale);

// m = w_max * max(h_glo, h_loc) + w_avg * avg(h_glo, h_loc) + bias,
// elementwise over the depth-2 stack.
Matrix head_fusion(const HeadOutputs& h, const AttentionParams& params);

// m' = m + s (skip connection).
Matrix apply_skip(const Matrix& m, const BandCombination& s);

// Scaled-uniform init (+-1/sqrt(fan_in)) per projection; fusion starts as an
// unweighted average.
AttentionParams random_attention_params(const BandLayout& layout, Rng& rng);

// One CSV matrix per head, aligned with the BandLayout descriptor.
void write_attention_csv(std::ostream& os, const Matrix& weights);

}  // namespace oescn
