#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "oescn/attention.hpp"
#include "oescn/bandgen.hpp"
#include "oescn/tape.hpp"

namespace oescn {

enum class Variant { oescn, oescn_a1, oescn_a2 };

std::string variant_name(Variant v);
Variant variant_from_name(std::string_view name);

struct ModelConfig {
  Variant variant = Variant::oescn;
  int n_classes = 13;
  int channels = 30;
  int psd_bins = 70;
  BandGenConfig band{};
  std::vector<int> branch_kernels{3, 9, 15};
  int branch_filters = 8;
  int trunk_filters = 16;
  int trunk_kernel = 3;
  std::vector<int> fc_sizes{512, 128, 13};  // last entry = n_classes
  double dropout_p = 0.25;
  double attention_scale = 0.0;  // 0 means sqrt(channels)

  double effective_scale() const;
  void validate() const;
};

struct NamedGrid {
  std::string name;
  Grid value;
  bool trainable = true;
};

struct ModelParams {
  std::vector<NamedGrid> items;

  Grid* find(std::string_view name);
  const Grid* find(std::string_view name) const;
  std::size_t scalar_count(bool trainable_only = true) const;
  std::vector<std::vector<std::size_t>> trainable_shapes() const;
};

// Static shape plan: resolved band layout, input size, the spatial extents
// after every stage, and the flatten width feeding the first FC layer.
// Building the plan validates every kernel/pool against its input.
struct ModelPlan {
  BandLayout layout;       // meaningful for oescn / oescn_a1
  bool uses_bands = false;
  bool uses_attention = false;
  int input_height = 0;  // C
  int input_width = 0;   // K or P
  struct Stage {
    std::string name;
    int depth, height, width;
  };
  std::vector<Stage> stages;
  int flatten_size = 0;
  double attention_scale = 0.0;
};

ModelPlan plan_model(const ModelConfig& cfg);

// Deterministic scaled-uniform initialization; identical seeds give bitwise
// identical parameters.
ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed);

// Tape handles for the recorded forward pass. param_vars pairs the index of
// each trainable item in ModelParams with its leaf on the tape.
struct ForwardVars {
  Tape::Var logits;
  Tape::Var probs;
  std::vector<std::pair<std::size_t, Tape::Var>> param_vars;
};

// Attention-stage parameters already placed on a tape.
struct AttentionVars {
  Tape::Var global_wq, global_wk, global_wv;
  std::vector<std::array<Tape::Var, 3>> local_qkv;
  Tape::Var fusion_w_max, fusion_w_avg, fusion_bias;
};

// Records the attention stage (global head, local heads, max/avg fusion and
// the skip connection) for one C x K leaf; returns M'.
Tape::Var record_attention(Tape& tape, Tape::Var s, const AttentionVars& vars,
                           const BandLayout& layout, double scale);

// Records the full forward pass for a batch of feature matrices (each C x W,
// already normalized). Train mode updates BN running statistics in place.
ForwardVars model_forward(Tape& tape, ModelParams& params,
                          const ModelConfig& cfg, const ModelPlan& plan,
                          const std::vector<Matrix>& batch, RunMode mode,
                          Rng& dropout_rng);

// Convenience eval-mode forward; returns the n x n_classes probability rows.
Matrix model_probabilities(ModelParams& params, const ModelConfig& cfg,
                           const ModelPlan& plan,
                           const std::vector<Matrix>& batch);

// Extracts the attention parameters from a parameter set (oescn variant).
AttentionParams attention_params_from_model(const ModelParams& params,
                                            const BandLayout& layout);

// Zeroes every attention and fusion parameter; with the skip connection the
// attention stage then passes features through unchanged.
void zero_attention_params(ModelParams& params);

}  // namespace oescn
