#include "oescn/model.hpp"

#include <algorithm>
#include <cmath>

namespace oescn {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::oescn: return "oescn";
    case Variant::oescn_a1: return "oescn_a1";
    case Variant::oescn_a2: return "oescn_a2";
  }
  return "oescn";
}

Variant variant_from_name(std::string_view name) {
  if (name == "oescn") return Variant::oescn;
  if (name == "oescn_a1") return Variant::oescn_a1;
  if (name == "oescn_a2") return Variant::oescn_a2;
  throw InvalidArgument("unknown model variant '" + std::string(name) + "'");
}

double ModelConfig::effective_scale() const {
  return attention_scale > 0.0 ? attention_scale
                               : std::sqrt(static_cast<double>(channels));
}

void ModelConfig::validate() const {
  if (n_classes < 2) throw InvalidArgument("model: need at least 2 classes");
  if (channels < 1) throw InvalidArgument("model: need at least one channel");
  if (psd_bins < 1) throw InvalidArgument("model: psd_bins must be >= 1");
  if (branch_kernels.empty())
    throw InvalidArgument("model: need at least one branch kernel");
  if (branch_filters < 1 || trunk_filters < 1 || trunk_kernel < 1)
    throw InvalidArgument("model: filter counts and kernels must be >= 1");
  if (fc_sizes.empty() || fc_sizes.back() != n_classes)
    throw InvalidArgument("model: last FC size must equal n_classes");
  for (int s : fc_sizes)
    if (s < 1) throw InvalidArgument("model: FC sizes must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    throw InvalidArgument("model: dropout probability must be in [0, 1)");
  if (attention_scale < 0.0)
    throw InvalidArgument("model: attention scale must be positive");
}

Grid* ModelParams::find(std::string_view name) {
  for (auto& item : items)
    if (item.name == name) return &item.value;
  return nullptr;
}

const Grid* ModelParams::find(std::string_view name) const {
  for (const auto& item : items)
    if (item.name == name) return &item.value;
  return nullptr;
}

std::size_t ModelParams::scalar_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& item : items)
    if (!trainable_only || item.trainable) n += item.value.numel();
  return n;
}

std::vector<std::vector<std::size_t>> ModelParams::trainable_shapes() const {
  std::vector<std::vector<std::size_t>> shapes;
  for (const auto& item : items)
    if (item.trainable) shapes.push_back(item.value.shape);
  return shapes;
}

namespace {

struct PoolSpec {
  int ph = 2, pw = 2, sh = 2, sw = 2;
};

int pooled(int extent, int pool, int stride) {
  return (extent - pool) / stride + 1;
}

}  // namespace

ModelPlan plan_model(const ModelConfig& cfg) {
  cfg.validate();
  ModelPlan plan;
  plan.uses_bands = cfg.variant != Variant::oescn_a2;
  plan.uses_attention = cfg.variant == Variant::oescn;
  plan.attention_scale = cfg.effective_scale();
  plan.input_height = cfg.channels;
  if (plan.uses_bands) {
    plan.layout = band_counts(cfg.psd_bins, cfg.band);
    plan.input_width = plan.layout.total_k;
  } else {
    plan.input_width = cfg.psd_bins;
  }

  const PoolSpec pool;
  int h = plan.input_height;
  int w = plan.input_width;
  for (int k : cfg.branch_kernels) {
    if (k < 1) throw InvalidArgument("model: branch kernel must be >= 1");
    if (k > h || k > w)
      throw InvalidArgument("model: branch kernel " + std::to_string(k) +
                            " exceeds the " + std::to_string(h) + "x" +
                            std::to_string(w) + " input");
  }
  const int depth_cat =
      cfg.branch_filters * static_cast<int>(cfg.branch_kernels.size());
  plan.stages.push_back({"branch_concat", depth_cat, h, w});

  if (h < pool.ph || w < pool.pw)
    throw InvalidArgument("model: first pooling window exceeds its input");
  h = pooled(h, pool.ph, pool.sh);
  w = pooled(w, pool.pw, pool.sw);
  plan.stages.push_back({"pool1", depth_cat, h, w});

  if (cfg.trunk_kernel > h || cfg.trunk_kernel > w)
    throw InvalidArgument("model: trunk kernel exceeds the pooled input");
  plan.stages.push_back({"trunk_conv", cfg.trunk_filters, h, w});

  if (h < pool.ph || w < pool.pw)
    throw InvalidArgument("model: second pooling window exceeds its input");
  h = pooled(h, pool.ph, pool.sh);
  w = pooled(w, pool.pw, pool.sw);
  plan.stages.push_back({"pool2", cfg.trunk_filters, h, w});

  plan.flatten_size = cfg.trunk_filters * h * w;
  return plan;
}

namespace {

Grid uniform_grid(std::vector<std::size_t> shape, double bound, Rng& rng) {
  Grid g(std::move(shape));
  for (double& v : g.values) v = rng.uniform(-bound, bound);
  return g;
}

void add_conv_block(ModelParams& p, const std::string& prefix, int cout,
                    int cin, int kh, int kw, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * kh * kw);
  p.items.push_back({prefix + ".conv.w",
                     uniform_grid({static_cast<std::size_t>(cout),
                                   static_cast<std::size_t>(cin),
                                   static_cast<std::size_t>(kh),
                                   static_cast<std::size_t>(kw)},
                                  bound, rng),
                     true});
  p.items.push_back(
      {prefix + ".conv.b",
       uniform_grid({static_cast<std::size_t>(cout)}, bound, rng), true});
  p.items.push_back(
      {prefix + ".bn.gain",
       Grid({static_cast<std::size_t>(cout)}, 1.0), true});
  p.items.push_back(
      {prefix + ".bn.shift",
       Grid({static_cast<std::size_t>(cout)}, 0.0), true});
  p.items.push_back({prefix + ".bn.run_mean",
                     Grid({static_cast<std::size_t>(cout)}, 0.0), false});
  p.items.push_back({prefix + ".bn.run_var",
                     Grid({static_cast<std::size_t>(cout)}, 1.0), false});
}

}  // namespace

ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed) {
  const ModelPlan plan = plan_model(cfg);
  Rng rng(seed);
  ModelParams p;

  if (plan.uses_attention) {
    const AttentionParams att = random_attention_params(plan.layout, rng);
    p.items.push_back({"att.global.wq", Grid::from_matrix(att.global_wq), true});
    p.items.push_back({"att.global.wk", Grid::from_matrix(att.global_wk), true});
    p.items.push_back({"att.global.wv", Grid::from_matrix(att.global_wv), true});
    for (int i = 0; i < plan.layout.scales(); ++i) {
      const std::string prefix = "att.local" + std::to_string(i);
      p.items.push_back(
          {prefix + ".wq", Grid::from_matrix(att.local_qkv[i][0]), true});
      p.items.push_back(
          {prefix + ".wk", Grid::from_matrix(att.local_qkv[i][1]), true});
      p.items.push_back(
          {prefix + ".wv", Grid::from_matrix(att.local_qkv[i][2]), true});
    }
    p.items.push_back({"att.fusion.w_max", Grid::scalar(att.fusion_w_max), true});
    p.items.push_back({"att.fusion.w_avg", Grid::scalar(att.fusion_w_avg), true});
    p.items.push_back({"att.fusion.bias", Grid::scalar(att.fusion_bias), true});
  }

  for (std::size_t j = 0; j < cfg.branch_kernels.size(); ++j) {
    const int k = cfg.branch_kernels[j];
    add_conv_block(p, "branch" + std::to_string(j), cfg.branch_filters, 1, k,
                   k, rng);
  }
  const int depth_cat =
      cfg.branch_filters * static_cast<int>(cfg.branch_kernels.size());
  add_conv_block(p, "trunk", cfg.trunk_filters, depth_cat, cfg.trunk_kernel,
                 cfg.trunk_kernel, rng);

  int in_features = plan.flatten_size;
  for (std::size_t i = 0; i < cfg.fc_sizes.size(); ++i) {
    const int out = cfg.fc_sizes[i];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
    const std::string prefix = "fc" + std::to_string(i + 1);
    p.items.push_back({prefix + ".w",
                       uniform_grid({static_cast<std::size_t>(in_features),
                                     static_cast<std::size_t>(out)},
                                    bound, rng),
                       true});
    p.items.push_back(
        {prefix + ".b",
         uniform_grid({static_cast<std::size_t>(out)}, bound, rng), true});
    in_features = out;
  }

  // Feature normalization statistics, fitted on training folds.
  p.items.push_back({"norm.mean",
                     Grid({static_cast<std::size_t>(plan.input_height),
                           static_cast<std::size_t>(plan.input_width)},
                          0.0),
                     false});
  p.items.push_back({"norm.std",
                     Grid({static_cast<std::size_t>(plan.input_height),
                           static_cast<std::size_t>(plan.input_width)},
                          1.0),
                     false});
  return p;
}

namespace {

struct TapeParams {
  std::vector<std::pair<std::size_t, Tape::Var>> vars;  // item index -> leaf
  Tape::Var get(const ModelParams& p, std::string_view name) const {
    for (const auto& [idx, var] : vars)
      if (p.items[idx].name == name) return var;
    throw StateError("model: parameter '" + std::string(name) +
                     "' missing from tape");
  }
};

TapeParams load_params(Tape& tape, const ModelParams& params) {
  TapeParams tp;
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    if (!params.items[i].trainable) continue;
    tp.vars.emplace_back(i, tape.leaf(params.items[i].value, true));
  }
  return tp;
}

AttentionVars attention_vars(const ModelParams& p, const TapeParams& tp,
                             const BandLayout& layout) {
  AttentionVars av;
  av.global_wq = tp.get(p, "att.global.wq");
  av.global_wk = tp.get(p, "att.global.wk");
  av.global_wv = tp.get(p, "att.global.wv");
  for (int i = 0; i < layout.scales(); ++i) {
    const std::string prefix = "att.local" + std::to_string(i);
    av.local_qkv.push_back({tp.get(p, prefix + ".wq"),
                            tp.get(p, prefix + ".wk"),
                            tp.get(p, prefix + ".wv")});
  }
  av.fusion_w_max = tp.get(p, "att.fusion.w_max");
  av.fusion_w_avg = tp.get(p, "att.fusion.w_avg");
  av.fusion_bias = tp.get(p, "att.fusion.bias");
  return av;
}

}  // namespace

Tape::Var record_attention(Tape& t, Tape::Var s, const AttentionVars& vars,
                           const BandLayout& layout, double scale) {
  auto head = [&](Tape::Var x, Tape::Var wq, Tape::Var wk, Tape::Var wv) {
    const Tape::Var q = t.matmul(x, wq);
    const Tape::Var k = t.matmul(x, wk);
    const Tape::Var v = t.matmul(x, wv);
    const Tape::Var logits = t.scale(t.matmul(t.transpose(q), k), 1.0 / scale);
    return t.matmul(v, t.softmax_cols(logits));
  };

  const Tape::Var h_glo =
      head(s, vars.global_wq, vars.global_wk, vars.global_wv);
  std::vector<Tape::Var> locals;
  for (int i = 0; i < layout.scales(); ++i) {
    const Tape::Var block =
        t.slice_cols(s, layout.offsets[i], layout.per_scale_counts[i]);
    locals.push_back(head(block, vars.local_qkv[i][0], vars.local_qkv[i][1],
                          vars.local_qkv[i][2]));
  }
  const Tape::Var h_loc = t.concat_cols(locals);
  const Tape::Var m = t.fuse_heads(h_glo, h_loc, vars.fusion_w_max,
                                   vars.fusion_w_avg, vars.fusion_bias);
  return t.add(m, s);
}

ForwardVars model_forward(Tape& tape, ModelParams& params,
                          const ModelConfig& cfg, const ModelPlan& plan,
                          const std::vector<Matrix>& batch, RunMode mode,
                          Rng& dropout_rng) {
  if (batch.empty()) throw InvalidArgument("model: empty batch");
  for (const Matrix& m : batch)
    if (m.rows() != plan.input_height || m.cols() != plan.input_width)
      throw InvalidArgument(
          "model: feature matrix does not match the variant input width");

  const TapeParams tp = load_params(tape, params);
  Tape::Var x4;
  if (plan.uses_attention) {
    const AttentionVars av = attention_vars(params, tp, plan.layout);
    std::vector<Tape::Var> attended;
    attended.reserve(batch.size());
    for (const Matrix& m : batch) {
      const Tape::Var s = tape.leaf(Grid::from_matrix(m), false);
      attended.push_back(record_attention(tape, s, av, plan.layout,
                                          plan.attention_scale));
    }
    x4 = tape.stack2d(attended);
  } else {
    Grid x({batch.size(), 1, static_cast<std::size_t>(plan.input_height),
            static_cast<std::size_t>(plan.input_width)});
    std::size_t o = 0;
    for (const Matrix& m : batch)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) x.values[o++] = m(r, c);
    x4 = tape.leaf(std::move(x), false);
  }

  auto bn = [&](Tape::Var x, const std::string& prefix) {
    return tape.batch_norm(x, tp.get(params, prefix + ".bn.gain"),
                           tp.get(params, prefix + ".bn.shift"),
                           *params.find(prefix + ".bn.run_mean"),
                           *params.find(prefix + ".bn.run_var"), mode);
  };

  std::vector<Tape::Var> branches;
  for (std::size_t j = 0; j < cfg.branch_kernels.size(); ++j) {
    const std::string prefix = "branch" + std::to_string(j);
    Tape::Var b = tape.conv2d(x4, tp.get(params, prefix + ".conv.w"),
                              tp.get(params, prefix + ".conv.b"),
                              Padding::same);
    b = tape.elu(b);
    branches.push_back(bn(b, prefix));
  }
  Tape::Var h = tape.concat_depth(branches);
  h = tape.avg_pool2d(h, 2, 2, 2, 2);
  h = tape.conv2d(h, tp.get(params, "trunk.conv.w"),
                  tp.get(params, "trunk.conv.b"), Padding::same);
  h = tape.elu(h);
  h = bn(h, "trunk");
  h = tape.avg_pool2d(h, 2, 2, 2, 2);
  h = tape.flatten(h);

  for (std::size_t i = 0; i < cfg.fc_sizes.size(); ++i) {
    const std::string prefix = "fc" + std::to_string(i + 1);
    h = tape.dense(h, tp.get(params, prefix + ".w"),
                   tp.get(params, prefix + ".b"));
    if (i + 1 < cfg.fc_sizes.size())
      h = tape.dropout(h, cfg.dropout_p, mode, dropout_rng);
  }

  ForwardVars out;
  out.logits = h;
  out.probs = tape.softmax_rows(h);
  out.param_vars = tp.vars;
  return out;
}

Matrix model_probabilities(ModelParams& params, const ModelConfig& cfg,
                           const ModelPlan& plan,
                           const std::vector<Matrix>& batch) {
  Tape tape;
  Rng dummy(0);
  const ForwardVars fv =
      model_forward(tape, params, cfg, plan, batch, RunMode::eval, dummy);
  return tape.value(fv.probs).to_matrix();
}

AttentionParams attention_params_from_model(const ModelParams& params,
                                            const BandLayout& layout) {
  AttentionParams att;
  auto need = [&params](const std::string& name) -> const Grid& {
    const Grid* g = params.find(name);
    if (!g) throw InvalidArgument("model: missing parameter '" + name + "'");
    return *g;
  };
  att.global_wq = need("att.global.wq").to_matrix();
  att.global_wk = need("att.global.wk").to_matrix();
  att.global_wv = need("att.global.wv").to_matrix();
  for (int i = 0; i < layout.scales(); ++i) {
    const std::string prefix = "att.local" + std::to_string(i);
    att.local_qkv.push_back({need(prefix + ".wq").to_matrix(),
                             need(prefix + ".wk").to_matrix(),
                             need(prefix + ".wv").to_matrix()});
  }
  att.fusion_w_max = need("att.fusion.w_max")[0];
  att.fusion_w_avg = need("att.fusion.w_avg")[0];
  att.fusion_bias = need("att.fusion.bias")[0];
  return att;
}

void zero_attention_params(ModelParams& params) {
  for (auto& item : params.items)
    if (item.name.rfind("att.", 0) == 0)
      std::fill(item.value.values.begin(), item.value.values.end(), 0.0);
}

}  // namespace oescn
