#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "oescn/model.hpp"
#include "oracles.hpp"

using namespace oescn;

namespace {

// Miniature end-to-end configuration: C=6, two scales {2,3} on an 8-bin
// grid, one 3x3 branch, fc 16 -> 8 -> 3.
ModelConfig mini_config(Variant variant = Variant::oescn) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.n_classes = 3;
  cfg.channels = 6;
  cfg.psd_bins = 8;
  cfg.band.window_lengths = {2, 3};
  cfg.band.increment_g = 1;
  cfg.branch_kernels = {3};
  cfg.branch_filters = 4;
  cfg.trunk_filters = 8;
  cfg.fc_sizes = {16, 8, 3};
  cfg.dropout_p = 0.25;
  return cfg;
}

ModelConfig desk_config(Variant variant = Variant::oescn) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.n_classes = 4;
  cfg.channels = 8;
  cfg.psd_bins = 70;
  cfg.branch_kernels = {3, 5, 7};
  cfg.fc_sizes = {512, 128, 4};
  return cfg;
}

std::vector<Matrix> random_batch(int n, int rows, int cols,
                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Matrix> batch;
  for (int i = 0; i < n; ++i) {
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-1.0, 1.0);
    batch.push_back(m);
  }
  return batch;
}

}  // namespace

TEST_CASE("default shape chain") {
  ModelConfig cfg;  // paper defaults: C=30, K=299
  const ModelPlan plan = plan_model(cfg);
  CHECK(plan.input_height == 30);
  CHECK(plan.input_width == 299);
  REQUIRE(plan.stages.size() == 4);
  CHECK(plan.stages[0].name == "branch_concat");
  CHECK(plan.stages[0].depth == 24);
  CHECK(plan.stages[0].height == 30);
  CHECK(plan.stages[0].width == 299);
  CHECK(plan.stages[1].depth == 24);
  CHECK(plan.stages[1].height == 15);
  CHECK(plan.stages[1].width == 149);
  CHECK(plan.stages[2].depth == 16);
  CHECK(plan.stages[2].height == 15);
  CHECK(plan.stages[2].width == 149);
  CHECK(plan.stages[3].depth == 16);
  CHECK(plan.stages[3].height == 7);
  CHECK(plan.stages[3].width == 74);
  CHECK(plan.flatten_size == 8288);
}

TEST_CASE("plan rejects kernels larger than their input") {
  ModelConfig cfg = mini_config();
  cfg.channels = 2;  // 3x3 branch kernel no longer fits
  CHECK_THROWS_AS(plan_model(cfg), InvalidArgument);

  ModelConfig pool_breaker = mini_config();
  pool_breaker.channels = 3;  // pool1 gives h=1, pool2 cannot fit
  CHECK_THROWS_AS(plan_model(pool_breaker), InvalidArgument);

  ModelConfig bad_fc = mini_config();
  bad_fc.fc_sizes = {16, 8, 4};  // last != n_classes
  CHECK_THROWS_AS(plan_model(bad_fc), InvalidArgument);
}

TEST_CASE("forward yields a probability row per sample") {
  const ModelConfig cfg = desk_config();
  const ModelPlan plan = plan_model(cfg);
  ModelParams params = build_model(cfg, 7);
  const std::vector<Matrix> batch = random_batch(2, 8, plan.input_width, 3);
  const Matrix probs = model_probabilities(params, cfg, plan, batch);
  CHECK(probs.rows() == 2);
  CHECK(probs.cols() == 4);
  for (int r = 0; r < 2; ++r) {
    CHECK(probs.row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));
    for (int c = 0; c < 4; ++c) {
      CHECK(probs(r, c) > 0.0);
      CHECK(probs(r, c) < 1.0);
    }
  }
}

TEST_CASE("parameter counts order the variants") {
  const ModelConfig oescn_cfg = desk_config(Variant::oescn);
  const ModelConfig a1_cfg = desk_config(Variant::oescn_a1);
  const ModelConfig a2_cfg = desk_config(Variant::oescn_a2);
  ModelParams full = build_model(oescn_cfg, 1);
  ModelParams a1 = build_model(a1_cfg, 1);
  ModelParams a2 = build_model(a2_cfg, 1);
  CHECK(a1.scalar_count() < full.scalar_count());

  // a1 and a2 differ only through the input width: same item names, and
  // only width-dependent shapes change.
  REQUIRE(a1.items.size() == a2.items.size());
  for (std::size_t i = 0; i < a1.items.size(); ++i)
    CHECK(a1.items[i].name == a2.items[i].name);
}

TEST_CASE("identical seeds build identical parameters") {
  const ModelConfig cfg = mini_config();
  const ModelParams a = build_model(cfg, 42);
  const ModelParams b = build_model(cfg, 42);
  const ModelParams c = build_model(cfg, 43);
  REQUIRE(a.items.size() == b.items.size());
  bool all_equal = true;
  bool any_diff_seed = false;
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    if (a.items[i].value.values != b.items[i].value.values) all_equal = false;
    if (a.items[i].value.values != c.items[i].value.values)
      any_diff_seed = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("eval mode is a pure function") {
  const ModelConfig cfg = mini_config();
  const ModelPlan plan = plan_model(cfg);
  ModelParams params = build_model(cfg, 5);
  const std::vector<Matrix> batch = random_batch(3, 6, plan.input_width, 8);
  const Matrix p1 = model_probabilities(params, cfg, plan, batch);
  const Matrix p2 = model_probabilities(params, cfg, plan, batch);
  CHECK(std::memcmp(p1.data(), p2.data(), sizeof(double) * p1.size()) == 0);
}

TEST_CASE("zero attention collapses onto the a1 classifier") {
  const ModelConfig oescn_cfg = desk_config(Variant::oescn);
  const ModelConfig a1_cfg = desk_config(Variant::oescn_a1);
  const ModelPlan plan = plan_model(oescn_cfg);

  ModelParams full = build_model(oescn_cfg, 11);
  zero_attention_params(full);
  ModelParams a1 = build_model(a1_cfg, 12);
  // Copy the classifier (everything but attention) from the full model.
  for (auto& item : a1.items) {
    const Grid* src = full.find(item.name);
    REQUIRE(src != nullptr);
    item.value = *src;
  }

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::vector<Matrix> batch =
        random_batch(2, 8, plan.input_width, 100 + seed);
    const Matrix pf = model_probabilities(full, oescn_cfg, plan, batch);
    const Matrix pa =
        model_probabilities(a1, a1_cfg, plan_model(a1_cfg), batch);
    REQUIRE(pf.rows() == pa.rows());
    REQUIRE(pf.cols() == pa.cols());
    CHECK(std::memcmp(pf.data(), pa.data(), sizeof(double) * pf.size()) == 0);
  }
}

TEST_CASE("miniature model gradients match finite differences") {
  const ModelConfig cfg = mini_config();
  const ModelPlan plan = plan_model(cfg);
  CHECK(plan.flatten_size == 16);

  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ModelParams params = build_model(cfg, 1000 + seed);
    const std::vector<Matrix> batch =
        random_batch(3, 6, plan.input_width, 2000 + seed);
    const std::vector<int> targets{0, 2, 1};
    const std::uint64_t mask_seed = 3000 + seed;

    auto eval = [&]() {
      Tape t;
      Rng drng(mask_seed);
      const ForwardVars fv =
          model_forward(t, params, cfg, plan, batch, RunMode::train, drng);
      return t.value(t.cross_entropy_logits(fv.logits, targets))[0];
    };

    Tape t;
    Rng drng(mask_seed);
    const ForwardVars fv =
        model_forward(t, params, cfg, plan, batch, RunMode::train, drng);
    t.backward(t.cross_entropy_logits(fv.logits, targets));

    for (const auto& [idx, var] : fv.param_vars) {
      Grid analytic = t.grad(var);
      const oracle::FdOutcome fd = oracle::finite_difference_check(
          eval, params.items[idx].value, analytic);
      CHECK_MESSAGE(fd.ok, "param ", params.items[idx].name, " max err ",
                    fd.max_err);
    }
  }
}

TEST_CASE("attention parameter extraction round trip") {
  const ModelConfig cfg = mini_config();
  const ModelPlan plan = plan_model(cfg);
  const ModelParams params = build_model(cfg, 77);
  const AttentionParams att = attention_params_from_model(params, plan.layout);
  CHECK(att.global_wq.rows() == plan.layout.total_k);
  CHECK(att.local_qkv.size() == 2);
  CHECK(att.fusion_w_max == 0.5);
  CHECK(att.fusion_w_avg == 0.5);
  CHECK(att.fusion_bias == 0.0);
}
