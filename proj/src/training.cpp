#include "oescn/training.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>

#include "oescn/bandgen.hpp"

namespace oescn {

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("train: epochs must be >= 1");
  if (batch_size < 2)
    throw InvalidArgument("train: batch size must be >= 2 (batch norm)");
  if (!(lr >= 0.0)) throw InvalidArgument("train: learning rate must be >= 0");
  if (folds < 2) throw InvalidArgument("train: need at least 2 folds");
}

FeatureSet extract_features(const Dataset& ds, const ModelConfig& cfg,
                            const WelchConfig& welch) {
  ds.validate();
  FeatureSet fs;
  fs.uses_bands = cfg.variant != Variant::oescn_a2;
  fs.per_trial.reserve(ds.trials.size());
  for (const TrialRecording& trial : ds.trials) {
    const PsdFeatures psd = welch_psd(trial, welch);
    if (fs.freqs_hz.size() == 0) fs.freqs_hz = psd.freqs_hz;
    if (fs.uses_bands) {
      BandCombination combo = build_combination(psd, cfg.band);
      if (fs.per_trial.empty()) fs.layout = combo.layout;
      fs.per_trial.push_back(std::move(combo.s));
    } else {
      fs.per_trial.push_back(psd.values);
    }
  }
  fs.width = static_cast<int>(fs.per_trial[0].cols());
  const int p = static_cast<int>(fs.freqs_hz.size());
  if (p != cfg.psd_bins)
    throw InvalidArgument(
        "train: Welch grid has " + std::to_string(p) +
        " bins but the model config expects " + std::to_string(cfg.psd_bins));
  return fs;
}

Matrix normalize_features(const Matrix& raw, const Grid& mean,
                          const Grid& stddev) {
  if (static_cast<std::size_t>(raw.rows()) != mean.rows() ||
      static_cast<std::size_t>(raw.cols()) != mean.cols())
    throw InvalidArgument("normalize: feature shape mismatch");
  Matrix out(raw.rows(), raw.cols());
  for (Eigen::Index r = 0; r < raw.rows(); ++r)
    for (Eigen::Index c = 0; c < raw.cols(); ++c) {
      const std::size_t rr = static_cast<std::size_t>(r);
      const std::size_t cc = static_cast<std::size_t>(c);
      out(r, c) = (std::log1p(raw(r, c)) - mean.at(rr, cc)) /
                  (stddev.at(rr, cc) + 1e-8);
    }
  return out;
}

namespace {

// Per-feature mean/std of log1p over the training trials only.
void fit_normalization(const FeatureSet& features,
                       const std::vector<int>& train_idx, Grid& mean,
                       Grid& stddev) {
  const Eigen::Index rows = features.per_trial[0].rows();
  const Eigen::Index cols = features.per_trial[0].cols();
  Matrix acc = Matrix::Zero(rows, cols);
  for (int idx : train_idx)
    acc += features.per_trial[static_cast<std::size_t>(idx)]
               .unaryExpr([](double v) { return std::log1p(v); });
  acc /= static_cast<double>(train_idx.size());
  Matrix var = Matrix::Zero(rows, cols);
  for (int idx : train_idx) {
    const Matrix d = features.per_trial[static_cast<std::size_t>(idx)]
                         .unaryExpr([](double v) { return std::log1p(v); }) -
                     acc;
    var += d.cwiseProduct(d);
  }
  var /= static_cast<double>(train_idx.size());
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      mean.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) =
          acc(r, c);
      stddev.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) =
          std::sqrt(var(r, c));
    }
}

std::vector<std::vector<int>> make_batches(std::vector<int> order,
                                           int batch_size) {
  std::vector<std::vector<int>> batches;
  for (std::size_t pos = 0; pos < order.size(); pos += batch_size) {
    const std::size_t end =
        std::min(order.size(), pos + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + pos, order.begin() + end);
  }
  // A size-1 trailing batch cannot be batch-normalized; merge it backwards.
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

}  // namespace

double evaluate_accuracy(ModelParams& params, const ModelConfig& mcfg,
                         const FeatureSet& features,
                         const std::vector<int>& labels,
                         const std::vector<int>& indices) {
  if (indices.empty()) throw InvalidArgument("evaluate: no trials selected");
  const ModelPlan plan = plan_model(mcfg);
  const Grid& mean = *params.find("norm.mean");
  const Grid& stddev = *params.find("norm.std");
  std::size_t correct = 0;
  constexpr std::size_t kEvalChunk = 64;
  for (std::size_t pos = 0; pos < indices.size(); pos += kEvalChunk) {
    const std::size_t end = std::min(indices.size(), pos + kEvalChunk);
    std::vector<Matrix> batch;
    for (std::size_t i = pos; i < end; ++i)
      batch.push_back(normalize_features(
          features.per_trial[static_cast<std::size_t>(indices[i])], mean,
          stddev));
    const Matrix probs = model_probabilities(params, mcfg, plan, batch);
    for (std::size_t i = pos; i < end; ++i) {
      Eigen::Index argmax = 0;
      probs.row(static_cast<Eigen::Index>(i - pos)).maxCoeff(&argmax);
      if (static_cast<int>(argmax) == labels[static_cast<std::size_t>(indices[i])])
        ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

FoldResult train_fold(const FeatureSet& features,
                      const std::vector<int>& labels, const FoldPlan& plan,
                      int fold, const ModelConfig& mcfg,
                      const TrainConfig& tcfg) {
  tcfg.validate();
  const ModelPlan mplan = plan_model(mcfg);
  if (features.width != mplan.input_width)
    throw InvalidArgument("train: feature width does not match the variant");

  const std::vector<int> train_idx = plan.train_indices(fold);
  const std::vector<int>& val_idx = plan.validation_indices(fold);
  if (train_idx.size() < 2)
    throw InvalidArgument("train: fold leaves fewer than 2 training trials");

  FoldResult result;
  result.params =
      build_model(mcfg, derive_seed(tcfg.seed, 0x696e6974 /* init */,
                                    static_cast<std::uint64_t>(fold)));
  fit_normalization(features, train_idx, *result.params.find("norm.mean"),
                    *result.params.find("norm.std"));

  // Normalized features for every trial; validation trials use the same
  // training-fold statistics.
  std::vector<Matrix> normalized(features.per_trial.size());
  const Grid& norm_mean = *result.params.find("norm.mean");
  const Grid& norm_std = *result.params.find("norm.std");
  for (std::size_t i = 0; i < features.per_trial.size(); ++i)
    normalized[i] =
        normalize_features(features.per_trial[i], norm_mean, norm_std);

  AdamConfig acfg;
  acfg.lr = tcfg.lr;
  result.adam = AdamState::for_shapes(result.params.trainable_shapes(), acfg);
  Rng dropout_rng(derive_seed(tcfg.seed, 0x64726f70 /* drop */,
                              static_cast<std::uint64_t>(fold)));

  result.epoch_losses.reserve(static_cast<std::size_t>(tcfg.epochs));
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::vector<int> order = train_idx;
    Rng shuffle_rng(derive_seed(
        tcfg.seed, 0x65706f63 /* epoc */,
        (static_cast<std::uint64_t>(fold) << 32) ^
            static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const std::vector<int>& batch_idx :
         make_batches(order, tcfg.batch_size)) {
      std::vector<Matrix> batch;
      std::vector<int> batch_labels;
      batch.reserve(batch_idx.size());
      for (int idx : batch_idx) {
        batch.push_back(normalized[static_cast<std::size_t>(idx)]);
        batch_labels.push_back(labels[static_cast<std::size_t>(idx)]);
      }
      Tape tape;
      const ForwardVars fv =
          model_forward(tape, result.params, mcfg, mplan, batch,
                        RunMode::train, dropout_rng);
      const Tape::Var loss = tape.cross_entropy_logits(fv.logits, batch_labels);
      tape.backward(loss);

      std::vector<Grid*> ps;
      std::vector<const Grid*> gs;
      for (const auto& [item_idx, var] : fv.param_vars) {
        ps.push_back(&result.params.items[item_idx].value);
        gs.push_back(&tape.grad(var));
      }
      adam_step(ps, gs, result.adam);
      loss_sum += tape.value(loss)[0] * static_cast<double>(batch_idx.size());
      seen += batch_idx.size();
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(seen));
    if (tcfg.report_interval > 0 && (epoch + 1) % tcfg.report_interval == 0)
      std::printf("fold %d epoch %d loss %.6f\n", fold, epoch + 1,
                  result.epoch_losses.back());
  }

  result.accuracy =
      evaluate_accuracy(result.params, mcfg, features, labels, val_idx);
  return result;
}

FoldResult train_fold(const Dataset& ds, const FoldPlan& plan, int fold,
                      const ModelConfig& mcfg, const TrainConfig& tcfg) {
  const FeatureSet features = extract_features(ds, mcfg, tcfg.welch);
  return train_fold(features, ds.labels(), plan, fold, mcfg, tcfg);
}

RunReport run_cv(const Dataset& ds, int k, const ModelConfig& mcfg,
                 const TrainConfig& tcfg) {
  const auto started = std::chrono::steady_clock::now();
  tcfg.validate();
  ds.validate();
  mcfg.validate();

  RunReport report;
  report.variant = variant_name(mcfg.variant);
  report.model_cfg = mcfg;
  report.train_cfg = tcfg;
  report.subject_id = ds.subject_id;
  const std::vector<int> labels = ds.labels();
  report.plan = tcfg.stratified
                    ? kfold_split_stratified(labels, k, tcfg.fold_seed)
                    : kfold_split(static_cast<int>(ds.trials.size()), k,
                                  tcfg.fold_seed);

  const FeatureSet features = extract_features(ds, mcfg, tcfg.welch);

  report.fold_results.resize(static_cast<std::size_t>(k));
  std::atomic<int> next_fold{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;

  auto worker = [&]() {
    for (;;) {
      const int fold = next_fold.fetch_add(1);
      if (fold >= k) return;
      try {
        report.fold_results[static_cast<std::size_t>(fold)] =
            train_fold(features, labels, report.plan, fold, mcfg, tcfg);
      } catch (const Error& e) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error)
          first_error = std::make_exception_ptr(Error(
              e.category(), "fold " + std::to_string(fold) + ": " + e.what()));
        return;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error)
          first_error = std::make_exception_ptr(
              Error(ErrorCategory::numeric,
                    "fold " + std::to_string(fold) + ": " + e.what()));
        return;
      }
    }
  };

  int jobs = tcfg.jobs > 0
                 ? tcfg.jobs
                 : static_cast<int>(std::thread::hardware_concurrency());
  jobs = std::max(1, std::min(jobs, k));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  for (int f = 0; f < k; ++f) {
    const FoldResult& fr = report.fold_results[static_cast<std::size_t>(f)];
    report.fold_accuracies.push_back(fr.accuracy);
    report.fold_sizes.push_back(
        static_cast<int>(report.plan.validation_indices(f).size()));
    report.loss_curves.push_back(fr.epoch_losses);
  }
  const auto [mean, stddev] = accuracy_stats(report.fold_accuracies);
  report.mean = mean;
  report.stddev = stddev;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return report;
}

std::vector<RunReport> run_ablation(const Dataset& ds, int k,
                                    ModelConfig base_cfg,
                                    const TrainConfig& tcfg) {
  std::vector<RunReport> reports;
  for (Variant v : {Variant::oescn, Variant::oescn_a1, Variant::oescn_a2}) {
    ModelConfig cfg = base_cfg;
    cfg.variant = v;
    reports.push_back(run_cv(ds, k, cfg, tcfg));
  }
  return reports;
}

}  // namespace oescn
