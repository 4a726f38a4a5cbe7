#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oescn/adam.hpp"
#include "oescn/data.hpp"
#include "oescn/model.hpp"

namespace oescn {

struct TrainConfig {
  int epochs = 500;
  int batch_size = 39;
  double lr = 0.0001;
  std::uint64_t seed = 0;       // initialization, shuffling, dropout
  std::uint64_t fold_seed = 0;  // fold plan
  int folds = 10;
  bool stratified = true;
  WelchConfig welch{};
  int jobs = 0;  // parallel fold workers; 0 picks hardware concurrency
  int report_interval = 0;  // epochs between progress lines; 0 = quiet

  void validate() const;
};

// Per-trial feature matrices for one variant: band combinations (C x K) or
// raw PSD features (C x P). Extraction is label-free and deterministic.
struct FeatureSet {
  std::vector<Matrix> per_trial;
  bool uses_bands = false;
  BandLayout layout;  // valid when uses_bands
  int width = 0;
  Vector freqs_hz;
};

FeatureSet extract_features(const Dataset& ds, const ModelConfig& cfg,
                            const WelchConfig& welch);

struct FoldResult {
  ModelParams params;
  AdamState adam;
  double accuracy = 0.0;
  std::vector<double> epoch_losses;  // mean training loss per epoch
};

// Trains one fold: fits normalization statistics on the training trials,
// runs Adam for the configured epochs with per-epoch reshuffling, and
// reports eval-mode accuracy on the held-out fold.
FoldResult train_fold(const FeatureSet& features,
                      const std::vector<int>& labels, const FoldPlan& plan,
                      int fold, const ModelConfig& mcfg,
                      const TrainConfig& tcfg);

// Convenience overload extracting features from the raw dataset.
FoldResult train_fold(const Dataset& ds, const FoldPlan& plan, int fold,
                      const ModelConfig& mcfg, const TrainConfig& tcfg);

struct RunReport {
  std::string variant;
  std::vector<double> fold_accuracies;
  std::vector<int> fold_sizes;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<std::vector<double>> loss_curves;  // [fold][epoch]
  FoldPlan plan;
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  std::string subject_id;
  double wall_seconds = 0.0;  // informational; never serialized
  std::vector<FoldResult> fold_results;
};

// k independent models, one per fold rotation; aggregates fold accuracies.
RunReport run_cv(const Dataset& ds, int k, const ModelConfig& mcfg,
                 const TrainConfig& tcfg);

// The three variants under identical seeds and fold plans.
std::vector<RunReport> run_ablation(const Dataset& ds, int k,
                                    ModelConfig base_cfg,
                                    const TrainConfig& tcfg);

// Eval-mode accuracy of a trained parameter set over the given trials.
double evaluate_accuracy(ModelParams& params, const ModelConfig& mcfg,
                         const FeatureSet& features,
                         const std::vector<int>& labels,
                         const std::vector<int>& indices);

// Normalization applied before the network: log(1 + x), then z-scoring per
// feature with the fold's stored statistics.
Matrix normalize_features(const Matrix& raw, const Grid& mean,
                          const Grid& stddev);

}  // namespace oescn
