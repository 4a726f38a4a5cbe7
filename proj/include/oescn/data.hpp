#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oescn/common.hpp"
#include "oescn/signal.hpp"

namespace oescn {

struct Dataset {
  std::vector<TrialRecording> trials;
  int n_classes = 0;
  std::string subject_id;
  std::string provenance;  // "file" or "synthetic"
  std::uint64_t seed = 0;

  void validate() const;
  Eigen::Index channels() const { return trials.empty() ? 0 : trials[0].channels(); }
  Eigen::Index time_points() const { return trials.empty() ? 0 : trials[0].time_points(); }
  double rate_hz() const { return trials.empty() ? 0.0 : trials[0].rate_hz; }
  std::vector<int> labels() const;
};

// Disjoint, exhaustive partition of [0, n_trials); fold sizes differ by at
// most one.
struct FoldPlan {
  int k = 10;
  std::uint64_t seed = 0;
  std::vector<std::vector<int>> folds;

  std::vector<int> train_indices(int fold) const;
  const std::vector<int>& validation_indices(int fold) const;
  std::vector<int> fold_of_trial(int n_trials) const;
};

// Seeded shuffle then contiguous balanced partition.
FoldPlan kfold_split(int n_trials, int k, std::uint64_t seed);

// Same contract, but class proportions are balanced across folds.
FoldPlan kfold_split_stratified(const std::vector<int>& labels, int k,
                                std::uint64_t seed);

// One narrowband oscillation applied to a set of channels.
struct OscComponent {
  double center_hz = 10.0;
  double bandwidth_hz = 2.0;  // per-trial frequency jitter lives inside this
  double amplitude = 1.0;
  std::vector<int> channels;
};

struct SynthSpec {
  std::string name = "custom";
  int n_classes = 4;
  int trials_per_class = 20;
  int channels = 8;
  int time_points = 2000;
  double rate_hz = 1000.0;
  double noise_sigma = 0.5;
  double f_lo_hz = 0.5;  // admissible band for component centers
  double f_hi_hz = 70.0;
  std::vector<std::vector<OscComponent>> class_components;

  void validate() const;
};

// Presets: "desk" (4x20 trials, C=8, T=2000), "paper-shape" (13x35 trials,
// C=30, T=10000), "ablation" (band-pair conjunction task).
SynthSpec synth_preset(const std::string& name);

// Deterministic synthetic EEG: per trial, each class component contributes a
// jittered, randomly phased sinusoid on its channels, plus white noise.
Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed);

// Mean and sample standard deviation (n-1 denominator; 0 for a single value).
std::pair<double, double> accuracy_stats(const std::vector<double>& per_fold);

// Sample std over per-subject mean accuracies; requires >= 2 subjects.
double inter_subject_std(const std::vector<double>& per_subject_means);

// Binary trial container. Layout (little-endian):
//   magic "OESCDAT1", u32 version, u32 C, u32 T, f64 rate, u32 n_classes,
//   u32 n_trials, u32 subject length + bytes, u32 labels[n_trials],
//   f32 samples[n_trials * C * T] (trial-major, channel rows).
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

void write_fold_csv(std::ostream& os, const FoldPlan& plan, int n_trials);

}  // namespace oescn
