#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "oescn/training.hpp"

namespace oescn {

// Config <-> JSON, used by config files and run manifests. Keys are sorted
// by the JSON library, so identical configs serialize to identical bytes.
nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

// Per-fold accuracy rows followed by mean/std summary rows.
void write_report_csv(std::ostream& os, const RunReport& report);

// fold,epoch,mean_loss rows for every training curve.
void write_loss_csv(std::ostream& os, const RunReport& report);

// variant,fold,accuracy rows for all runs, with per-variant summary rows.
void write_ablation_csv(std::ostream& os,
                        const std::vector<RunReport>& reports);

// Accuracy table in the per-subject layout: one row per subject with
// mean/std, then an average row and, with two or more subjects, an
// inter-subject std row.
struct SubjectResult {
  std::string subject;
  double mean = 0.0;
  double stddev = 0.0;
};
void write_metrics_csv(std::ostream& os,
                       const std::vector<SubjectResult>& subjects);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace oescn
