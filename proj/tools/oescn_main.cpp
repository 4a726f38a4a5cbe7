// Command-line front end for the olfactory EEG classification pipeline:
// synthetic data generation, band-feature extraction, cross-validated
// training, evaluation, ablations, and attention-weight export.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "oescn/attention.hpp"
#include "oescn/checkpoint.hpp"
#include "oescn/report.hpp"
#include "oescn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kFeatureMagic[8] = {'O', 'E', 'S', 'C', 'F', 'E', 'A', '1'};

struct CommonConfig {
  oescn::ModelConfig model;
  oescn::TrainConfig train;
};

// Precedence: built-in defaults < config file < explicit flags. Flags are
// applied by the caller after this merge.
CommonConfig load_config_file(const std::string& path) {
  CommonConfig cfg;
  if (path.empty()) return cfg;
  const json j = json::parse(oescn::read_text_file(path), nullptr, true, true);
  if (j.contains("model"))
    cfg.model = oescn::model_config_from_json(j.at("model"));
  if (j.contains("train"))
    cfg.train = oescn::train_config_from_json(j.at("train"));
  return cfg;
}

void apply_model_preset(oescn::ModelConfig& m, const std::string& preset) {
  if (preset == "paper") {
    m.branch_kernels = {3, 9, 15};
  } else if (preset == "desk") {
    m.branch_kernels = {3, 5, 7};
  } else {
    throw oescn::InvalidArgument("unknown preset '" + preset +
                                 "' (expected desk or paper)");
  }
  m.branch_filters = 8;
  m.trunk_filters = 16;
  m.trunk_kernel = 3;
  m.fc_sizes = {512, 128, m.n_classes};
}

void apply_train_preset(oescn::TrainConfig& t, const std::string& preset) {
  if (preset == "paper") {
    t.epochs = 500;
  } else if (preset == "desk") {
    t.epochs = 50;
  } else {
    throw oescn::InvalidArgument("unknown preset '" + preset +
                                 "' (expected desk or paper)");
  }
  t.batch_size = 39;
  t.folds = 10;
  t.lr = 0.0001;
}

// Model geometry follows the dataset; the last FC layer is the class count.
void bind_model_to_dataset(oescn::ModelConfig& m, const oescn::Dataset& ds) {
  m.n_classes = ds.n_classes;
  m.channels = static_cast<int>(ds.channels());
  if (!m.fc_sizes.empty()) m.fc_sizes.back() = m.n_classes;
}

void write_manifest(const fs::path& path, const json& j) {
  oescn::write_text_file(path.string(), j.dump(2) + "\n");
}

json checkpoint_manifest(const oescn::ModelConfig& m,
                         const oescn::TrainConfig& t) {
  json j;
  j["model"] = oescn::model_config_to_json(m);
  j["train"] = oescn::train_config_to_json(t);
  return j;
}

void save_run_outputs(const fs::path& dir, const oescn::RunReport& report,
                      json manifest) {
  fs::create_directories(dir);
  {
    std::ostringstream ss;
    oescn::write_report_csv(ss, report);
    oescn::write_text_file((dir / "report.csv").string(), ss.str());
  }
  {
    std::ostringstream ss;
    oescn::write_loss_csv(ss, report);
    oescn::write_text_file((dir / "loss_curves.csv").string(), ss.str());
  }
  {
    int n_trials = 0;
    for (const auto& f : report.plan.folds)
      n_trials += static_cast<int>(f.size());
    std::ostringstream ss;
    oescn::write_fold_csv(ss, report.plan, n_trials);
    oescn::write_text_file((dir / "folds.csv").string(), ss.str());
  }
  {
    std::ostringstream ss;
    oescn::write_metrics_csv(
        ss, {{report.subject_id, report.mean, report.stddev}});
    oescn::write_text_file((dir / "metrics.csv").string(), ss.str());
  }

  std::vector<std::string> ckpt_paths;
  for (std::size_t f = 0; f < report.fold_results.size(); ++f) {
    const fs::path ckpt = dir / ("ckpt_fold" + std::to_string(f) + ".bin");
    oescn::save_checkpoint(ckpt.string(), report.fold_results[f].params,
                           &report.fold_results[f].adam);
    write_manifest(fs::path(ckpt.string() + ".manifest.json"),
                   checkpoint_manifest(report.model_cfg, report.train_cfg));
    ckpt_paths.push_back(ckpt.filename().string());
  }
  manifest["checkpoints"] = ckpt_paths;
  manifest["report_files"] = {"report.csv", "loss_curves.csv", "folds.csv",
                              "metrics.csv"};
  write_manifest(dir / "manifest.json", manifest);
}

int run_synth(const std::string& preset, const std::string& config_path,
              std::uint64_t seed, const std::string& out, int classes,
              int trials_per_class, int channels, int samples, double rate,
              double noise, bool have_noise) {
  oescn::SynthSpec spec;
  if (!config_path.empty()) {
    const json j =
        json::parse(oescn::read_text_file(config_path), nullptr, true, true);
    spec = j.contains("synth") ? oescn::synth_spec_from_json(j.at("synth"))
                               : oescn::synth_spec_from_json(j);
  } else {
    spec = oescn::synth_preset(preset.empty() ? "desk" : preset);
  }
  if (!preset.empty() && !config_path.empty())
    spec = oescn::synth_preset(preset);

  // Explicit shape overrides regenerate the component table when the class
  // count changes, spreading centers over the analysis band.
  const bool reshape = classes > 0 || trials_per_class > 0 || channels > 0 ||
                       samples > 0 || rate > 0 || have_noise;
  if (reshape) {
    if (classes > 0) spec.n_classes = classes;
    if (trials_per_class > 0) spec.trials_per_class = trials_per_class;
    if (channels > 0) spec.channels = channels;
    if (samples > 0) spec.time_points = samples;
    if (rate > 0) spec.rate_hz = rate;
    if (have_noise) spec.noise_sigma = noise;
    if (classes > 0 || channels > 0) {
      spec.class_components.clear();
      for (int i = 0; i < spec.n_classes; ++i) {
        oescn::OscComponent c;
        const double span = spec.f_hi_hz - spec.f_lo_hz - 10.0;
        c.center_hz = 6.0 + span * i / std::max(1, spec.n_classes);
        c.bandwidth_hz = 2.0;
        c.amplitude = 1.0;
        const int gsize = std::max(1, spec.channels / 2);
        for (int g = 0; g < gsize; ++g)
          c.channels.push_back((2 * i + g) % spec.channels);
        spec.class_components.push_back({c});
      }
      spec.name = "custom";
    }
  }
  if (classes != -1 && classes < 1)
    throw oescn::InvalidArgument("synth: --classes must be >= 1");

  const oescn::Dataset ds = oescn::synth_dataset(spec, seed);
  oescn::save_dataset(ds, out);
  json manifest;
  manifest["command"] = "synth";
  manifest["seed"] = seed;
  manifest["synth"] = oescn::synth_spec_to_json(spec);
  write_manifest(fs::path(out + ".manifest.json"), manifest);

  std::printf("wrote %s: %d classes x %d trials, C=%d, T=%d, rate=%g Hz\n",
              out.c_str(), spec.n_classes, spec.trials_per_class,
              spec.channels, spec.time_points, spec.rate_hz);
  return 0;
}

int run_extract(const std::string& dataset_path, const std::string& out_dir,
                const oescn::TrainConfig& tcfg,
                const oescn::ModelConfig& mcfg_in) {
  const oescn::Dataset ds = oescn::load_dataset(dataset_path);
  oescn::ModelConfig mcfg = mcfg_in;
  bind_model_to_dataset(mcfg, ds);
  mcfg.variant = oescn::Variant::oescn_a1;  // bands, no attention needed
  const oescn::FeatureSet features =
      oescn::extract_features(ds, mcfg, tcfg.welch);

  fs::create_directories(out_dir);
  {
    std::ostringstream ss;
    oescn::write_layout_csv(ss, features.layout);
    oescn::write_text_file((fs::path(out_dir) / "layout.csv").string(),
                           ss.str());
  }
  {
    std::ofstream os(fs::path(out_dir) / "features.bin",
                     std::ios::binary | std::ios::trunc);
    if (!os) throw oescn::DataError("extract: cannot open features.bin");
    os.write(kFeatureMagic, sizeof(kFeatureMagic));
    const std::uint32_t version = 1;
    const std::uint32_t n = static_cast<std::uint32_t>(features.per_trial.size());
    const std::uint32_t c =
        static_cast<std::uint32_t>(features.per_trial[0].rows());
    const std::uint32_t k = static_cast<std::uint32_t>(features.width);
    os.write(reinterpret_cast<const char*>(&version), 4);
    os.write(reinterpret_cast<const char*>(&n), 4);
    os.write(reinterpret_cast<const char*>(&c), 4);
    os.write(reinterpret_cast<const char*>(&k), 4);
    for (const oescn::Matrix& m : features.per_trial)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index col = 0; col < m.cols(); ++col) {
          const double v = m(r, col);
          os.write(reinterpret_cast<const char*>(&v), sizeof(double));
        }
    if (!os) throw oescn::DataError("extract: write failed");
  }
  json manifest;
  manifest["command"] = "extract";
  manifest["dataset"] = dataset_path;
  manifest["model"] = oescn::model_config_to_json(mcfg);
  manifest["train"] = oescn::train_config_to_json(tcfg);
  write_manifest(fs::path(out_dir) / "manifest.json", manifest);

  std::printf("P=%d K=%d counts=", static_cast<int>(features.freqs_hz.size()),
              features.layout.total_k);
  for (int i = 0; i < features.layout.scales(); ++i)
    std::printf("%s%d", i ? "/" : "", features.layout.per_scale_counts[i]);
  std::printf("\n");
  return 0;
}

int run_train(const std::string& dataset_path, const std::string& out_dir,
              oescn::ModelConfig mcfg, oescn::TrainConfig tcfg) {
  const oescn::Dataset ds = oescn::load_dataset(dataset_path);
  bind_model_to_dataset(mcfg, ds);
  const oescn::RunReport report = oescn::run_cv(ds, tcfg.folds, mcfg, tcfg);

  json manifest;
  manifest["command"] = "train";
  manifest["dataset"] = dataset_path;
  manifest["model"] = oescn::model_config_to_json(mcfg);
  manifest["train"] = oescn::train_config_to_json(tcfg);
  save_run_outputs(out_dir, report, manifest);

  std::printf("%s: mean accuracy %.4f +- %.4f over %d folds (%.1f s)\n",
              report.variant.c_str(), report.mean, report.stddev, tcfg.folds,
              report.wall_seconds);
  return 0;
}

int run_ablate_cmd(const std::string& dataset_path, const std::string& out_dir,
                   oescn::ModelConfig mcfg, oescn::TrainConfig tcfg) {
  const oescn::Dataset ds = oescn::load_dataset(dataset_path);
  bind_model_to_dataset(mcfg, ds);
  const std::vector<oescn::RunReport> reports =
      oescn::run_ablation(ds, tcfg.folds, mcfg, tcfg);

  fs::create_directories(out_dir);
  for (const oescn::RunReport& r : reports) {
    json manifest;
    manifest["command"] = "train";
    manifest["dataset"] = dataset_path;
    manifest["model"] = oescn::model_config_to_json(r.model_cfg);
    manifest["train"] = oescn::train_config_to_json(r.train_cfg);
    save_run_outputs(fs::path(out_dir) / r.variant, r, manifest);
  }
  {
    std::ostringstream ss;
    oescn::write_ablation_csv(ss, reports);
    oescn::write_text_file((fs::path(out_dir) / "ablation.csv").string(),
                           ss.str());
  }
  json manifest;
  manifest["command"] = "ablate";
  manifest["dataset"] = dataset_path;
  manifest["model"] = oescn::model_config_to_json(mcfg);
  manifest["train"] = oescn::train_config_to_json(tcfg);
  manifest["variants"] = {"oescn", "oescn_a1", "oescn_a2"};
  write_manifest(fs::path(out_dir) / "manifest.json", manifest);

  for (const oescn::RunReport& r : reports)
    std::printf("%s: mean accuracy %.4f +- %.4f\n", r.variant.c_str(), r.mean,
                r.stddev);
  return 0;
}

int run_evaluate(const std::string& dataset_path,
                 const std::string& checkpoint_path,
                 const std::string& out_dir, const std::string& fold_csv,
                 int fold) {
  const oescn::Dataset ds = oescn::load_dataset(dataset_path);
  oescn::Checkpoint ck = oescn::load_checkpoint(checkpoint_path);
  const json manifest_in = json::parse(
      oescn::read_text_file(checkpoint_path + ".manifest.json"), nullptr,
      true, true);
  oescn::ModelConfig mcfg =
      oescn::model_config_from_json(manifest_in.at("model"));
  const oescn::TrainConfig tcfg =
      oescn::train_config_from_json(manifest_in.at("train"));

  const oescn::FeatureSet features =
      oescn::extract_features(ds, mcfg, tcfg.welch);
  std::vector<int> indices;
  if (!fold_csv.empty()) {
    if (fold < 0)
      throw oescn::InvalidArgument("evaluate: --fold required with --fold-csv");
    std::ifstream is(fold_csv);
    if (!is) throw oescn::DataError("evaluate: cannot open fold csv");
    std::string line;
    std::getline(is, line);
    if (line.rfind("trial,", 0) != 0)
      throw oescn::DataError("evaluate: fold csv missing header");
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos)
        throw oescn::DataError("evaluate: malformed fold csv row");
      if (std::stoi(line.substr(comma + 1)) == fold)
        indices.push_back(std::stoi(line.substr(0, comma)));
    }
  } else {
    indices.resize(ds.trials.size());
    for (std::size_t i = 0; i < indices.size(); ++i)
      indices[i] = static_cast<int>(i);
  }

  const double acc = oescn::evaluate_accuracy(ck.params, mcfg, features,
                                              ds.labels(), indices);
  fs::create_directories(out_dir);
  std::ostringstream ss;
  ss << "n_trials,accuracy\n"
     << indices.size() << ',' << oescn::format_double(acc) << '\n';
  oescn::write_text_file((fs::path(out_dir) / "eval.csv").string(), ss.str());
  json manifest;
  manifest["command"] = "evaluate";
  manifest["dataset"] = dataset_path;
  manifest["checkpoint"] = checkpoint_path;
  manifest["model"] = oescn::model_config_to_json(mcfg);
  write_manifest(fs::path(out_dir) / "manifest.json", manifest);

  std::printf("accuracy %.4f on %zu trials\n", acc, indices.size());
  return 0;
}

int run_attn_dump(const std::string& dataset_path,
                  const std::string& checkpoint_path, int trial,
                  const std::string& out_dir) {
  const oescn::Dataset ds = oescn::load_dataset(dataset_path);
  oescn::Checkpoint ck = oescn::load_checkpoint(checkpoint_path);
  const json manifest_in = json::parse(
      oescn::read_text_file(checkpoint_path + ".manifest.json"), nullptr,
      true, true);
  oescn::ModelConfig mcfg =
      oescn::model_config_from_json(manifest_in.at("model"));
  const oescn::TrainConfig tcfg =
      oescn::train_config_from_json(manifest_in.at("train"));
  if (mcfg.variant != oescn::Variant::oescn)
    throw oescn::InvalidArgument(
        "attn-dump: checkpoint was not trained with the attention variant");
  if (trial < 0 || static_cast<std::size_t>(trial) >= ds.trials.size())
    throw oescn::InvalidArgument("attn-dump: trial index out of range");

  const oescn::PsdFeatures psd =
      oescn::welch_psd(ds.trials[static_cast<std::size_t>(trial)], tcfg.welch);
  oescn::BandCombination combo = oescn::build_combination(psd, mcfg.band);
  combo.s = oescn::normalize_features(combo.s, *ck.params.find("norm.mean"),
                                      *ck.params.find("norm.std"));

  const oescn::AttentionParams att =
      oescn::attention_params_from_model(ck.params, combo.layout);
  const oescn::HeadOutputs heads =
      oescn::band_attention(combo, att, mcfg.effective_scale());

  fs::create_directories(out_dir);
  {
    std::ostringstream ss;
    oescn::write_layout_csv(ss, combo.layout);
    oescn::write_text_file((fs::path(out_dir) / "layout.csv").string(),
                           ss.str());
  }
  {
    std::ostringstream ss;
    oescn::write_attention_csv(ss, heads.global_weights);
    oescn::write_text_file((fs::path(out_dir) / "attn_global.csv").string(),
                           ss.str());
  }
  for (std::size_t i = 0; i < heads.local_weights.size(); ++i) {
    std::ostringstream ss;
    oescn::write_attention_csv(ss, heads.local_weights[i]);
    oescn::write_text_file(
        (fs::path(out_dir) / ("attn_local_" + std::to_string(i) + ".csv"))
            .string(),
        ss.str());
  }
  json manifest;
  manifest["command"] = "attn-dump";
  manifest["dataset"] = dataset_path;
  manifest["checkpoint"] = checkpoint_path;
  manifest["trial"] = trial;
  manifest["model"] = oescn::model_config_to_json(mcfg);
  write_manifest(fs::path(out_dir) / "manifest.json", manifest);

  std::printf("wrote %zu local heads plus the global head to %s\n",
              heads.local_weights.size(), out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Olfactory EEG spectral classification pipeline"};
  app.require_subcommand(1);

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string synth_preset_name, synth_out, synth_config;
  std::uint64_t synth_seed = 0;
  int synth_classes = -1, synth_tpc = -1, synth_channels = -1,
      synth_samples = -1;
  double synth_rate = -1.0, synth_noise = -1.0;
  synth->add_option("--preset", synth_preset_name,
                    "desk | paper-shape | ablation");
  synth->add_option("--config", synth_config, "JSON spec file");
  synth->add_option("--seed", synth_seed, "generation seed");
  synth->add_option("-o,--out", synth_out, "output dataset file")->required();
  synth->add_option("--classes", synth_classes, "number of classes");
  synth->add_option("--trials-per-class", synth_tpc, "trials per class");
  synth->add_option("--channels", synth_channels, "EEG channels");
  synth->add_option("--samples", synth_samples, "time points per trial");
  synth->add_option("--rate", synth_rate, "sampling rate in Hz");
  synth->add_option("--noise-sigma", synth_noise, "white noise sigma");

  // shared model/train flags -----------------------------------------------
  std::string config_path, preset_name, variant_name_flag = "oescn";
  std::string dataset_path, out_dir;
  int epochs = -1, batch = -1, folds = -1, jobs = -1, report_interval = -1;
  double lr = -1.0, dropout_p = -1.0, attention_scale = -1.0;
  std::uint64_t seed = 0, fold_seed = 0;
  bool no_stratify = false;

  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--dataset", dataset_path, "dataset file")->required();
    cmd->add_option("-o,--out", out_dir, "output directory")->required();
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--preset", preset_name, "desk | paper");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--batch", batch, "minibatch size");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--folds", folds, "cross-validation folds");
    cmd->add_option("--seed", seed, "training seed");
    cmd->add_option("--fold-seed", fold_seed, "fold plan seed");
    cmd->add_option("--jobs", jobs, "parallel fold workers (0 = auto)");
    cmd->add_option("--dropout", dropout_p, "dropout probability");
    cmd->add_option("--attention-scale", attention_scale,
                    "softmax scale override (default sqrt(C))");
    cmd->add_option("--report-interval", report_interval,
                    "progress print interval in epochs");
    cmd->add_flag("--no-stratify", no_stratify,
                  "plain shuffled folds instead of stratified");
  };

  auto* train = app.add_subcommand("train", "Train one variant under k-fold CV");
  train->add_option("--variant", variant_name_flag,
                    "oescn | oescn_a1 | oescn_a2");
  add_train_flags(train);

  auto* ablate =
      app.add_subcommand("ablate", "Train all three variants, shared folds");
  add_train_flags(ablate);

  auto* extract =
      app.add_subcommand("extract", "Write band-combination features");
  extract->add_option("--dataset", dataset_path, "dataset file")->required();
  extract->add_option("-o,--out", out_dir, "output directory")->required();
  extract->add_option("--config", config_path, "JSON config file");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  std::string checkpoint_path, fold_csv;
  int eval_fold = -1, dump_trial = 0;
  evaluate->add_option("--dataset", dataset_path, "dataset file")->required();
  evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint file")
      ->required();
  evaluate->add_option("-o,--out", out_dir, "output directory")->required();
  evaluate->add_option("--fold-csv", fold_csv, "fold plan csv");
  evaluate->add_option("--fold", eval_fold, "validation fold to select");

  auto* attn = app.add_subcommand("attn-dump",
                                  "Export attention weights for one trial");
  attn->add_option("--dataset", dataset_path, "dataset file")->required();
  attn->add_option("--checkpoint", checkpoint_path, "checkpoint file")
      ->required();
  attn->add_option("--trial", dump_trial, "trial index");
  attn->add_option("-o,--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed())
      return run_synth(synth_preset_name, synth_config, synth_seed, synth_out,
                       synth_classes, synth_tpc, synth_channels, synth_samples,
                       synth_rate, synth_noise, synth_noise >= 0.0);

    CommonConfig cfg = load_config_file(config_path);
    if (!preset_name.empty()) {
      apply_model_preset(cfg.model, preset_name);
      apply_train_preset(cfg.train, preset_name);
    }
    if (epochs > 0) cfg.train.epochs = epochs;
    if (batch > 0) cfg.train.batch_size = batch;
    if (lr >= 0.0) cfg.train.lr = lr;
    if (folds > 0) cfg.train.folds = folds;
    if (jobs >= 0) cfg.train.jobs = jobs;
    if (report_interval >= 0) cfg.train.report_interval = report_interval;
    cfg.train.seed = seed;
    cfg.train.fold_seed = fold_seed;
    if (no_stratify) cfg.train.stratified = false;
    if (dropout_p >= 0.0) cfg.model.dropout_p = dropout_p;
    if (attention_scale >= 0.0) cfg.model.attention_scale = attention_scale;

    if (train->parsed()) {
      cfg.model.variant = oescn::variant_from_name(variant_name_flag);
      return run_train(dataset_path, out_dir, cfg.model, cfg.train);
    }
    if (ablate->parsed())
      return run_ablate_cmd(dataset_path, out_dir, cfg.model, cfg.train);
    if (extract->parsed())
      return run_extract(dataset_path, out_dir, cfg.train, cfg.model);
    if (evaluate->parsed())
      return run_evaluate(dataset_path, checkpoint_path, out_dir, fold_csv,
                          eval_fold);
    if (attn->parsed())
      return run_attn_dump(dataset_path, checkpoint_path, dump_trial, out_dir);
  } catch (const oescn::Error& e) {
    const char* kind = "config";
    if (e.category() == oescn::ErrorCategory::data) kind = "data";
    if (e.category() == oescn::ErrorCategory::numeric) kind = "numeric";
    std::cerr << "[" << kind << " error] " << e.what() << "\n";
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "[error] " << e.what() << "\n";
    return 1;
  }
  return 0;
}
