#include "oescn/report.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

namespace oescn {

using nlohmann::json;

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["variant"] = variant_name(cfg.variant);
  j["n_classes"] = cfg.n_classes;
  j["channels"] = cfg.channels;
  j["psd_bins"] = cfg.psd_bins;
  j["band_window_lengths"] = cfg.band.window_lengths;
  j["band_increment"] = cfg.band.increment_g;
  j["branch_kernels"] = cfg.branch_kernels;
  j["branch_filters"] = cfg.branch_filters;
  j["trunk_filters"] = cfg.trunk_filters;
  j["trunk_kernel"] = cfg.trunk_kernel;
  j["fc_sizes"] = cfg.fc_sizes;
  j["dropout_p"] = cfg.dropout_p;
  j["attention_scale"] = cfg.attention_scale;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  try {
    if (j.contains("variant"))
      cfg.variant = variant_from_name(j.at("variant").get<std::string>());
    if (j.contains("n_classes")) cfg.n_classes = j.at("n_classes").get<int>();
    if (j.contains("channels")) cfg.channels = j.at("channels").get<int>();
    if (j.contains("psd_bins")) cfg.psd_bins = j.at("psd_bins").get<int>();
    if (j.contains("band_window_lengths"))
      cfg.band.window_lengths =
          j.at("band_window_lengths").get<std::vector<int>>();
    if (j.contains("band_increment"))
      cfg.band.increment_g = j.at("band_increment").get<int>();
    if (j.contains("branch_kernels"))
      cfg.branch_kernels = j.at("branch_kernels").get<std::vector<int>>();
    if (j.contains("branch_filters"))
      cfg.branch_filters = j.at("branch_filters").get<int>();
    if (j.contains("trunk_filters"))
      cfg.trunk_filters = j.at("trunk_filters").get<int>();
    if (j.contains("trunk_kernel"))
      cfg.trunk_kernel = j.at("trunk_kernel").get<int>();
    if (j.contains("fc_sizes"))
      cfg.fc_sizes = j.at("fc_sizes").get<std::vector<int>>();
    if (j.contains("dropout_p")) cfg.dropout_p = j.at("dropout_p").get<double>();
    if (j.contains("attention_scale"))
      cfg.attention_scale = j.at("attention_scale").get<double>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("model config json: ") + e.what());
  }
  return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["seed"] = cfg.seed;
  j["fold_seed"] = cfg.fold_seed;
  j["folds"] = cfg.folds;
  j["stratified"] = cfg.stratified;
  j["jobs"] = cfg.jobs;
  j["welch_window_len"] = cfg.welch.window_len;
  j["welch_overlap"] = cfg.welch.overlap_points;
  j["welch_fft_len"] = cfg.welch.fft_len;
  j["welch_f_lo_hz"] = cfg.welch.f_lo_hz;
  j["welch_f_hi_hz"] = cfg.welch.f_hi_hz;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  try {
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size"))
      cfg.batch_size = j.at("batch_size").get<int>();
    if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("fold_seed"))
      cfg.fold_seed = j.at("fold_seed").get<std::uint64_t>();
    if (j.contains("folds")) cfg.folds = j.at("folds").get<int>();
    if (j.contains("stratified"))
      cfg.stratified = j.at("stratified").get<bool>();
    if (j.contains("jobs")) cfg.jobs = j.at("jobs").get<int>();
    if (j.contains("welch_window_len"))
      cfg.welch.window_len = j.at("welch_window_len").get<int>();
    if (j.contains("welch_overlap"))
      cfg.welch.overlap_points = j.at("welch_overlap").get<int>();
    if (j.contains("welch_fft_len"))
      cfg.welch.fft_len = j.at("welch_fft_len").get<int>();
    if (j.contains("welch_f_lo_hz"))
      cfg.welch.f_lo_hz = j.at("welch_f_lo_hz").get<double>();
    if (j.contains("welch_f_hi_hz"))
      cfg.welch.f_hi_hz = j.at("welch_f_hi_hz").get<double>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("train config json: ") + e.what());
  }
  return cfg;
}

nlohmann::json synth_spec_to_json(const SynthSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["n_classes"] = spec.n_classes;
  j["trials_per_class"] = spec.trials_per_class;
  j["channels"] = spec.channels;
  j["time_points"] = spec.time_points;
  j["rate_hz"] = spec.rate_hz;
  j["noise_sigma"] = spec.noise_sigma;
  j["f_lo_hz"] = spec.f_lo_hz;
  j["f_hi_hz"] = spec.f_hi_hz;
  json comps = json::array();
  for (const auto& cls : spec.class_components) {
    json cj = json::array();
    for (const auto& c : cls)
      cj.push_back({{"center_hz", c.center_hz},
                    {"bandwidth_hz", c.bandwidth_hz},
                    {"amplitude", c.amplitude},
                    {"channels", c.channels}});
    comps.push_back(cj);
  }
  j["class_components"] = comps;
  return j;
}

SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec spec;
  try {
    if (j.contains("name")) spec.name = j.at("name").get<std::string>();
    if (j.contains("n_classes")) spec.n_classes = j.at("n_classes").get<int>();
    if (j.contains("trials_per_class"))
      spec.trials_per_class = j.at("trials_per_class").get<int>();
    if (j.contains("channels")) spec.channels = j.at("channels").get<int>();
    if (j.contains("time_points"))
      spec.time_points = j.at("time_points").get<int>();
    if (j.contains("rate_hz")) spec.rate_hz = j.at("rate_hz").get<double>();
    if (j.contains("noise_sigma"))
      spec.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("f_lo_hz")) spec.f_lo_hz = j.at("f_lo_hz").get<double>();
    if (j.contains("f_hi_hz")) spec.f_hi_hz = j.at("f_hi_hz").get<double>();
    if (j.contains("class_components")) {
      spec.class_components.clear();
      for (const auto& cj : j.at("class_components")) {
        std::vector<OscComponent> cls;
        for (const auto& c : cj) {
          OscComponent comp;
          comp.center_hz = c.at("center_hz").get<double>();
          comp.bandwidth_hz = c.at("bandwidth_hz").get<double>();
          comp.amplitude = c.at("amplitude").get<double>();
          if (c.contains("channels"))
            comp.channels = c.at("channels").get<std::vector<int>>();
          cls.push_back(comp);
        }
        spec.class_components.push_back(cls);
      }
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("synth spec json: ") + e.what());
  }
  return spec;
}

void write_report_csv(std::ostream& os, const RunReport& report) {
  os << "fold,n_val,accuracy\n";
  for (std::size_t f = 0; f < report.fold_accuracies.size(); ++f)
    os << f << ',' << report.fold_sizes[f] << ','
       << format_double(report.fold_accuracies[f]) << '\n';
  os << "mean,," << format_double(report.mean) << '\n';
  os << "std,," << format_double(report.stddev) << '\n';
}

void write_loss_csv(std::ostream& os, const RunReport& report) {
  os << "fold,epoch,mean_loss\n";
  for (std::size_t f = 0; f < report.loss_curves.size(); ++f)
    for (std::size_t e = 0; e < report.loss_curves[f].size(); ++e)
      os << f << ',' << e + 1 << ','
         << format_double(report.loss_curves[f][e]) << '\n';
}

void write_ablation_csv(std::ostream& os,
                        const std::vector<RunReport>& reports) {
  os << "variant,fold,accuracy\n";
  for (const RunReport& r : reports)
    for (std::size_t f = 0; f < r.fold_accuracies.size(); ++f)
      os << r.variant << ',' << f << ','
         << format_double(r.fold_accuracies[f]) << '\n';
  for (const RunReport& r : reports) {
    os << r.variant << ",mean," << format_double(r.mean) << '\n';
    os << r.variant << ",std," << format_double(r.stddev) << '\n';
  }
}

void write_metrics_csv(std::ostream& os,
                       const std::vector<SubjectResult>& subjects) {
  if (subjects.empty())
    throw InvalidArgument("metrics: no subject results to write");
  os << "subject,mean_accuracy,std_accuracy\n";
  std::vector<double> means;
  for (const SubjectResult& s : subjects) {
    os << s.subject << ',' << format_double(s.mean) << ','
       << format_double(s.stddev) << '\n';
    means.push_back(s.mean);
  }
  const auto [avg, _] = accuracy_stats(means);
  os << "average," << format_double(avg) << ",\n";
  if (subjects.size() >= 2)
    os << "inter_subject_std," << format_double(inter_subject_std(means))
       << ",\n";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path + "' for write");
  os << content;
  if (!os) throw DataError("write to '" + path + "' failed");
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace oescn
