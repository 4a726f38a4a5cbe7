#include "oescn/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>

namespace oescn {

void Dataset::validate() const {
  if (trials.empty()) throw DataError("dataset: no trials");
  if (n_classes < 1) throw DataError("dataset: n_classes must be >= 1");
  const Eigen::Index c = trials[0].channels();
  const Eigen::Index t = trials[0].time_points();
  const double rate = trials[0].rate_hz;
  if (c < 1) throw DataError("dataset: channel count must be >= 1");
  if (t < 1) throw DataError("dataset: time points must be >= 1");
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const TrialRecording& tr = trials[i];
    if (tr.channels() != c || tr.time_points() != t || tr.rate_hz != rate)
      throw DataError("dataset: trial " + std::to_string(i) +
                      " has mismatched shape or rate");
    if (tr.label < 0 || tr.label >= n_classes)
      throw DataError("dataset: trial " + std::to_string(i) +
                      " label out of range");
  }
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(trials.size());
  for (const auto& t : trials) out.push_back(t.label);
  return out;
}

std::vector<int> FoldPlan::train_indices(int fold) const {
  if (fold < 0 || fold >= static_cast<int>(folds.size()))
    throw InvalidArgument("fold index out of range");
  std::vector<int> out;
  for (int f = 0; f < static_cast<int>(folds.size()); ++f)
    if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
  return out;
}

const std::vector<int>& FoldPlan::validation_indices(int fold) const {
  if (fold < 0 || fold >= static_cast<int>(folds.size()))
    throw InvalidArgument("fold index out of range");
  return folds[fold];
}

std::vector<int> FoldPlan::fold_of_trial(int n_trials) const {
  std::vector<int> owner(n_trials, -1);
  for (int f = 0; f < static_cast<int>(folds.size()); ++f)
    for (int idx : folds[f]) {
      if (idx < 0 || idx >= n_trials)
        throw InvalidArgument("fold plan references trial out of range");
      if (owner[idx] != -1)
        throw InvalidArgument("fold plan assigns a trial twice");
      owner[idx] = f;
    }
  for (int idx = 0; idx < n_trials; ++idx)
    if (owner[idx] == -1)
      throw InvalidArgument("fold plan does not cover every trial");
  return owner;
}

FoldPlan kfold_split(int n_trials, int k, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("kfold: k must be >= 2");
  if (n_trials < k) throw InvalidArgument("kfold: fewer trials than folds");
  std::vector<int> idx(n_trials);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, 0x666f6c64 /* "fold" */));
  rng.shuffle(idx);

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.resize(k);
  const int base = n_trials / k;
  const int extra = n_trials % k;
  int pos = 0;
  for (int f = 0; f < k; ++f) {
    const int size = base + (f < extra ? 1 : 0);
    plan.folds[f].assign(idx.begin() + pos, idx.begin() + pos + size);
    pos += size;
  }
  return plan;
}

FoldPlan kfold_split_stratified(const std::vector<int>& labels, int k,
                                std::uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  if (k < 2) throw InvalidArgument("kfold: k must be >= 2");
  if (n < k) throw InvalidArgument("kfold: fewer trials than folds");
  int n_classes = 0;
  for (int l : labels) {
    if (l < 0) throw InvalidArgument("kfold: negative label");
    n_classes = std::max(n_classes, l + 1);
  }
  std::vector<std::vector<int>> by_class(n_classes);
  for (int i = 0; i < n; ++i) by_class[labels[i]].push_back(i);

  Rng rng(derive_seed(seed, 0x666f6c64));
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.resize(k);
  // Round-robin dealing continues across classes, so both the per-class and
  // the overall fold sizes differ by at most one.
  int cursor = 0;
  for (auto& members : by_class) {
    rng.shuffle(members);
    for (int idx : members) {
      plan.folds[cursor % k].push_back(idx);
      ++cursor;
    }
  }
  return plan;
}

void SynthSpec::validate() const {
  if (n_classes < 1) throw InvalidArgument("synth: n_classes must be >= 1");
  if (trials_per_class < 1)
    throw InvalidArgument("synth: trials_per_class must be >= 1");
  if (channels < 1) throw InvalidArgument("synth: channels must be >= 1");
  if (time_points < 1) throw InvalidArgument("synth: time_points must be >= 1");
  if (rate_hz <= 0.0) throw InvalidArgument("synth: rate must be positive");
  if (noise_sigma < 0.0)
    throw InvalidArgument("synth: noise sigma must be nonnegative");
  if (static_cast<int>(class_components.size()) != n_classes)
    throw InvalidArgument("synth: need one component list per class");
  for (const auto& comps : class_components)
    for (const auto& c : comps) {
      if (!(c.center_hz > f_lo_hz && c.center_hz < f_hi_hz))
        throw InvalidArgument("synth: component center outside analysis band");
      if (c.bandwidth_hz < 0.0 ||
          c.center_hz - c.bandwidth_hz / 2.0 <= 0.0 ||
          c.center_hz + c.bandwidth_hz / 2.0 >= rate_hz / 2.0)
        throw InvalidArgument("synth: component bandwidth out of range");
      if (!(c.amplitude > 0.0))
        throw InvalidArgument("synth: component amplitude must be positive");
      for (int ch : c.channels)
        if (ch < 0 || ch >= channels)
          throw InvalidArgument("synth: component channel out of range");
    }
}

SynthSpec synth_preset(const std::string& name) {
  SynthSpec s;
  s.name = name;
  auto group = [](int start, int size, int c) {
    std::vector<int> g;
    for (int i = 0; i < size; ++i) g.push_back((start + i) % c);
    return g;
  };
  if (name == "desk") {
    s.n_classes = 4;
    s.trials_per_class = 20;
    s.channels = 8;
    s.time_points = 2000;
    s.noise_sigma = 0.5;
    for (int i = 0; i < s.n_classes; ++i) {
      OscComponent c;
      c.center_hz = 8.0 + 7.0 * i;
      c.bandwidth_hz = 2.0;
      c.amplitude = 1.0;
      c.channels = group(2 * i, 4, s.channels);
      s.class_components.push_back({c});
    }
  } else if (name == "paper-shape") {
    s.n_classes = 13;
    s.trials_per_class = 35;
    s.channels = 30;
    s.time_points = 10000;
    s.noise_sigma = 0.5;
    for (int i = 0; i < s.n_classes; ++i) {
      OscComponent c;
      c.center_hz = 5.0 + 5.0 * i;
      c.bandwidth_hz = 2.0;
      c.amplitude = 1.0;
      c.channels = group(3 * i, 10, s.channels);
      s.class_components.push_back({c});
    }
  } else if (name == "ablation") {
    // Classes are conjunctions of one low and one high band; the marginal
    // band powers are shared pairwise, so cross-band structure carries the
    // label. Jitter spreads peaks over several raw 1 Hz bins.
    s.n_classes = 4;
    s.trials_per_class = 15;
    s.channels = 6;
    s.time_points = 1000;
    s.noise_sigma = 1.0;
    const double lows[2] = {10.0, 22.0};
    const double highs[2] = {34.0, 46.0};
    for (int i = 0; i < s.n_classes; ++i) {
      OscComponent lo, hi;
      lo.center_hz = lows[i / 2];
      hi.center_hz = highs[i % 2];
      lo.bandwidth_hz = hi.bandwidth_hz = 4.0;
      lo.amplitude = hi.amplitude = 1.0;
      s.class_components.push_back({lo, hi});
    }
  } else {
    throw InvalidArgument("synth: unknown preset '" + name + "'");
  }
  s.validate();
  return s;
}

Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, 0x73796e7468 /* "synth" */));

  Dataset ds;
  ds.n_classes = spec.n_classes;
  ds.subject_id = "synthetic-" + spec.name;
  ds.provenance = "synthetic";
  ds.seed = seed;
  ds.trials.reserve(static_cast<std::size_t>(spec.n_classes) *
                    spec.trials_per_class);

  const int c_count = spec.channels;
  const int t_count = spec.time_points;
  Matrix buf(c_count, t_count);
  for (int cls = 0; cls < spec.n_classes; ++cls) {
    for (int rep = 0; rep < spec.trials_per_class; ++rep) {
      buf.setZero();
      for (const OscComponent& comp : spec.class_components[cls]) {
        const double freq =
            comp.center_hz + rng.uniform(-0.5, 0.5) * comp.bandwidth_hz;
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        const double w = 2.0 * M_PI * freq / spec.rate_hz;
        const std::vector<int>* chans = &comp.channels;
        std::vector<int> all;
        if (chans->empty()) {
          all.resize(c_count);
          std::iota(all.begin(), all.end(), 0);
          chans = &all;
        }
        for (int ch : *chans)
          for (int t = 0; t < t_count; ++t)
            buf(ch, t) += comp.amplitude * std::sin(w * t + phase);
      }
      for (int ch = 0; ch < c_count; ++ch)
        for (int t = 0; t < t_count; ++t)
          buf(ch, t) += spec.noise_sigma * rng.normal();

      TrialRecording trial;
      trial.samples = buf.cast<float>();
      trial.rate_hz = spec.rate_hz;
      trial.label = cls;
      trial.subject_id = ds.subject_id;
      ds.trials.push_back(std::move(trial));
    }
  }
  ds.validate();
  return ds;
}

std::pair<double, double> accuracy_stats(const std::vector<double>& per_fold) {
  if (per_fold.empty()) throw InvalidArgument("accuracy_stats: empty input");
  for (double a : per_fold)
    if (!(a >= 0.0 && a <= 1.0))
      throw InvalidArgument("accuracy_stats: accuracy outside [0, 1]");
  const double mean =
      std::accumulate(per_fold.begin(), per_fold.end(), 0.0) /
      static_cast<double>(per_fold.size());
  if (per_fold.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double a : per_fold) ss += (a - mean) * (a - mean);
  return {mean, std::sqrt(ss / static_cast<double>(per_fold.size() - 1))};
}

double inter_subject_std(const std::vector<double>& per_subject_means) {
  if (per_subject_means.size() < 2)
    throw InvalidArgument("inter_subject_std: need at least two subjects");
  const double mean =
      std::accumulate(per_subject_means.begin(), per_subject_means.end(), 0.0) /
      static_cast<double>(per_subject_means.size());
  double ss = 0.0;
  for (double a : per_subject_means) ss += (a - mean) * (a - mean);
  return std::sqrt(ss / static_cast<double>(per_subject_means.size() - 1));
}

namespace {

constexpr char kMagic[8] = {'O', 'E', 'S', 'C', 'D', 'A', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void read_exact(std::istream& is, void* p, std::size_t n, const char* what) {
  const auto at = is.tellg();
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw DataError(std::string("dataset: truncated while reading ") + what +
                    " at byte offset " + std::to_string(static_cast<long>(at)));
}

template <typename T>
T read_one(std::istream& is, const char* what) {
  T v;
  read_exact(is, &v, sizeof(T), what);
  return v;
}

template <typename T>
void write_one(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("dataset: cannot open '" + path + "' for write");
  os.write(kMagic, sizeof(kMagic));
  write_one<std::uint32_t>(os, kVersion);
  write_one<std::uint32_t>(os, static_cast<std::uint32_t>(ds.channels()));
  write_one<std::uint32_t>(os, static_cast<std::uint32_t>(ds.time_points()));
  write_one<double>(os, ds.rate_hz());
  write_one<std::uint32_t>(os, static_cast<std::uint32_t>(ds.n_classes));
  write_one<std::uint32_t>(os, static_cast<std::uint32_t>(ds.trials.size()));
  write_one<std::uint32_t>(os, static_cast<std::uint32_t>(ds.subject_id.size()));
  os.write(ds.subject_id.data(),
           static_cast<std::streamsize>(ds.subject_id.size()));
  for (const auto& t : ds.trials)
    write_one<std::uint32_t>(os, static_cast<std::uint32_t>(t.label));
  std::vector<float> row(static_cast<std::size_t>(ds.time_points()));
  for (const auto& t : ds.trials)
    for (Eigen::Index c = 0; c < t.channels(); ++c) {
      for (Eigen::Index j = 0; j < t.time_points(); ++j)
        row[static_cast<std::size_t>(j)] = t.samples(c, j);
      os.write(reinterpret_cast<const char*>(row.data()),
               static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
  if (!os) throw DataError("dataset: write to '" + path + "' failed");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("dataset: cannot open '" + path + "'");
  char magic[8];
  read_exact(is, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("dataset: bad magic at byte offset 0, not a trial container");
  const auto version = read_one<std::uint32_t>(is, "version");
  if (version != kVersion)
    throw DataError("dataset: unsupported version " + std::to_string(version));
  const auto c = read_one<std::uint32_t>(is, "channel count");
  const auto t = read_one<std::uint32_t>(is, "time points");
  const auto rate = read_one<double>(is, "rate");
  const auto n_classes = read_one<std::uint32_t>(is, "class count");
  const auto n_trials = read_one<std::uint32_t>(is, "trial count");
  if (c == 0) throw DataError("dataset: header claims zero channels");
  if (t == 0) throw DataError("dataset: header claims zero time points");
  if (n_classes == 0) throw DataError("dataset: header claims zero classes");
  if (n_trials == 0) throw DataError("dataset: header claims zero trials");
  if (!(rate > 0.0) || !std::isfinite(rate))
    throw DataError("dataset: header sampling rate invalid");
  const auto subj_len = read_one<std::uint32_t>(is, "subject length");
  if (subj_len > 4096) throw DataError("dataset: implausible subject length");
  std::string subject(subj_len, '\0');
  read_exact(is, subject.data(), subj_len, "subject id");

  Dataset ds;
  ds.n_classes = static_cast<int>(n_classes);
  ds.subject_id = subject;
  ds.provenance = "file";
  std::vector<std::uint32_t> labels(n_trials);
  read_exact(is, labels.data(), n_trials * sizeof(std::uint32_t), "labels");
  for (std::uint32_t l : labels)
    if (l >= n_classes)
      throw DataError("dataset: label " + std::to_string(l) +
                      " out of range for " + std::to_string(n_classes) +
                      " classes");

  std::vector<float> row(t);
  ds.trials.resize(n_trials);
  for (std::uint32_t i = 0; i < n_trials; ++i) {
    TrialRecording& trial = ds.trials[i];
    trial.samples.resize(c, t);
    trial.rate_hz = rate;
    trial.label = static_cast<int>(labels[i]);
    trial.subject_id = subject;
    for (std::uint32_t ch = 0; ch < c; ++ch) {
      read_exact(is, row.data(), t * sizeof(float), "samples");
      for (std::uint32_t j = 0; j < t; ++j) trial.samples(ch, j) = row[j];
    }
  }
  ds.validate();
  return ds;
}

void write_fold_csv(std::ostream& os, const FoldPlan& plan, int n_trials) {
  const std::vector<int> owner = plan.fold_of_trial(n_trials);
  os << "trial,fold\n";
  for (int i = 0; i < n_trials; ++i) os << i << ',' << owner[i] << '\n';
}

}  // namespace oescn
