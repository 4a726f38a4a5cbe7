#include "oescn/bandgen.hpp"

#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace oescn {

BandLayout BandLayout::from_counts(std::vector<int> counts) {
  BandLayout l;
  l.per_scale_counts = std::move(counts);
  l.window_lengths.assign(l.per_scale_counts.size(), 0);
  l.offsets.resize(l.per_scale_counts.size());
  int off = 0;
  for (std::size_t i = 0; i < l.per_scale_counts.size(); ++i) {
    l.offsets[i] = off;
    off += l.per_scale_counts[i];
  }
  l.total_k = off;
  return l;
}

BandLayout band_counts(int p, const BandGenConfig& cfg) {
  if (p < 1) throw InvalidArgument("band_counts: bin count must be >= 1");
  if (cfg.increment_g < 1)
    throw InvalidArgument("band_counts: increment must be >= 1");
  if (cfg.window_lengths.empty())
    throw InvalidArgument("band_counts: no window lengths configured");

  BandLayout layout;
  layout.window_lengths = cfg.window_lengths;
  layout.increment_g = cfg.increment_g;
  int off = 0;
  for (int l : cfg.window_lengths) {
    if (l < 1) throw InvalidArgument("band_counts: window length must be >= 1");
    const int b = (p - l) / cfg.increment_g;
    if (b < 1)
      throw InvalidArgument("band_counts: degenerate scale, window length " +
                            std::to_string(l) + " leaves no slices for P = " +
                            std::to_string(p));
    layout.per_scale_counts.push_back(b);
    layout.offsets.push_back(off);
    off += b;
  }
  layout.total_k = off;
  return layout;
}

Vector slice_scale(const Eigen::Ref<const Vector>& f_c, int l, int g, int b) {
  if (b < 1) throw InvalidArgument("slice_scale: slice count must be >= 1");
  if (l < 1 || g < 1) throw InvalidArgument("slice_scale: bad width/increment");
  if (static_cast<Eigen::Index>(b - 1) * g + l > f_c.size())
    throw InvalidArgument("slice_scale: slices overrun the channel");
  Vector out(b);
  for (int j = 0; j < b; ++j) {
    // Plain left-to-right accumulation keeps the result loop-reproducible.
    double acc = 0.0;
    for (int k = 0; k < l; ++k) acc += f_c[j * g + k];
    out[j] = acc / l;
  }
  return out;
}

BandCombination build_combination(const PsdFeatures& psd,
                                  const BandGenConfig& cfg) {
  const int p = static_cast<int>(psd.bins());
  BandCombination combo;
  combo.layout = band_counts(p, cfg);
  combo.s.resize(psd.channels(), combo.layout.total_k);

  for (Eigen::Index c = 0; c < psd.channels(); ++c) {
    const Vector channel = psd.values.row(c).transpose();
    for (int i = 0; i < combo.layout.scales(); ++i) {
      const int b = combo.layout.per_scale_counts[i];
      const Vector means = slice_scale(channel, combo.layout.window_lengths[i],
                                       combo.layout.increment_g, b);
      combo.s.block(c, combo.layout.offsets[i], 1, b) = means.transpose();
    }
  }
  return combo;
}

void write_layout_csv(std::ostream& os, const BandLayout& layout) {
  os << "scale,window_len,increment,count,offset\n";
  for (int i = 0; i < layout.scales(); ++i)
    os << i << ',' << layout.window_lengths[i] << ',' << layout.increment_g
       << ',' << layout.per_scale_counts[i] << ',' << layout.offsets[i] << '\n';
  os << "total,,," << layout.total_k << ",\n";
}

BandLayout read_layout_csv(std::istream& is) {
  BandLayout layout;
  layout.increment_g = 0;
  int declared_total = -1;
  std::string line;
  if (!std::getline(is, line) || line.rfind("scale,", 0) != 0)
    throw DataError("layout csv: missing header row");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f0, f1, f2, f3, f4;
    std::getline(ss, f0, ',');
    std::getline(ss, f1, ',');
    std::getline(ss, f2, ',');
    std::getline(ss, f3, ',');
    std::getline(ss, f4, ',');
    try {
      if (f0 == "total") {
        declared_total = std::stoi(f3);
      } else {
        layout.window_lengths.push_back(std::stoi(f1));
        layout.increment_g = std::stoi(f2);
        layout.per_scale_counts.push_back(std::stoi(f3));
        layout.offsets.push_back(std::stoi(f4));
      }
    } catch (const std::exception&) {
      throw DataError("layout csv: malformed row '" + line + "'");
    }
  }
  if (layout.per_scale_counts.empty())
    throw DataError("layout csv: no scale rows");
  layout.total_k = 0;
  for (int b : layout.per_scale_counts) layout.total_k += b;
  if (declared_total >= 0 && declared_total != layout.total_k)
    throw DataError("layout csv: total row disagrees with scale rows");
  return layout;
}

}  // namespace oescn
