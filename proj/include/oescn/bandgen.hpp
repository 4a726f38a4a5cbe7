#pragma once

#include <iosfwd>
#include <vector>

#include "oescn/common.hpp"
#include "oescn/signal.hpp"

namespace oescn {

// Sliding-window band scheme: slice widths are in PSD bins, which equal Hz
// on the 1 Hz analysis grid.
struct BandGenConfig {
  std::vector<int> window_lengths{1, 5, 10, 15, 20};
  int increment_g = 1;
};

// Per-scale slice counts B_i = floor((P - L_i) / G), offsets are the
// exclusive prefix sums, total K = sum of B_i.
struct BandLayout {
  std::vector<int> window_lengths;
  int increment_g = 1;
  std::vector<int> per_scale_counts;
  std::vector<int> offsets;
  int total_k = 0;

  int scales() const { return static_cast<int>(per_scale_counts.size()); }
  static BandLayout from_counts(std::vector<int> counts);
};

struct BandCombination {
  Matrix s;  // C x K band-mean matrix
  BandLayout layout;
};

BandLayout band_counts(int p, const BandGenConfig& cfg);

// b mean values of width-l windows advanced by g over one PSD channel.
Vector slice_scale(const Eigen::Ref<const Vector>& f_c, int l, int g, int b);

// Concatenates all per-scale slices, in the configured scale order, for
// every channel.
BandCombination build_combination(const PsdFeatures& psd,
                                  const BandGenConfig& cfg);

// Text descriptor: one "scale,L,G,B,offset" row per scale plus a total row.
void write_layout_csv(std::ostream& os, const BandLayout& layout);
BandLayout read_layout_csv(std::istream& is);

}  // namespace oescn
