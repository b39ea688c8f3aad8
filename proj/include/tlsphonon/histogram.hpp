// histogram.hpp — equal-width histograms for sampled distributions

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace tlsphonon {

struct Histogram {
  std::vector<double> edges;          ///< bins + 1 increasing edges
  std::vector<std::uint64_t> counts;  ///< one per bin; the last bin is closed on the right
};

/// Equal-width bins spanning [min, max] of the data. Throws ConfigError on empty input.
Histogram make_histogram(std::span<const double> values, int bins);

}  // namespace tlsphonon
