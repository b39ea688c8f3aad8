#include "tlsphonon/histogram.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "tlsphonon/errors.hpp"

namespace tlsphonon {

Histogram make_histogram(std::span<const double> values, int bins) {
  if (values.empty()) throw ConfigError("make_histogram: no values");
  if (bins < 1) throw ConfigError("make_histogram: need at least one bin");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw ConfigError("make_histogram: non-finite values");
  if (hi == lo) {
    const double pad = lo == 0.0 ? 0.5 : 0.5 * std::abs(lo);
    lo -= pad;
    hi += pad;
  }
  Histogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) h.edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / bins;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double x : values) {
    auto b = static_cast<std::ptrdiff_t>((x - lo) / (hi - lo) * bins);
    b = std::clamp<std::ptrdiff_t>(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

}  // namespace tlsphonon
