#include "tlsphonon/phonon_distribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tlsphonon/errors.hpp"

namespace tlsphonon {

double PhononDistribution::total() const {
  return std::accumulate(probs.begin(), probs.end(), 0.0);
}

double PhononDistribution::mean() const {
  double acc = 0.0;
  for (std::size_t n = 0; n < probs.size(); ++n) acc += static_cast<double>(n) * probs[n];
  return acc;
}

void PhononDistribution::normalize() {
  for (double& p : probs) p = std::max(p, 0.0);
  const double s = total();
  if (!(s > 0.0)) throw ConfigError("PhononDistribution::normalize: no positive probability mass");
  for (double& p : probs) p /= s;
  for (double& sg : sigmas) sg /= s;
}

void PhononDistribution::validate(double tol) const {
  if (probs.empty()) throw ConfigError("PhononDistribution: empty");
  if (!sigmas.empty() && sigmas.size() != probs.size())
    throw ConfigError("PhononDistribution: sigmas length does not match probs");
  for (double p : probs)
    if (!(p >= 0.0)) throw ConfigError("PhononDistribution: negative or NaN probability");
  if (std::abs(total() - 1.0) > tol) throw ConfigError("PhononDistribution: probabilities do not sum to 1");
}

double total_variation_distance(const PhononDistribution& a, const PhononDistribution& b) {
  const std::size_t n = std::max(a.size(), b.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pa = i < a.size() ? a.probs[i] : 0.0;
    const double pb = i < b.size() ? b.probs[i] : 0.0;
    acc += std::abs(pa - pb);
  }
  return 0.5 * acc;
}

}  // namespace tlsphonon
