// phonon_distribution.hpp — Fock-level occupation probabilities with uncertainties

#pragma once

#include <cstddef>
#include <vector>

namespace tlsphonon {

/// Occupation probabilities P(n), n = 0..n_max, with per-level standard deviations.
/// `sigmas` is either empty (no uncertainty information) or the same length as `probs`.
struct PhononDistribution {
  std::vector<double> probs;
  std::vector<double> sigmas;

  std::size_t size() const { return probs.size(); }
  int n_max() const { return static_cast<int>(probs.size()) - 1; }
  bool has_sigmas() const { return !sigmas.empty(); }

  double total() const;
  double mean() const;

  /// Clamps negative entries to zero and rescales to unit sum. Throws ConfigError
  /// when nothing positive is left.
  void normalize();

  /// Validates non-negativity and unit sum within `tol`; throws ConfigError.
  void validate(double tol = 1e-9) const;
};

double total_variation_distance(const PhononDistribution& a, const PhononDistribution& b);

}  // namespace tlsphonon
