// montecarlo.hpp — error propagation by resampling populations and re-fitting noisy
// replicas of a dataset.
//
// Iteration i draws from its own generator seeded with the i-th splitmix64 output of
// the run seed, so reports do not depend on the thread count or scheduling.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tlsphonon/histogram.hpp"
#include "tlsphonon/phonon_distribution.hpp"
#include "tlsphonon/readout.hpp"

namespace tlsphonon {

struct ResampleConfig {
  int n_iterations = 2000;
  std::uint64_t seed = 0;
  int threads = 1;
  int bins = 40;

  /// Throws ConfigError unless n_iterations >= 2, threads >= 1 and bins >= 1.
  void validate() const;
};

struct UncertaintyReport {
  std::string quantity;
  double point_estimate = 0.0;  ///< value from the unperturbed input
  double mean = 0.0;            ///< over accepted replicas
  double std_dev = 0.0;         ///< sample standard deviation (n − 1) over accepted replicas
  Histogram histogram;          ///< counts sum to n_accepted
  std::vector<double> samples;  ///< accepted replica values, in iteration order
  int n_iterations = 0;
  int n_accepted = 0;
  int n_failed = 0;
  bool flagged = false;  ///< more than 10% of the replica fits failed
};

/// i-th output of the splitmix64 sequence started at `seed`.
std::uint64_t splitmix64(std::uint64_t seed, std::uint64_t i);

/// Adds N(0, σ_n) to every level, clamps negatives, renormalizes and records n̄.
/// Throws ConfigError when the distribution carries no sigmas or a replica has no
/// positive level left after clamping.
UncertaintyReport resample_pn(const PhononDistribution& pn, const ResampleConfig& cfg);

using FitFn = std::function<FitResult(std::span<const double> values)>;

/// Fits `values` once for the point estimates, then re-fits replicas with N(0, σ_i)
/// added per point. One report per fitted parameter followed by one per derived
/// quantity. Replicas whose fit throws, does not converge or yields a non-finite value
/// are dropped and counted; all reports are flagged when more than 10% fail.
std::vector<UncertaintyReport> resample_fit(std::span<const double> values, std::span<const double> sigmas,
                                            const FitFn& fit, const ResampleConfig& cfg);

}  // namespace tlsphonon
