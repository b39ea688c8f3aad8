// experiments.hpp — virtual ringdown and two-pulse displacement interferometry
//
// Both protocols start from the thermal product state of SystemConfig (mechanics and
// TLS at n_th), apply an instantaneous displacement D(α) to the mechanics, and let
// the coupled system evolve under the master equation.

#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tlsphonon/hilbert.hpp"
#include "tlsphonon/lindblad.hpp"
#include "tlsphonon/phonon_distribution.hpp"
#include "tlsphonon/readout.hpp"

namespace tlsphonon {

struct RingdownDataset {
  Complex alpha0;
  std::vector<double> taus;
  std::vector<double> nbar;
  std::vector<PhononDistribution> pn;
  Trajectory trajectory;  ///< full record at the same sample times

  /// nbar[i] = Σ n pn[i][n] within 1e-10 and matching lengths; throws ConfigError.
  void validate() const;
};

struct InterferometryDataset {
  Complex alpha;
  std::vector<double> taus;
  std::vector<double> phis;   ///< strictly increasing, in [0, 2π)
  Eigen::MatrixXd nbar_grid;  ///< rows: τ, columns: φ
  int pulse_n_max = 0;        ///< Fock cutoff used for the second displacement

  void validate() const;
};

/// Thermal product state with D(alpha0) applied to the mechanics. Throws
/// TruncationError when cfg.n_max violates the truncation rule for |alpha0|.
DensityMatrix displaced_thermal_state(const SystemConfig& cfg, Complex alpha0);

RingdownDataset run_ringdown(const SystemConfig& cfg, Complex alpha0, std::span<const double> taus,
                             const EvolveOptions& opts = {});

/// `count` evenly spaced phases on [0, 2π).
std::vector<double> default_phase_grid(int count = 24);

/// Evolves once to max(taus). At each τ the reduced mechanical state is embedded
/// in a Fock space large enough for a displacement of 2|alpha|, conjugated by
/// D(alpha e^{iφ}) for every φ, and n̄ is recorded. The evolution itself only
/// needs cfg.n_max to satisfy the truncation rule for |alpha|.
InterferometryDataset run_interferometry(const SystemConfig& cfg, Complex alpha, std::span<const double> taus,
                                         std::span<const double> phis, const EvolveOptions& opts = {});

/// Same protocol for an arbitrary generator. `rho0` is the state before the first
/// pulse; its mechanics factor must satisfy the truncation rule for |alpha|.
InterferometryDataset run_interferometry(const DensityMatrix& rho0, const Operator& hamiltonian,
                                         const std::vector<Operator>& collapse_ops, Complex alpha,
                                         std::span<const double> taus, std::span<const double> phis,
                                         const EvolveOptions& opts = {});

/// Mechanical pure-dephasing jump operator sqrt(2 / T2m) b†b, under which the
/// coherence <b> of any state decays as e^{-t/T2m}.
Operator mechanical_dephasing_operator(const HilbertLayout& layout, double t2m);

/// n̄ after conjugating a mechanics-only state by D(beta), in a space of cutoff
/// `pulse_n_max` >= the state's cutoff.
double displaced_mean_phonon(const CMatrix& mech_rho, Complex beta, int pulse_n_max);

struct DephasingAnalysis {
  std::vector<FitResult> fringes;  ///< one fringe fit per τ
  std::vector<double> amplitudes;  ///< fitted C(τ)
  std::vector<double> amplitude_errors;
  std::vector<double> offsets;     ///< fitted n̄_off(τ)
  FitResult envelope;              ///< C(τ) = C0 e^{-γ_2m τ}
  double gamma_2m = 0.0;
  double t2m = 0.0;
  double max_fringe_residual = 0.0;  ///< worst fringe RMS residual relative to its amplitude
};

/// Fits each fringe, then the exponential decay of the fringe amplitudes.
DephasingAnalysis analyze_dephasing(const InterferometryDataset& data, const LmOptions& opts = {});

/// CSV `tau_s,nbar,p0..p{n_max}`.
void write_ringdown_csv(const RingdownDataset& data, std::ostream& out);
/// CSV `tau_s,phi_rad,nbar`, one row per grid point.
void write_interferometry_csv(const InterferometryDataset& data, std::ostream& out);

}  // namespace tlsphonon
