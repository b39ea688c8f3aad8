// readout.hpp — dispersive Ramsey forward model and inversion, plus the ringdown,
// interference-fringe and dephasing-envelope fits.
//
// Ramsey signal:  S(t) = Σ_n A_n e^{-κt} cos((ω0 + 2χn) t + φ_n),  P(n) = A_n / Σ A_n
// Ringdown:       n̄(τ) = a1 e^{-κ1 τ} + a2 e^{-κ2 τ}
// Fringe:         n̄(φ) = C cos(φ + φ0) + n̄_off
// Envelope:       C(τ) = C0 e^{-γ τ},  T2m = 1/γ
//
// All frequencies and rates are angular (rad/s); times are seconds.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tlsphonon/least_squares.hpp"
#include "tlsphonon/phonon_distribution.hpp"

namespace tlsphonon {

struct DerivedQuantity {
  std::string name;
  double value = 0.0;
  double standard_error = 0.0;
};

struct FitResult {
  std::string model;
  std::vector<std::string> names;
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;
  double residual_norm = 0.0;      ///< ‖model − data‖₂
  double relative_residual = 0.0;  ///< residual_norm / ‖data‖₂
  bool converged = false;
  int n_iterations = 0;
  bool rank_deficient = false;
  double gradient_cosine = 0.0;
  std::vector<std::string> flags;  ///< e.g. "clamped:A3", "degenerate_rates", "kappa1_fixed"
  std::vector<DerivedQuantity> derived;

  Eigen::Index index(std::string_view name) const;  ///< throws ConfigError for unknown names
  double value(std::string_view name) const;
  double standard_error(std::string_view name) const;
  bool has_flag(std::string_view flag) const;
};

// ---- Ramsey signal -------------------------------------------------------------

struct RamseySignal {
  std::vector<double> times;
  std::vector<double> values;

  /// Throws ConfigError unless the grid is uniform (1e-12 relative) and lengths agree.
  void validate() const;
};

enum class PhaseMode { kPerLevel, kShared };

/// A_n = amplitude * P(n). `phases` holds one entry per level or a single shared phase.
RamseySignal synthesize_ramsey(const PhononDistribution& pn, double omega0, double chi, double kappa,
                               std::span<const double> phases, std::span<const double> times,
                               double amplitude = 1.0);

/// Parameter vector layout: A_0..A_{L-1}, phases (L or 1), κ, χ, ω0, with L = n_max + 1.
Eigen::VectorXd ramsey_model(const Eigen::VectorXd& p, std::span<const double> times, int n_levels, PhaseMode mode);
Eigen::MatrixXd ramsey_jacobian(const Eigen::VectorXd& p, std::span<const double> times, int n_levels,
                                PhaseMode mode);

struct RamseyHints {
  std::optional<double> omega0;
  std::optional<double> chi;
  std::optional<double> kappa;
  /// Sign assumed for χ when no χ hint is given; a comb of equally spaced tones
  /// is symmetric under χ → −χ with the level order reversed.
  double chi_sign = -1.0;
  PhaseMode phase_mode = PhaseMode::kPerLevel;
};

struct RamseyFit {
  PhononDistribution pn;
  FitResult fit;
};

/// Seeds ω0, χ and κ from a matrix-pencil estimate of the signal poles (unless
/// hinted), refines them on a variable-projection grid, then runs the full
/// damped least-squares fit. Throws NumericalError on non-convergence.
RamseyFit fit_ramsey(const RamseySignal& signal, int n_max, const RamseyHints& hints = {},
                     const LmOptions& opts = {});

// ---- ringdown, fringe and envelope fits ----------------------------------------

/// p = (a1, κ1, a2, κ2)
Eigen::VectorXd double_exp_model(const Eigen::VectorXd& p, std::span<const double> taus);
Eigen::MatrixXd double_exp_jacobian(const Eigen::VectorXd& p, std::span<const double> taus);

/// Fits a1 e^{-κ1τ} + a2 e^{-κ2τ} with κ1 > κ2. With `fixed_kappa1` the fast rate is
/// held and only a1, a2, κ2 are fitted. Flags "degenerate_rates" when the relative
/// gap between the rates is below 10%.
FitResult fit_double_exp(std::span<const double> taus, std::span<const double> nbar,
                         std::optional<double> fixed_kappa1 = std::nullopt, const LmOptions& opts = {});

/// Single exponential a e^{-κτ} + 0, for model comparison.
FitResult fit_single_exp(std::span<const double> taus, std::span<const double> nbar, const LmOptions& opts = {});

/// p = (C, φ0, n̄_off)
Eigen::VectorXd interference_model(const Eigen::VectorXd& p, std::span<const double> phis);
Eigen::MatrixXd interference_jacobian(const Eigen::VectorXd& p, std::span<const double> phis);

/// C ≥ 0 and φ0 ∈ (−π, π].
FitResult fit_interference(std::span<const double> phis, std::span<const double> nbar, const LmOptions& opts = {});

/// p = (C0, γ)
Eigen::VectorXd envelope_model(const Eigen::VectorXd& p, std::span<const double> taus);
Eigen::MatrixXd envelope_jacobian(const Eigen::VectorXd& p, std::span<const double> taus);

/// Fits C0 e^{-γτ}; reports derived "T2m" = 1/γ. Throws NumericalError when the
/// amplitudes grow significantly over the window.
FitResult fit_t2m(std::span<const double> taus, std::span<const double> amplitudes, const LmOptions& opts = {});

/// Durbin–Watson statistic Σ(e_i − e_{i−1})² / Σ e_i²; 2 for uncorrelated residuals.
double durbin_watson(const Eigen::VectorXd& residuals);

// ---- closed forms ---------------------------------------------------------------

/// χ = −(g²/Δ) α_q / (Δ − α_q)
double dispersive_shift(double g, double delta, double alpha_q);
/// Inverse of dispersive_shift for α_q.
double anharmonicity_for_shift(double g, double delta, double chi);

double mean_phonon(const PhononDistribution& pn);
PhononDistribution poisson_reference(double nbar, int n_max);

}  // namespace tlsphonon
