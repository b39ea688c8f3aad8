// tlsparams.hpp — microscopic TLS parameters from material constants and mode fields,
// plus the modified Butterworth–van Dyke (mBVD) admittance of the transducer.
//
//   m_eff = ∫dV ρ|u|² / max|u|²           x_zpf = sqrt(ħ / 2 m_eff ω_m)
//   ξ̄_zpf = x_zpf / max|u| · sqrt((1/6V) ∫dV Σ ξ_ij²)
//   γ = sqrt(δ⁰ ρ v² / (π P₀))            g_TLS = γ ξ̄_zpf / ħ
//   N = 10 P₀ V ħ δω                       (P ≈ 10 P₀ at 10 mK)

#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "tlsphonon/histogram.hpp"

namespace tlsphonon {

inline constexpr double kHbar = 1.054571817e-34;  // J·s

struct MaterialConstants {
  double rho = 4700.0;                 ///< kg/m³ (lithium niobate)
  double v = 4000.0;                   ///< m/s
  double p0 = 1e45;                    ///< 1/(J·m³)
  double delta0 = 5.623413251903491e-5;  ///< 10^-4.25, mid-range of 10^-4.5..10^-4
  double hbar = kHbar;
  /// The measured quantity is F·δ⁰; delta0 above is that product and is divided by F.
  double filling_factor = 1.0;

  /// Throws ConfigError unless rho, v, p0, hbar, filling_factor > 0 and delta0 >= 0.
  void validate() const;
};

/// Discretized eigenmode: one row per sample point.
struct ModeField {
  std::vector<double> volumes;                   ///< dV, m³
  std::vector<double> displacement;              ///< |u|, m
  std::vector<std::array<double, 6>> strain;     ///< ξ_xx, ξ_xy, ξ_xz, ξ_yy, ξ_yz, ξ_zz
  double omega_m = 0.0;                          ///< rad/s

  std::size_t size() const { return volumes.size(); }
  double total_volume() const;
  double max_displacement() const;
  /// Throws ConfigError on an empty grid, mismatched columns, dV <= 0 or non-finite entries.
  void validate() const;
};

/// Reads `dV_m3,u_abs_m,exx,exy,exz,eyy,eyz,ezz` with a header line. Throws IoError on
/// malformed rows.
ModeField read_mode_field_csv(std::istream& in, double omega_m);
void write_mode_field_csv(const ModeField& field, std::ostream& out);

/// |u| = u0 and a single uniform strain component on `n` cells of equal volume.
ModeField uniform_mode_field(double volume, int n, double u0, const std::array<double, 6>& strain, double omega_m);
/// Slab of cross-section `area` along x ∈ [-half_width, half_width] sampled with `n`
/// midpoint cells; |u| = exp(-x²/2σ²) and ξ_xx = d|u|/dx.
ModeField gaussian_slab_field(double sigma, double half_width, int n, double area, double omega_m);

double effective_mass(const ModeField& field, double rho);
double zero_point_displacement(double m_eff, double omega_m, double hbar = kHbar);
/// Volume-averaged RMS strain of the six components, scaled by x_zpf / max|u|.
double zero_point_strain(const ModeField& field, double x_zpf);

double elastic_dipole(const MaterialConstants& mat);
double tls_coupling_rate(double gamma_dipole, double xi_zpf, double hbar = kHbar);
/// N = dos_factor · P₀ · V · ħ · δω with δω = max(g_TLS, γ₂) chosen by the caller.
double estimate_tls_count(double p0, double volume, double delta_omega, double hbar = kHbar,
                          double dos_factor = 10.0);

struct TlsSamplingRanges {
  double log10_p0_min = 44.0, log10_p0_max = 46.0;
  double log10_delta0_min = -4.5, log10_delta0_max = -4.0;
};

struct TlsSamples {
  std::vector<double> log10_p0;
  std::vector<double> log10_delta0;
  std::vector<double> gamma_dipole;  ///< J
  std::vector<double> g_tls;         ///< rad/s
  Histogram gamma_histogram;
  Histogram g_tls_histogram;         ///< over g_TLS / 2π in Hz
};

/// Draws P₀ = 10^λ1 and δ⁰ = 10^λ2 with λ uniform on the given ranges and evaluates γ
/// and g_TLS for each draw. `base` supplies ρ, v, ħ and the filling factor.
/// Deterministic in `seed`.
TlsSamples sample_tls_distributions(int n_samples, std::uint64_t seed, double xi_zpf,
                                    const MaterialConstants& base = {}, const TlsSamplingRanges& ranges = {},
                                    int bins = 50);

// ---- mBVD equivalent circuit -------------------------------------------------------

struct BvdCircuit {
  double c0 = 213.5e-18;  ///< F, shunt
  double cm = 51.4e-18;   ///< F, motional
  double lm = 90.9e-6;    ///< H, motional
  double rm = 0.0;        ///< Ω, motional; lossless by default

  void validate() const;
};

struct Admittance {
  std::complex<double> y;
  bool at_pole = false;  ///< lossless series branch exactly at resonance; |y| is infinite
};

/// Y(ω) = iωC₀ + (R_m + iωL_m + 1/(iωC_m))⁻¹. Throws ConfigError unless ω > 0.
Admittance bvd_admittance(double omega, const BvdCircuit& circuit = {});
/// 1 / (2π sqrt(L_m C_m))
double series_resonance_hz(const BvdCircuit& circuit = {});
/// f_s sqrt(1 + C_m / C₀)
double parallel_resonance_hz(const BvdCircuit& circuit = {});

/// CSV `freq_hz,re_Y,im_Y`; rows at a pole carry inf in im_Y.
void write_bvd_sweep_csv(std::span<const double> freqs_hz, const BvdCircuit& circuit, std::ostream& out);

}  // namespace tlsphonon
