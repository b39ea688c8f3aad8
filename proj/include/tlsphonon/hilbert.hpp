// hilbert.hpp — truncated Fock space of one mechanical mode tensored with N two-level systems
//
// Basis ordering is fixed: mechanics is the most significant factor, followed by
// TLS 1..N. Composite index = n * 2^N + bits, where TLS k occupies bit (N - k) of
// `bits` and a set bit means the TLS is excited.

#pragma once

#include <complex>
#include <cstdint>

#include <Eigen/Dense>

#include "tlsphonon/phonon_distribution.hpp"

namespace tlsphonon {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;

class HilbertLayout {
 public:
  /// Desk-scale guard on the dense composite dimension.
  static constexpr Eigen::Index kMaxTotalDim = 2048;

  HilbertLayout(int n_max, int n_tls);

  int n_max() const { return n_max_; }
  int n_tls() const { return n_tls_; }
  Eigen::Index mech_dim() const { return n_max_ + 1; }
  Eigen::Index tls_dim() const { return Eigen::Index{1} << n_tls_; }
  Eigen::Index total_dim() const { return mech_dim() * tls_dim(); }

  Eigen::Index index(int n, std::uint32_t tls_bits) const { return n * tls_dim() + tls_bits; }
  int phonon_number(Eigen::Index i) const { return static_cast<int>(i / tls_dim()); }
  std::uint32_t tls_bits(Eigen::Index i) const { return static_cast<std::uint32_t>(i % tls_dim()); }
  /// Bit mask selecting TLS k (1-based) inside `tls_bits`.
  std::uint32_t tls_mask(int k) const { return std::uint32_t{1} << (n_tls_ - k); }

  /// Total excitation number b†b + Σ a_k†a_k of basis state i.
  int excitation_number(Eigen::Index i) const;

  /// Mechanics-only layout with the same truncation.
  HilbertLayout mechanics_only() const { return HilbertLayout(n_max_, 0); }

  bool operator==(const HilbertLayout&) const = default;

 private:
  int n_max_;
  int n_tls_;
};

/// Dense operator on a composite space. Immutable after construction.
class Operator {
 public:
  /// Throws ConfigError on a shape mismatch, or when `hermitian` is requested and
  /// max |A - A†| exceeds 1e-12.
  Operator(HilbertLayout layout, CMatrix entries, bool hermitian = false);

  const HilbertLayout& layout() const { return layout_; }
  const CMatrix& matrix() const { return entries_; }
  bool is_hermitian() const { return hermitian_; }

  Operator adjoint() const;

 private:
  HilbertLayout layout_;
  CMatrix entries_;
  bool hermitian_;
};

/// Largest entry of |A - A†|.
double hermiticity_error(const CMatrix& a);

class DensityMatrix {
 public:
  static constexpr double kTraceTolerance = 1e-9;
  static constexpr double kHermiticityTolerance = 1e-10;

  /// Validates unit trace and Hermiticity; throws ConfigError.
  DensityMatrix(HilbertLayout layout, CMatrix entries);

  const HilbertLayout& layout() const { return layout_; }
  const CMatrix& matrix() const { return entries_; }

  double trace() const { return entries_.trace().real(); }
  /// Smallest eigenvalue. O(d^3); meant for validation paths.
  double min_eigenvalue() const;

  /// Occupation probabilities of the mechanical mode.
  PhononDistribution phonon_distribution() const;
  double mean_phonon_number() const;

 private:
  HilbertLayout layout_;
  CMatrix entries_;
};

/// Truncation-safety rule n_max >= |alpha|^2 + 5|alpha| + 4 (Poisson mean plus five
/// standard deviations). Returns the smallest admissible n_max.
int required_n_max(double alpha_abs);
/// Throws TruncationError naming the minimum n_max when the rule fails.
void check_truncation(const HilbertLayout& layout, double alpha_abs);

/// Selects the excited-state population given to each TLS in a thermal state.
enum class TlsThermalConvention {
  kBoltzmann,       ///< p_e = n_th / (1 + n_th)
  kDetailedBalance  ///< p_e = n_th / (1 + 2 n_th), the steady state of the TLS collapse operators
};

double tls_excited_population(double n_th, TlsThermalConvention convention);

Operator identity_op(const HilbertLayout& layout);
/// b ⊗ I_TLS with <n-1|b|n> = sqrt(n).
Operator annihilation_op(const HilbertLayout& layout);
Operator creation_op(const HilbertLayout& layout);
Operator number_op(const HilbertLayout& layout);
/// σ⁻ on TLS k (1-based), identity elsewhere.
Operator tls_lowering_op(const HilbertLayout& layout, int k);
Operator tls_raising_op(const HilbertLayout& layout, int k);

/// exp(alpha b† - alpha* b) ⊗ I_TLS. Throws TruncationError when the layout violates
/// the truncation-safety rule for |alpha|.
Operator displacement_operator(const HilbertLayout& layout, Complex alpha);
/// Same exponential on the mechanics factor only, without the truncation check.
CMatrix mechanics_displacement_matrix(int n_max, Complex alpha);

/// Product of a truncated, renormalized bosonic thermal state with occupation n_th
/// and TLS thermal states populated per `convention`.
DensityMatrix thermal_state(const HilbertLayout& layout, double n_th,
                            TlsThermalConvention convention = TlsThermalConvention::kBoltzmann);

/// U rho U† for a unitary U on the same layout.
DensityMatrix conjugate(const DensityMatrix& rho, const Operator& unitary);

/// Reduced state of the mechanical mode (layout n_tls = 0).
DensityMatrix partial_trace_mechanics(const DensityMatrix& rho);
CMatrix partial_trace_mechanics(const HilbertLayout& layout, const CMatrix& rho);

/// Reduced 2x2 state of TLS k.
Eigen::Matrix2cd partial_trace_tls(const HilbertLayout& layout, const CMatrix& rho, int k);

}  // namespace tlsphonon
