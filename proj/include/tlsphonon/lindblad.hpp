// lindblad.hpp — master-equation evolution of a mechanical mode coupled to an ensemble of TLS
//
// Hamiltonian (frame of the TLS):
//   H = delta_tls b†b + Σ_k g_k (a_k† b + b† a_k)
// Collapse operators, per TLS k:
//   sqrt(gamma1 (n_th + 1)) a_k,  sqrt(gamma1 n_th) a_k†,  sqrt(gamma2 / 2) a_k† a_k
// The mechanical mode has no collapse operators of its own.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Sparse>

#include "tlsphonon/hilbert.hpp"
#include "tlsphonon/phonon_distribution.hpp"

namespace tlsphonon {

using SparseCMatrix = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;

/// All rates and frequencies are angular (rad/s).
struct SystemConfig {
  int n_tls = 5;
  double g_tls = 0.0;
  double delta_tls = 0.0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double n_th = 0.0;
  int n_max = 10;
  TlsThermalConvention tls_thermal = TlsThermalConvention::kBoltzmann;

  // Optional per-TLS overrides; empty means every TLS uses the shared value.
  std::vector<double> g_per_tls;
  std::vector<double> gamma1_per_tls;
  std::vector<double> gamma2_per_tls;

  void validate() const;
  HilbertLayout layout() const { return HilbertLayout(n_max, n_tls); }

  double coupling(int k) const;  ///< 1-based TLS index
  double relaxation(int k) const;
  double dephasing(int k) const;

  /// N = 5, g/2π = 33 kHz, Δ/2π = 100 kHz, γ2/2π = 660 kHz, γ1/2π = 4 kHz, n_th = 0.05.
  static SystemConfig weak_coupling_reference(int n_max);
  /// N = 5, g/2π = 0.33 MHz, Δ = 3g, γ2 = 20g, γ1/2π = 4 kHz, n_th = 0.05.
  static SystemConfig strong_coupling_reference(int n_max);
};

SparseCMatrix build_hamiltonian_sparse(const SystemConfig& cfg);
std::vector<SparseCMatrix> build_collapse_ops_sparse(const SystemConfig& cfg);

/// Dense Hermitian H; throws DimensionError through the layout guard.
Operator build_hamiltonian(const SystemConfig& cfg);
/// Three operators per TLS; operators whose coefficient vanishes are omitted.
std::vector<Operator> build_collapse_ops(const SystemConfig& cfg);

/// Evaluates the Lindblad right-hand side by direct products with sparse factors.
/// The generator is split into a non-Hermitian effective Hamiltonian
/// H_eff = H - (i/2) Σ L†L and jump terms L rho L†, so that
///   drho = Y + Y† + Σ L rho L†,  Y = -i H_eff rho.
/// Jump operators with at most one nonzero per row are applied as gathers.
class LindbladGenerator {
 public:
  LindbladGenerator(const SparseCMatrix& hamiltonian, const std::vector<SparseCMatrix>& collapse_ops);
  LindbladGenerator(const Operator& hamiltonian, const std::vector<Operator>& collapse_ops);

  Eigen::Index dim() const { return dim_; }
  void apply(const CMatrix& rho, CMatrix& drho) const;

 private:
  // Nonzero entries (row, source column, value) of a jump operator with at most
  // one nonzero per row. `uniform` holds |v|^2 when every value has the same
  // magnitude and is real, in which case `value` is left empty.
  struct MonomialJump {
    std::vector<std::int32_t> row;
    std::vector<std::int32_t> source;
    std::vector<Complex> value;
    double uniform = 0.0;
  };

  // -i H_eff split into its diagonal and padded off-diagonal layers (ELLPACK):
  // layer l holds at most one entry per row.
  struct Ell {
    Eigen::VectorXcd diagonal;
    std::vector<std::vector<std::int32_t>> column;
    std::vector<std::vector<Complex>> value;
  };

  Eigen::Index dim_ = 0;
  Ell minus_i_heff_;
  std::vector<MonomialJump> monomial_;
  std::vector<SparseCMatrix> general_;
  CMatrix diagonal_weight_;  // Σ over diagonal jumps of v(i) conj(v(j)); empty if none
  mutable CMatrix scratch_;
};

/// -i[H, rho] + Σ_j (L_j rho L_j† - ½{L_j†L_j, rho}). Throws ConfigError on shape mismatch.
CMatrix lindblad_rhs(const CMatrix& rho, const Operator& hamiltonian, const std::vector<Operator>& collapse_ops);

struct BlochVector {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Expectations <σx>, <σy>, <σz> of every TLS, with σ⁻ = |g><e| and σz = |e><e| - |g><g|.
std::vector<BlochVector> tls_bloch_vectors(const HilbertLayout& layout, const CMatrix& rho);

struct EvolveOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  /// Largest admissible raw trace drift at any sample before renormalization.
  double trace_tolerance = 1e-7;
  /// Drift above this is removed by rescaling the state at the sample point.
  double renormalize_threshold = 1e-9;
  bool store_states = false;
  /// Integrate in the frame rotating at delta_tls times the total excitation
  /// number. Exact for the model Hamiltonian; removes the fast phase winding of
  /// high Fock levels. Only used by the SystemConfig overload.
  bool excitation_frame = true;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<double> nbar;
  std::vector<PhononDistribution> pn;
  std::vector<std::vector<BlochVector>> tls_bloch;  // [sample][tls]
  std::vector<CMatrix> mechanics_states;            // reduced mechanical state per sample
  std::vector<DensityMatrix> states;                // filled only with store_states
  std::vector<double> trace_corrections;            // trace drift removed at each sample

  int n_tls = 0;
  int n_max = 0;
  double max_trace_drift = 0.0;
  double max_hermiticity_error = 0.0;
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  std::size_t rhs_evaluations = 0;

  double cumulative_trace_correction() const;
};

/// Integrates from t = 0 and records observables at each of `sample_times`
/// (strictly increasing, within [0, t_final]); integration continues to t_final.
/// Throws NumericalError on step underflow or when trace drift exceeds the tolerance.
Trajectory evolve(const DensityMatrix& rho0, const Operator& hamiltonian, const std::vector<Operator>& collapse_ops,
                  double t_final, std::span<const double> sample_times, const EvolveOptions& opts = {});

Trajectory evolve(const DensityMatrix& rho0, const SystemConfig& cfg, double t_final,
                  std::span<const double> sample_times, const EvolveOptions& opts = {});

/// Trajectory export: `time_s, nbar, p0..p{n_max}, sx_k, sy_k, sz_k` (one triple per TLS).
void write_trajectory_csv(const Trajectory& traj, std::ostream& out);

}  // namespace tlsphonon
