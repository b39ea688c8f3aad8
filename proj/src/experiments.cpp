#include "tlsphonon/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "tlsphonon/errors.hpp"
#include "tlsphonon/numfmt.hpp"

namespace tlsphonon {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double final_time(std::span<const double> taus) {
  if (taus.empty()) throw ConfigError("experiment: need at least one delay");
  for (double t : taus)
    if (!(t >= 0.0) || !std::isfinite(t)) throw ConfigError("experiment: delays must be finite and >= 0");
  return *std::max_element(taus.begin(), taus.end());
}

void check_phases(std::span<const double> phis) {
  if (phis.size() < 3) throw ConfigError("interferometry: need at least three phases for a fringe fit");
  for (std::size_t i = 0; i < phis.size(); ++i) {
    if (!(phis[i] >= 0.0 && phis[i] < kTwoPi)) throw ConfigError("interferometry: phases must lie in [0, 2pi)");
    if (i > 0 && !(phis[i] > phis[i - 1])) throw ConfigError("interferometry: phases must be strictly increasing");
  }
}

InterferometryDataset fringes_from(const Trajectory& traj, Complex alpha, std::span<const double> taus,
                                   std::span<const double> phis) {
  InterferometryDataset data;
  data.alpha = alpha;
  data.taus.assign(taus.begin(), taus.end());
  data.phis.assign(phis.begin(), phis.end());
  data.pulse_n_max = std::max(traj.n_max, required_n_max(2.0 * std::abs(alpha)));
  data.nbar_grid.resize(static_cast<Eigen::Index>(taus.size()), static_cast<Eigen::Index>(phis.size()));
  for (std::size_t i = 0; i < taus.size(); ++i)
    for (std::size_t j = 0; j < phis.size(); ++j)
      data.nbar_grid(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          displaced_mean_phonon(traj.mechanics_states[i], alpha * std::polar(1.0, phis[j]), data.pulse_n_max);
  return data;
}

}  // namespace

void RingdownDataset::validate() const {
  if (nbar.size() != taus.size() || pn.size() != taus.size())
    throw ConfigError("RingdownDataset: sequence lengths differ");
  for (std::size_t i = 0; i < taus.size(); ++i)
    if (std::abs(pn[i].mean() - nbar[i]) > 1e-10) throw ConfigError("RingdownDataset: nbar disagrees with P(n)");
}

void InterferometryDataset::validate() const {
  check_phases(phis);
  if (nbar_grid.rows() != static_cast<Eigen::Index>(taus.size()) ||
      nbar_grid.cols() != static_cast<Eigen::Index>(phis.size()))
    throw ConfigError("InterferometryDataset: grid shape does not match delays x phases");
}

DensityMatrix displaced_thermal_state(const SystemConfig& cfg, Complex alpha0) {
  cfg.validate();
  const HilbertLayout layout = cfg.layout();
  const DensityMatrix thermal = thermal_state(layout, cfg.n_th, cfg.tls_thermal);
  if (alpha0 == Complex(0.0)) return thermal;
  return conjugate(thermal, displacement_operator(layout, alpha0));
}

RingdownDataset run_ringdown(const SystemConfig& cfg, Complex alpha0, std::span<const double> taus,
                             const EvolveOptions& opts) {
  const double t_final = final_time(taus);
  const DensityMatrix rho0 = displaced_thermal_state(cfg, alpha0);
  RingdownDataset data;
  data.alpha0 = alpha0;
  data.taus.assign(taus.begin(), taus.end());
  data.trajectory = evolve(rho0, cfg, t_final, taus, opts);
  data.nbar = data.trajectory.nbar;
  data.pn = data.trajectory.pn;
  return data;
}

std::vector<double> default_phase_grid(int count) {
  if (count < 3) throw ConfigError("default_phase_grid: need at least three phases");
  std::vector<double> phis(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) phis[static_cast<std::size_t>(i)] = kTwoPi * i / count;
  return phis;
}

InterferometryDataset run_interferometry(const SystemConfig& cfg, Complex alpha, std::span<const double> taus,
                                         std::span<const double> phis, const EvolveOptions& opts) {
  check_phases(phis);
  const double t_final = final_time(taus);
  const DensityMatrix rho0 = displaced_thermal_state(cfg, alpha);
  const Trajectory traj = evolve(rho0, cfg, t_final, taus, opts);
  return fringes_from(traj, alpha, taus, phis);
}

InterferometryDataset run_interferometry(const DensityMatrix& rho0, const Operator& hamiltonian,
                                         const std::vector<Operator>& collapse_ops, Complex alpha,
                                         std::span<const double> taus, std::span<const double> phis,
                                         const EvolveOptions& opts) {
  check_phases(phis);
  const double t_final = final_time(taus);
  const DensityMatrix start =
      alpha == Complex(0.0) ? rho0 : conjugate(rho0, displacement_operator(rho0.layout(), alpha));
  const Trajectory traj = evolve(start, hamiltonian, collapse_ops, t_final, taus, opts);
  return fringes_from(traj, alpha, taus, phis);
}

Operator mechanical_dephasing_operator(const HilbertLayout& layout, double t2m) {
  if (!(t2m > 0.0) || !std::isfinite(t2m)) throw ConfigError("mechanical_dephasing_operator: T2m must be > 0");
  return Operator(layout, std::sqrt(2.0 / t2m) * number_op(layout).matrix(), true);
}

double displaced_mean_phonon(const CMatrix& mech_rho, Complex beta, int pulse_n_max) {
  const Eigen::Index m = mech_rho.rows();
  if (mech_rho.cols() != m || m < 1) throw ConfigError("displaced_mean_phonon: state must be square");
  if (pulse_n_max + 1 < m) throw ConfigError("displaced_mean_phonon: pulse space smaller than the state space");
  const Eigen::Index p = pulse_n_max + 1;
  const CMatrix d = mechanics_displacement_matrix(pulse_n_max, beta);
  // Only the first m columns of D touch the embedded state.
  const CMatrix dl = d.leftCols(m);
  const CMatrix out = dl * mech_rho * dl.adjoint();
  double nbar = 0.0;
  for (Eigen::Index n = 1; n < p; ++n) nbar += static_cast<double>(n) * out(n, n).real();
  return nbar;
}

DephasingAnalysis analyze_dephasing(const InterferometryDataset& data, const LmOptions& opts) {
  data.validate();
  DephasingAnalysis out;
  for (Eigen::Index i = 0; i < data.nbar_grid.rows(); ++i) {
    const Eigen::VectorXd row = data.nbar_grid.row(i).transpose();
    FitResult f = fit_interference(data.phis, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                                   opts);
    const double c = f.value("C");
    out.amplitudes.push_back(c);
    out.amplitude_errors.push_back(f.standard_error("C"));
    out.offsets.push_back(f.value("nbar_off"));
    if (c > 0.0) {
      const double rms = f.residual_norm / std::sqrt(static_cast<double>(row.size()));
      out.max_fringe_residual = std::max(out.max_fringe_residual, rms / c);
    }
    out.fringes.push_back(std::move(f));
  }
  out.envelope = fit_t2m(data.taus, out.amplitudes, opts);
  out.gamma_2m = out.envelope.value("gamma_2m");
  out.t2m = out.envelope.value("T2m");
  return out;
}

void write_ringdown_csv(const RingdownDataset& data, std::ostream& out) {
  const std::size_t levels = data.pn.empty() ? 0 : data.pn.front().size();
  out << "tau_s,nbar";
  for (std::size_t n = 0; n < levels; ++n) out << ",p" << n;
  out << '\n';
  for (std::size_t i = 0; i < data.taus.size(); ++i) {
    out << format_double(data.taus[i]) << ',' << format_double(data.nbar[i]);
    for (double p : data.pn[i].probs) out << ',' << format_double(p);
    out << '\n';
  }
}

void write_interferometry_csv(const InterferometryDataset& data, std::ostream& out) {
  out << "tau_s,phi_rad,nbar\n";
  for (std::size_t i = 0; i < data.taus.size(); ++i)
    for (std::size_t j = 0; j < data.phis.size(); ++j)
      out << format_double(data.taus[i]) << ',' << format_double(data.phis[j]) << ','
          << format_double(data.nbar_grid(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
}

}  // namespace tlsphonon
