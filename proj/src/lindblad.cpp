#include "tlsphonon/lindblad.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "tlsphonon/dopri5.hpp"
#include "tlsphonon/errors.hpp"
#include "tlsphonon/numfmt.hpp"

namespace tlsphonon {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

using Triplet = Eigen::Triplet<Complex>;

SparseCMatrix from_triplets(Eigen::Index d, const std::vector<Triplet>& triplets) {
  SparseCMatrix m(d, d);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

SparseCMatrix to_sparse(const CMatrix& dense) {
  SparseCMatrix m = dense.sparseView(Complex(0.0), 0.0);
  m.makeCompressed();
  return m;
}

void check_per_tls(const std::vector<double>& v, int n_tls, const char* name) {
  if (!v.empty() && static_cast<int>(v.size()) != n_tls) {
    std::ostringstream msg;
    msg << "SystemConfig: " << name << " must be empty or have n_tls entries";
    throw ConfigError(msg.str());
  }
  for (double x : v)
    if (!(x >= 0.0)) throw ConfigError(std::string("SystemConfig: ") + name + " entries must be >= 0");
}

}  // namespace

void SystemConfig::validate() const {
  if (n_tls < 0) throw ConfigError("SystemConfig: n_tls must be >= 0");
  if (n_max < 1) throw ConfigError("SystemConfig: n_max must be >= 1");
  if (!(g_tls >= 0.0) || !(gamma1 >= 0.0) || !(gamma2 >= 0.0))
    throw ConfigError("SystemConfig: rates must be >= 0");
  if (!std::isfinite(delta_tls)) throw ConfigError("SystemConfig: delta_tls must be finite");
  if (!(n_th >= 0.0)) throw ConfigError("SystemConfig: n_th must be >= 0");
  check_per_tls(g_per_tls, n_tls, "g_per_tls");
  check_per_tls(gamma1_per_tls, n_tls, "gamma1_per_tls");
  check_per_tls(gamma2_per_tls, n_tls, "gamma2_per_tls");
  (void)layout();
}

double SystemConfig::coupling(int k) const {
  return g_per_tls.empty() ? g_tls : g_per_tls.at(static_cast<std::size_t>(k - 1));
}
double SystemConfig::relaxation(int k) const {
  return gamma1_per_tls.empty() ? gamma1 : gamma1_per_tls.at(static_cast<std::size_t>(k - 1));
}
double SystemConfig::dephasing(int k) const {
  return gamma2_per_tls.empty() ? gamma2 : gamma2_per_tls.at(static_cast<std::size_t>(k - 1));
}

SystemConfig SystemConfig::weak_coupling_reference(int n_max) {
  SystemConfig cfg;
  cfg.n_tls = 5;
  cfg.g_tls = kTwoPi * 33e3;
  cfg.delta_tls = kTwoPi * 100e3;
  cfg.gamma2 = kTwoPi * 660e3;
  cfg.gamma1 = kTwoPi * 4.0e3;
  cfg.n_th = 0.05;
  cfg.n_max = n_max;
  return cfg;
}

SystemConfig SystemConfig::strong_coupling_reference(int n_max) {
  SystemConfig cfg;
  cfg.n_tls = 5;
  cfg.g_tls = kTwoPi * 0.33e6;
  cfg.delta_tls = 3.0 * cfg.g_tls;
  cfg.gamma2 = 20.0 * cfg.g_tls;
  cfg.gamma1 = kTwoPi * 4.0e3;
  cfg.n_th = 0.05;
  cfg.n_max = n_max;
  return cfg;
}

SparseCMatrix build_hamiltonian_sparse(const SystemConfig& cfg) {
  cfg.validate();
  const HilbertLayout layout = cfg.layout();
  const Eigen::Index d = layout.total_dim();
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(d * (1 + cfg.n_tls)));
  for (Eigen::Index i = 0; i < d; ++i) {
    const int n = layout.phonon_number(i);
    if (n > 0 && cfg.delta_tls != 0.0) t.emplace_back(i, i, cfg.delta_tls * n);
  }
  for (int k = 1; k <= cfg.n_tls; ++k) {
    const double g = cfg.coupling(k);
    if (g == 0.0) continue;
    const std::uint32_t mask = layout.tls_mask(k);
    for (Eigen::Index i = 0; i < d; ++i) {
      const int n = layout.phonon_number(i);
      const std::uint32_t bits = layout.tls_bits(i);
      if (n == 0 || (bits & mask)) continue;
      // a_k† b |n, g_k> = sqrt(n) |n-1, e_k>
      const Eigen::Index j = layout.index(n - 1, bits | mask);
      const double v = g * std::sqrt(static_cast<double>(n));
      t.emplace_back(j, i, v);
      t.emplace_back(i, j, v);
    }
  }
  return from_triplets(d, t);
}

std::vector<SparseCMatrix> build_collapse_ops_sparse(const SystemConfig& cfg) {
  cfg.validate();
  const HilbertLayout layout = cfg.layout();
  const Eigen::Index d = layout.total_dim();
  std::vector<SparseCMatrix> ops;
  for (int k = 1; k <= cfg.n_tls; ++k) {
    const std::uint32_t mask = layout.tls_mask(k);
    const double emission = std::sqrt(cfg.relaxation(k) * (cfg.n_th + 1.0));
    const double absorption = std::sqrt(cfg.relaxation(k) * cfg.n_th);
    const double dephasing = std::sqrt(cfg.dephasing(k) / 2.0);
    std::vector<Triplet> lower, raise, number;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (!(layout.tls_bits(i) & mask)) continue;
      lower.emplace_back(i - mask, i, emission);
      raise.emplace_back(i, i - mask, absorption);
      number.emplace_back(i, i, dephasing);
    }
    if (emission > 0.0) ops.push_back(from_triplets(d, lower));
    if (absorption > 0.0) ops.push_back(from_triplets(d, raise));
    if (dephasing > 0.0) ops.push_back(from_triplets(d, number));
  }
  return ops;
}

Operator build_hamiltonian(const SystemConfig& cfg) {
  const CMatrix dense(build_hamiltonian_sparse(cfg));
  return Operator(cfg.layout(), dense, true);
}

std::vector<Operator> build_collapse_ops(const SystemConfig& cfg) {
  std::vector<Operator> out;
  for (const SparseCMatrix& l : build_collapse_ops_sparse(cfg)) out.emplace_back(cfg.layout(), CMatrix(l));
  return out;
}

LindbladGenerator::LindbladGenerator(const SparseCMatrix& hamiltonian, const std::vector<SparseCMatrix>& collapse_ops)
    : dim_(hamiltonian.rows()) {
  if (hamiltonian.cols() != dim_) throw ConfigError("LindbladGenerator: Hamiltonian is not square");
  SparseCMatrix heff = hamiltonian;
  for (const SparseCMatrix& l : collapse_ops) {
    if (l.rows() != dim_ || l.cols() != dim_)
      throw ConfigError("LindbladGenerator: collapse operator shape mismatch");
    const SparseCMatrix ldl = SparseCMatrix(l.adjoint()) * l;
    heff -= Complex(0.0, 0.5) * ldl;

    bool monomial = true;
    bool diagonal = true;
    for (Eigen::Index r = 0; r < dim_ && monomial; ++r) {
      int count = 0;
      for (SparseCMatrix::InnerIterator it(l, r); it; ++it) {
        if (it.value() == Complex(0.0)) continue;
        ++count;
        if (it.col() != r) diagonal = false;
      }
      if (count > 1) monomial = false;
    }
    if (monomial && diagonal) {
      if (diagonal_weight_.size() == 0) diagonal_weight_ = CMatrix::Zero(dim_, dim_);
      Eigen::VectorXcd v = Eigen::VectorXcd::Zero(dim_);
      for (Eigen::Index r = 0; r < dim_; ++r)
        for (SparseCMatrix::InnerIterator it(l, r); it; ++it) v(r) = it.value();
      diagonal_weight_ += v * v.adjoint();
    } else if (monomial) {
      MonomialJump jump;
      bool uniform = true;
      Complex first(0.0);
      for (Eigen::Index r = 0; r < dim_; ++r)
        for (SparseCMatrix::InnerIterator it(l, r); it; ++it) {
          if (it.value() == Complex(0.0)) continue;
          if (jump.value.empty()) first = it.value();
          if (it.value() != first || first.imag() != 0.0) uniform = false;
          jump.row.push_back(static_cast<std::int32_t>(r));
          jump.source.push_back(static_cast<std::int32_t>(it.col()));
          jump.value.push_back(it.value());
        }
      if (uniform) {
        jump.uniform = std::norm(first);
        jump.value.clear();
      }
      monomial_.push_back(std::move(jump));
    } else {
      general_.push_back(l);
    }
  }
  SparseCMatrix g = Complex(0.0, -1.0) * heff;
  g.prune(Complex(0.0), 0.0);
  g.makeCompressed();
  minus_i_heff_.diagonal = Eigen::VectorXcd::Zero(dim_);
  for (Eigen::Index r = 0; r < dim_; ++r) {
    std::size_t layer = 0;
    for (SparseCMatrix::InnerIterator it(g, r); it; ++it) {
      if (it.col() == r) {
        minus_i_heff_.diagonal(r) = it.value();
        continue;
      }
      if (layer == minus_i_heff_.column.size()) {
        minus_i_heff_.column.emplace_back(static_cast<std::size_t>(dim_));
        minus_i_heff_.value.emplace_back(static_cast<std::size_t>(dim_), Complex(0.0));
        auto& col = minus_i_heff_.column.back();
        for (Eigen::Index i = 0; i < dim_; ++i) col[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
      }
      minus_i_heff_.column[layer][static_cast<std::size_t>(r)] = static_cast<std::int32_t>(it.col());
      minus_i_heff_.value[layer][static_cast<std::size_t>(r)] = it.value();
      ++layer;
    }
  }
}

namespace {

SparseCMatrix sparse_of(const Operator& op) { return to_sparse(op.matrix()); }

std::vector<SparseCMatrix> sparse_of(const std::vector<Operator>& ops) {
  std::vector<SparseCMatrix> out;
  out.reserve(ops.size());
  for (const Operator& op : ops) out.push_back(sparse_of(op));
  return out;
}

}  // namespace

LindbladGenerator::LindbladGenerator(const Operator& hamiltonian, const std::vector<Operator>& collapse_ops)
    : LindbladGenerator(sparse_of(hamiltonian), sparse_of(collapse_ops)) {
  for (const Operator& l : collapse_ops)
    if (!(l.layout() == hamiltonian.layout()))
      throw ConfigError("LindbladGenerator: collapse operator layout differs from Hamiltonian layout");
}

void LindbladGenerator::apply(const CMatrix& rho, CMatrix& drho) const {
  if (rho.rows() != dim_ || rho.cols() != dim_) throw ConfigError("LindbladGenerator::apply: shape mismatch");
  const Eigen::Index d = dim_;
  scratch_.resize(d, d);
  drho.resize(d, d);

  // Y = -i H_eff rho, a few columns at a time so each layer stays cached.
  constexpr Eigen::Index kColumnBlock = 4;
  const Complex* diag = minus_i_heff_.diagonal.data();
  for (Eigen::Index jb = 0; jb < d; jb += kColumnBlock) {
    const Eigen::Index je = std::min(jb + kColumnBlock, d);
    for (Eigen::Index j = jb; j < je; ++j) {
      const Complex* in = rho.col(j).data();
      Complex* out = scratch_.col(j).data();
      for (Eigen::Index i = 0; i < d; ++i) out[i] = diag[i] * in[i];
    }
    for (std::size_t l = 0; l < minus_i_heff_.column.size(); ++l) {
      const std::int32_t* col = minus_i_heff_.column[l].data();
      const Complex* val = minus_i_heff_.value[l].data();
      for (Eigen::Index j = jb; j < je; ++j) {
        const Complex* in = rho.col(j).data();
        Complex* out = scratch_.col(j).data();
        for (Eigen::Index i = 0; i < d; ++i) out[i] += val[i] * in[col[i]];
      }
    }
  }

  // drho = Y + Y†, assembled in tiles so the transposed reads stay in cache.
  constexpr Eigen::Index kTile = 32;
  for (Eigen::Index jb = 0; jb < d; jb += kTile) {
    const Eigen::Index je = std::min(jb + kTile, d);
    for (Eigen::Index ib = jb; ib < d; ib += kTile) {
      const Eigen::Index ie = std::min(ib + kTile, d);
      for (Eigen::Index j = jb; j < je; ++j)
        for (Eigen::Index i = std::max(ib, j); i < ie; ++i) {
          const Complex s = scratch_(i, j) + std::conj(scratch_(j, i));
          drho(i, j) = s;
          drho(j, i) = std::conj(s);
        }
    }
  }

  if (diagonal_weight_.size() != 0) drho += diagonal_weight_.cwiseProduct(rho);

  for (const MonomialJump& jump : monomial_) {
    // (L rho L†)(r_i, r_j) = v_i conj(v_j) rho(s_i, s_j)
    const std::size_t ne = jump.row.size();
    const std::int32_t* rows = jump.row.data();
    const std::int32_t* src = jump.source.data();
    if (jump.value.empty()) {
      const double w = jump.uniform;
      for (std::size_t ej = 0; ej < ne; ++ej) {
        const Complex* in = rho.col(src[ej]).data();
        Complex* out = drho.col(rows[ej]).data();
        for (std::size_t ei = 0; ei < ne; ++ei) out[rows[ei]] += w * in[src[ei]];
      }
    } else {
      const Complex* v = jump.value.data();
      for (std::size_t ej = 0; ej < ne; ++ej) {
        const Complex vj = std::conj(v[ej]);
        const Complex* in = rho.col(src[ej]).data();
        Complex* out = drho.col(rows[ej]).data();
        for (std::size_t ei = 0; ei < ne; ++ei) out[rows[ei]] += v[ei] * vj * in[src[ei]];
      }
    }
  }
  for (const SparseCMatrix& l : general_) {
    const CMatrix z = l * rho;
    const CMatrix w = l * z.adjoint();
    drho += w.adjoint();
  }
}

CMatrix lindblad_rhs(const CMatrix& rho, const Operator& hamiltonian, const std::vector<Operator>& collapse_ops) {
  const Eigen::Index d = hamiltonian.layout().total_dim();
  if (rho.rows() != d || rho.cols() != d) throw ConfigError("lindblad_rhs: rho shape does not match Hamiltonian");
  LindbladGenerator gen(hamiltonian, collapse_ops);
  CMatrix out;
  gen.apply(rho, out);
  return out;
}

std::vector<BlochVector> tls_bloch_vectors(const HilbertLayout& layout, const CMatrix& rho) {
  std::vector<BlochVector> out;
  out.reserve(static_cast<std::size_t>(layout.n_tls()));
  for (int k = 1; k <= layout.n_tls(); ++k) {
    const Eigen::Matrix2cd r = partial_trace_tls(layout, rho, k);
    // <σ⁻> = rho_eg
    const Complex lower = r(1, 0);
    out.push_back({2.0 * lower.real(), -2.0 * lower.imag(), (r(1, 1) - r(0, 0)).real()});
  }
  return out;
}

double Trajectory::cumulative_trace_correction() const {
  double s = 0.0;
  for (double c : trace_corrections) s += std::abs(c);
  return s;
}

namespace {

Trajectory evolve_core(const DensityMatrix& rho0, const LindbladGenerator& gen, double frame_omega, double t_final,
                       std::span<const double> sample_times, const EvolveOptions& opts) {
  const HilbertLayout layout = rho0.layout();
  if (gen.dim() != layout.total_dim()) throw ConfigError("evolve: generator dimension does not match state");
  if (!(t_final >= 0.0)) throw ConfigError("evolve: t_final must be >= 0");
  for (std::size_t i = 0; i < sample_times.size(); ++i) {
    if (sample_times[i] < 0.0 || sample_times[i] > t_final)
      throw ConfigError("evolve: sample times must lie within [0, t_final]");
    if (i > 0 && !(sample_times[i] > sample_times[i - 1]))
      throw ConfigError("evolve: sample times must be strictly increasing");
  }
  if (!(opts.rtol > 0.0) || !(opts.atol > 0.0)) throw ConfigError("evolve: tolerances must be positive");

  std::vector<double> stops(sample_times.begin(), sample_times.end());
  if (stops.empty() || stops.back() < t_final) stops.push_back(t_final);
  const std::size_t n_samples = sample_times.size();

  Eigen::VectorXd excitation(layout.total_dim());
  for (Eigen::Index i = 0; i < layout.total_dim(); ++i) excitation(i) = layout.excitation_number(i);

  Trajectory traj;
  traj.n_tls = layout.n_tls();
  traj.n_max = layout.n_max();
  traj.times.reserve(n_samples);

  CMatrix lab;
  auto observe = [&](std::size_t idx, double t, CMatrix& y) -> bool {
    const double tr = y.trace().real();
    const double drift = tr - 1.0;
    traj.max_trace_drift = std::max(traj.max_trace_drift, std::abs(drift));
    if (std::abs(drift) > opts.trace_tolerance) {
      std::ostringstream msg;
      msg << "evolve: trace drift " << drift << " at t = " << t << " exceeds tolerance " << opts.trace_tolerance;
      throw NumericalError(msg.str());
    }
    bool modified = false;
    double correction = 0.0;
    if (std::abs(drift) > opts.renormalize_threshold) {
      y /= tr;
      correction = drift;
      modified = true;
    }
    if (idx >= n_samples) return modified;

    if (frame_omega != 0.0) {
      const Eigen::VectorXcd u = (excitation * (-frame_omega * t)).unaryExpr([](double ph) {
        return std::polar(1.0, ph);
      });
      lab = u.asDiagonal() * y * u.conjugate().asDiagonal();
    } else {
      lab = y;
    }
    traj.times.push_back(t);
    traj.trace_corrections.push_back(correction);
    traj.max_hermiticity_error = std::max(traj.max_hermiticity_error, hermiticity_error(lab));

    PhononDistribution pn;
    pn.probs.assign(static_cast<std::size_t>(layout.mech_dim()), 0.0);
    for (Eigen::Index i = 0; i < layout.total_dim(); ++i)
      pn.probs[static_cast<std::size_t>(layout.phonon_number(i))] += lab(i, i).real();
    traj.nbar.push_back(pn.mean());
    traj.pn.push_back(std::move(pn));
    traj.tls_bloch.push_back(tls_bloch_vectors(layout, lab));
    traj.mechanics_states.push_back(partial_trace_mechanics(layout, lab));
    if (opts.store_states) traj.states.emplace_back(layout, lab);
    return modified;
  };

  CMatrix y = rho0.matrix();
  StepControl ctl;
  ctl.rtol = opts.rtol;
  ctl.atol = opts.atol;
  auto rhs = [&gen](double, const CMatrix& state, CMatrix& out) { gen.apply(state, out); };
  const IntegrationStats stats = integrate_dopri5(rhs, y, 0.0, std::span<const double>(stops), observe, ctl);
  traj.accepted_steps = stats.accepted;
  traj.rejected_steps = stats.rejected;
  traj.rhs_evaluations = stats.rhs_evaluations;
  return traj;
}

}  // namespace

Trajectory evolve(const DensityMatrix& rho0, const Operator& hamiltonian, const std::vector<Operator>& collapse_ops,
                  double t_final, std::span<const double> sample_times, const EvolveOptions& opts) {
  if (!(rho0.layout() == hamiltonian.layout())) throw ConfigError("evolve: state and Hamiltonian layouts differ");
  const LindbladGenerator gen(hamiltonian, collapse_ops);
  return evolve_core(rho0, gen, 0.0, t_final, sample_times, opts);
}

Trajectory evolve(const DensityMatrix& rho0, const SystemConfig& cfg, double t_final,
                  std::span<const double> sample_times, const EvolveOptions& opts) {
  cfg.validate();
  if (!(rho0.layout() == cfg.layout())) throw ConfigError("evolve: state layout does not match SystemConfig");
  SparseCMatrix h = build_hamiltonian_sparse(cfg);
  double frame = 0.0;
  if (opts.excitation_frame && cfg.delta_tls != 0.0) {
    // H commutes with the total excitation number and every collapse operator shifts
    // it by a fixed amount, so removing delta_tls * N_exc only adds phases.
    frame = cfg.delta_tls;
    const HilbertLayout layout = cfg.layout();
    SparseCMatrix shift(layout.total_dim(), layout.total_dim());
    std::vector<Triplet> t;
    for (Eigen::Index i = 0; i < layout.total_dim(); ++i) t.emplace_back(i, i, frame * layout.excitation_number(i));
    shift.setFromTriplets(t.begin(), t.end());
    h = SparseCMatrix(h - shift);
  }
  const LindbladGenerator gen(h, build_collapse_ops_sparse(cfg));
  return evolve_core(rho0, gen, frame, t_final, sample_times, opts);
}

void write_trajectory_csv(const Trajectory& traj, std::ostream& out) {
  out << "time_s,nbar";
  for (int n = 0; n <= traj.n_max; ++n) out << ",p" << n;
  for (int k = 1; k <= traj.n_tls; ++k) out << ",sx_" << k << ",sy_" << k << ",sz_" << k;
  out << '\n';
  for (std::size_t s = 0; s < traj.times.size(); ++s) {
    out << format_double(traj.times[s]) << ',' << format_double(traj.nbar[s]);
    for (double p : traj.pn[s].probs) out << ',' << format_double(p);
    for (const BlochVector& b : traj.tls_bloch[s])
      out << ',' << format_double(b.x) << ',' << format_double(b.y) << ',' << format_double(b.z);
    out << '\n';
  }
}

}  // namespace tlsphonon
