#include "tlsphonon/hilbert.hpp"

#include <bit>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "tlsphonon/errors.hpp"

namespace tlsphonon {

HilbertLayout::HilbertLayout(int n_max, int n_tls) : n_max_(n_max), n_tls_(n_tls) {
  if (n_max < 1) throw ConfigError("HilbertLayout: n_max must be >= 1");
  if (n_tls < 0) throw ConfigError("HilbertLayout: n_tls must be >= 0");
  if (n_tls > 20 || total_dim() > kMaxTotalDim) {
    std::ostringstream msg;
    msg << "HilbertLayout: total dimension (n_max+1)*2^n_tls = " << (n_max + 1) << "*2^" << n_tls
        << " exceeds the dense-storage limit of " << kMaxTotalDim;
    throw DimensionError(msg.str());
  }
}

int HilbertLayout::excitation_number(Eigen::Index i) const {
  return phonon_number(i) + std::popcount(tls_bits(i));
}

double hermiticity_error(const CMatrix& a) {
  if (a.size() == 0) return 0.0;
  return (a - a.adjoint()).cwiseAbs().maxCoeff();
}

Operator::Operator(HilbertLayout layout, CMatrix entries, bool hermitian)
    : layout_(layout), entries_(std::move(entries)), hermitian_(hermitian) {
  const Eigen::Index d = layout_.total_dim();
  if (entries_.rows() != d || entries_.cols() != d)
    throw ConfigError("Operator: matrix shape does not match layout dimension");
  if (hermitian_ && hermiticity_error(entries_) > 1e-12)
    throw ConfigError("Operator: flagged Hermitian but max |A - A^dagger| exceeds 1e-12");
}

Operator Operator::adjoint() const { return Operator(layout_, entries_.adjoint(), hermitian_); }

DensityMatrix::DensityMatrix(HilbertLayout layout, CMatrix entries)
    : layout_(layout), entries_(std::move(entries)) {
  const Eigen::Index d = layout_.total_dim();
  if (entries_.rows() != d || entries_.cols() != d)
    throw ConfigError("DensityMatrix: matrix shape does not match layout dimension");
  if (std::abs(entries_.trace() - Complex(1.0, 0.0)) > kTraceTolerance)
    throw ConfigError("DensityMatrix: trace differs from 1 by more than 1e-9");
  if (hermiticity_error(entries_) > kHermiticityTolerance)
    throw ConfigError("DensityMatrix: not Hermitian within 1e-10");
}

double DensityMatrix::min_eigenvalue() const {
  const CMatrix herm = 0.5 * (entries_ + entries_.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(herm, Eigen::EigenvaluesOnly);
  return solver.eigenvalues()(0);
}

PhononDistribution DensityMatrix::phonon_distribution() const {
  PhononDistribution pn;
  pn.probs.assign(static_cast<std::size_t>(layout_.mech_dim()), 0.0);
  for (Eigen::Index i = 0; i < layout_.total_dim(); ++i)
    pn.probs[static_cast<std::size_t>(layout_.phonon_number(i))] += entries_(i, i).real();
  return pn;
}

double DensityMatrix::mean_phonon_number() const { return phonon_distribution().mean(); }

int required_n_max(double alpha_abs) {
  const double a = std::abs(alpha_abs);
  return static_cast<int>(std::ceil(a * a + 5.0 * a + 4.0 - 1e-12));
}

void check_truncation(const HilbertLayout& layout, double alpha_abs) {
  const int need = required_n_max(alpha_abs);
  if (layout.n_max() < need) {
    std::ostringstream msg;
    msg << "truncation-safety rule n_max >= |alpha|^2 + 5|alpha| + 4 violated for |alpha| = " << alpha_abs
        << ": n_max = " << layout.n_max() << ", minimum n_max = " << need;
    throw TruncationError(msg.str(), need);
  }
}

double tls_excited_population(double n_th, TlsThermalConvention convention) {
  if (!(n_th >= 0.0)) throw ConfigError("thermal occupation n_th must be >= 0");
  switch (convention) {
    case TlsThermalConvention::kBoltzmann:
      return n_th / (1.0 + n_th);
    case TlsThermalConvention::kDetailedBalance:
      return n_th / (1.0 + 2.0 * n_th);
  }
  return 0.0;
}

namespace {

CMatrix embed_mechanics(const HilbertLayout& layout, const CMatrix& mech) {
  const Eigen::Index t = layout.tls_dim();
  CMatrix out = CMatrix::Zero(layout.total_dim(), layout.total_dim());
  for (Eigen::Index n = 0; n < mech.rows(); ++n)
    for (Eigen::Index m = 0; m < mech.cols(); ++m) {
      const Complex v = mech(n, m);
      if (v == Complex(0.0)) continue;
      for (Eigen::Index s = 0; s < t; ++s) out(n * t + s, m * t + s) = v;
    }
  return out;
}

CMatrix mechanics_lowering(int n_max) {
  CMatrix b = CMatrix::Zero(n_max + 1, n_max + 1);
  for (int n = 1; n <= n_max; ++n) b(n - 1, n) = std::sqrt(static_cast<double>(n));
  return b;
}

}  // namespace

Operator identity_op(const HilbertLayout& layout) {
  return Operator(layout, CMatrix::Identity(layout.total_dim(), layout.total_dim()), true);
}

Operator annihilation_op(const HilbertLayout& layout) {
  return Operator(layout, embed_mechanics(layout, mechanics_lowering(layout.n_max())));
}

Operator creation_op(const HilbertLayout& layout) { return annihilation_op(layout).adjoint(); }

Operator number_op(const HilbertLayout& layout) {
  CMatrix n = CMatrix::Zero(layout.total_dim(), layout.total_dim());
  for (Eigen::Index i = 0; i < layout.total_dim(); ++i) n(i, i) = static_cast<double>(layout.phonon_number(i));
  return Operator(layout, std::move(n), true);
}

Operator tls_lowering_op(const HilbertLayout& layout, int k) {
  if (k < 1 || k > layout.n_tls()) {
    std::ostringstream msg;
    msg << "tls_lowering_op: TLS index " << k << " outside 1.." << layout.n_tls();
    throw ConfigError(msg.str());
  }
  const std::uint32_t mask = layout.tls_mask(k);
  CMatrix a = CMatrix::Zero(layout.total_dim(), layout.total_dim());
  for (Eigen::Index i = 0; i < layout.total_dim(); ++i)
    if (layout.tls_bits(i) & mask) a(i - mask, i) = 1.0;
  return Operator(layout, std::move(a));
}

Operator tls_raising_op(const HilbertLayout& layout, int k) { return tls_lowering_op(layout, k).adjoint(); }

CMatrix mechanics_displacement_matrix(int n_max, Complex alpha) {
  const CMatrix b = mechanics_lowering(n_max);
  // Generator G = alpha b† - alpha* b is anti-Hermitian; iG is Hermitian with
  // eigen-decomposition V diag(l) V†, so exp(G) = V diag(exp(-i l)) V†.
  const CMatrix ig = Complex(0.0, 1.0) * (alpha * b.adjoint() - std::conj(alpha) * b);
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(0.5 * (ig + ig.adjoint()));
  const Eigen::VectorXcd phases =
      solver.eigenvalues().unaryExpr([](double l) { return std::exp(Complex(0.0, -l)); });
  return solver.eigenvectors() * phases.asDiagonal() * solver.eigenvectors().adjoint();
}

Operator displacement_operator(const HilbertLayout& layout, Complex alpha) {
  check_truncation(layout, std::abs(alpha));
  if (alpha == Complex(0.0)) return identity_op(layout);
  return Operator(layout, embed_mechanics(layout, mechanics_displacement_matrix(layout.n_max(), alpha)));
}

DensityMatrix thermal_state(const HilbertLayout& layout, double n_th, TlsThermalConvention convention) {
  const double pe = tls_excited_population(n_th, convention);
  std::vector<double> pm(static_cast<std::size_t>(layout.mech_dim()));
  double norm = 0.0;
  for (int n = 0; n <= layout.n_max(); ++n) {
    pm[static_cast<std::size_t>(n)] = std::pow(n_th, n) / std::pow(1.0 + n_th, n + 1);
    norm += pm[static_cast<std::size_t>(n)];
  }
  CMatrix rho = CMatrix::Zero(layout.total_dim(), layout.total_dim());
  for (Eigen::Index i = 0; i < layout.total_dim(); ++i) {
    double p = pm[static_cast<std::size_t>(layout.phonon_number(i))] / norm;
    const int excited = std::popcount(layout.tls_bits(i));
    p *= std::pow(pe, excited) * std::pow(1.0 - pe, layout.n_tls() - excited);
    rho(i, i) = p;
  }
  return DensityMatrix(layout, std::move(rho));
}

DensityMatrix conjugate(const DensityMatrix& rho, const Operator& unitary) {
  if (!(rho.layout() == unitary.layout())) throw ConfigError("conjugate: layout mismatch");
  CMatrix out = unitary.matrix() * rho.matrix() * unitary.matrix().adjoint();
  out = 0.5 * (out + out.adjoint()).eval();
  return DensityMatrix(rho.layout(), std::move(out));
}

CMatrix partial_trace_mechanics(const HilbertLayout& layout, const CMatrix& rho) {
  const Eigen::Index t = layout.tls_dim();
  const Eigen::Index m = layout.mech_dim();
  CMatrix out = CMatrix::Zero(m, m);
  for (Eigen::Index c = 0; c < m; ++c)
    for (Eigen::Index r = 0; r < m; ++r) out(r, c) = rho.block(r * t, c * t, t, t).trace();
  return out;
}

DensityMatrix partial_trace_mechanics(const DensityMatrix& rho) {
  CMatrix reduced = partial_trace_mechanics(rho.layout(), rho.matrix());
  return DensityMatrix(rho.layout().mechanics_only(), std::move(reduced));
}

Eigen::Matrix2cd partial_trace_tls(const HilbertLayout& layout, const CMatrix& rho, int k) {
  if (k < 1 || k > layout.n_tls()) throw ConfigError("partial_trace_tls: TLS index out of range");
  const std::uint32_t mask = layout.tls_mask(k);
  Eigen::Matrix2cd out = Eigen::Matrix2cd::Zero();
  for (Eigen::Index i = 0; i < layout.total_dim(); ++i) {
    if (layout.tls_bits(i) & mask) continue;
    const Eigen::Index j = i + mask;
    out(0, 0) += rho(i, i);
    out(1, 1) += rho(j, j);
    out(0, 1) += rho(i, j);
    out(1, 0) += rho(j, i);
  }
  return out;
}

}  // namespace tlsphonon
